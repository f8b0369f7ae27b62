"""Box localization as per-side interval classification plus fine regression.

Each side of a candidate box gets a line segment perpendicular to it,
centered on the side's coordinate and ``segment_scale`` times the box
extent along that axis long. The segment is split evenly into
``num_intervals`` consecutive intervals. Localizing a side then means
classifying which interval the target coordinate falls in and regressing
a fine offset from that interval's center, normalized by the interval
width. The mean over the four sides of the sigmoid of the best interval
logit serves as a localization quality score in [0, 1].

Sides are indexed in the fixed order ``(left, right, top, bottom)``,
i.e. the coordinates ``(x1, x2, y1, y2)``. Interval indices are 0-based.
All functions are pure; the batched variants operate on leading axes of
plain numpy arrays and are exact vectorizations of the scalar ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box

__all__ = [
    "SIDES",
    "IntervalGrid",
    "IntervalTargets",
    "IntervalPrediction",
    "build_grid",
    "encode",
    "decode",
    "quality",
    "perfect_prediction",
    "sigmoid",
    "grid_arrays",
    "encode_batch",
    "decode_batch",
    "quality_batch",
]

SIDES = ("left", "right", "top", "bottom")


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True, slots=True)
class IntervalGrid:
    """Per-side interval layout derived from a candidate box.

    ``starts[s]`` is the segment start coordinate for side ``s`` and
    ``widths[s]`` the interval width; the segment for side ``s`` covers
    ``[starts[s], starts[s] + num_intervals * widths[s]]``.
    """

    candidate: Box
    num_intervals: int
    segment_scale: float
    starts: np.ndarray
    widths: np.ndarray

    def center(self, side: int, k: int) -> float:
        """Center coordinate of interval ``k`` (0-based) on ``side``."""
        return float(self.starts[side] + (k + 0.5) * self.widths[side])

    def centers(self, side: int) -> np.ndarray:
        ks = np.arange(self.num_intervals, dtype=np.float64)
        return self.starts[side] + (ks + 0.5) * self.widths[side]


@dataclass(frozen=True, slots=True)
class IntervalTargets:
    """Training targets: one labeled interval and one offset per side.

    ``labels[s]`` is the 0-based interval index for side ``s`` and
    ``offsets[s]`` the regression target in units of the interval width,
    clamped to [-0.5, 0.5].
    """

    labels: np.ndarray
    offsets: np.ndarray


@dataclass(frozen=True, slots=True)
class IntervalPrediction:
    """Raw per-side predictions: ``(4, K)`` interval logits and offsets."""

    logits: np.ndarray
    offsets: np.ndarray

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if logits.shape != offsets.shape or logits.ndim != 2 or logits.shape[0] != 4:
            raise ValueError(
                f"expected matching (4, K) arrays, got logits {logits.shape} "
                f"and offsets {offsets.shape}"
            )
        if not (np.isfinite(logits).all() and np.isfinite(offsets).all()):
            raise ValueError("logits and offsets must be finite")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "offsets", offsets)

    @property
    def num_intervals(self) -> int:
        return self.logits.shape[1]


def _box_sides(box: Box) -> np.ndarray:
    """Side coordinates in ``SIDES`` order: (x1, x2, y1, y2)."""
    return np.array([box.x1, box.x2, box.y1, box.y2], dtype=np.float64)


def build_grid(candidate: Box, num_intervals: int, segment_scale: float) -> IntervalGrid:
    """Lay out the per-side interval grids for a candidate box.

    The left/right segments run along x, centered at x1/x2, with total
    length ``segment_scale * (x2 - x1)``; top/bottom run along y with the
    box height. Each segment is split into ``num_intervals`` equal
    intervals.
    """
    if num_intervals < 2:
        raise ValueError(f"num_intervals must be >= 2, got {num_intervals}")
    if segment_scale <= 0.0:
        raise ValueError(f"segment_scale must be positive, got {segment_scale}")
    starts, widths = grid_arrays(
        candidate.as_array()[None, :], num_intervals, segment_scale
    )
    return IntervalGrid(
        candidate=candidate,
        num_intervals=num_intervals,
        segment_scale=segment_scale,
        starts=starts[0],
        widths=widths[0],
    )


def encode(grid: IntervalGrid, gt: Box) -> IntervalTargets:
    """Turn a ground-truth box into per-side interval labels and offsets.

    A coordinate lying exactly on an interval edge belongs to the interval
    that starts there; coordinates outside the segment clamp to the
    nearest end interval. Offsets are measured from the labeled interval's
    center in units of the interval width and clamped to [-0.5, 0.5].
    """
    labels, offsets = encode_batch(
        grid.starts[None, :], grid.widths[None, :], grid.num_intervals,
        _box_sides(gt)[None, :],
    )
    return IntervalTargets(labels=labels[0], offsets=offsets[0])


def decode(grid: IntervalGrid, pred: IntervalPrediction) -> tuple[Box | None, float]:
    """Reconstruct a box and its localization quality from raw predictions.

    Per side, the best-scoring interval (ties to the lowest index) fixes
    the coarse location and its offset refines it. Returns ``(None, q)``
    when the decoded coordinates do not form a valid box; the quality
    score is reported either way.
    """
    if pred.num_intervals != grid.num_intervals:
        raise ValueError(
            f"prediction has {pred.num_intervals} intervals, grid expects "
            f"{grid.num_intervals}"
        )
    boxes, valid, quals = decode_batch(
        grid.starts[None, :], grid.widths[None, :],
        pred.logits[None, :, :], pred.offsets[None, :, :],
    )
    q = float(quals[0])
    if not valid[0]:
        return None, q
    x1, y1, x2, y2 = boxes[0]
    return Box(float(x1), float(y1), float(x2), float(y2)), q


def quality(pred: IntervalPrediction) -> float:
    """Mean over the four sides of the sigmoid of the best interval logit."""
    return float(quality_batch(pred.logits[None, :, :])[0])


def perfect_prediction(
    targets: IntervalTargets, num_intervals: int, magnitude: float = 40.0
) -> IntervalPrediction:
    """Saturated prediction that decodes back to the encoded coordinates.

    Labeled intervals get logit ``+magnitude`` and their target offsets;
    everything else gets ``-magnitude`` and offset 0.
    """
    logits = np.full((4, num_intervals), -magnitude, dtype=np.float64)
    offsets = np.zeros((4, num_intervals), dtype=np.float64)
    rows = np.arange(4)
    labels = np.asarray(targets.labels, dtype=np.int64)
    logits[rows, labels] = magnitude
    offsets[rows, labels] = targets.offsets
    return IntervalPrediction(logits=logits, offsets=offsets)


# --- batched core -----------------------------------------------------------
#
# The batched functions work on (N, 4) side arrays in (x1, x2, y1, y2)
# order and (N, 4, K) prediction arrays. They carry the whole numeric
# semantics; the scalar API above wraps them.


def grid_arrays(
    boxes: np.ndarray, num_intervals: int, segment_scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Segment starts and interval widths for ``(N, 4)`` corner-form boxes.

    Returns ``(starts, widths)`` of shape ``(N, 4)`` in side order.
    Raises on zero-area candidates.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    if np.any(w <= 0.0) or np.any(h <= 0.0):
        raise ValueError("zero-area candidate box")
    seg_len = segment_scale * np.stack([w, w, h, h], axis=1)
    sides = boxes[:, [0, 2, 1, 3]]
    starts = sides - 0.5 * seg_len
    widths = seg_len / num_intervals
    return starts, widths


def encode_batch(
    starts: np.ndarray,
    widths: np.ndarray,
    num_intervals: int,
    gt_sides: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized interval labels and clamped offsets for ``(N, 4)`` sides."""
    rel = (np.asarray(gt_sides, dtype=np.float64) - starts) / widths
    labels = np.clip(np.floor(rel).astype(np.int64), 0, num_intervals - 1)
    centers = starts + (labels + 0.5) * widths
    offsets = np.clip((gt_sides - centers) / widths, -0.5, 0.5)
    return labels, offsets


def decode_batch(
    starts: np.ndarray,
    widths: np.ndarray,
    logits: np.ndarray,
    offsets: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decode of ``(N, 4, K)`` predictions.

    Returns ``(boxes, valid, quality)`` where ``boxes`` is ``(N, 4)``
    corner form, ``valid`` flags rows whose coordinates form a real box,
    and ``quality`` is the per-candidate localization quality.
    """
    logits = np.asarray(logits, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    best = np.argmax(logits, axis=2)
    n = logits.shape[0]
    rows = np.arange(n)[:, None]
    cols = np.arange(4)[None, :]
    coords = starts + (best + 0.5) * widths + offsets[rows, cols, best] * widths
    # coords side order is (x1, x2, y1, y2); reorder to corner form.
    boxes = coords[:, [0, 2, 1, 3]]
    valid = (coords[:, 0] < coords[:, 1]) & (coords[:, 2] < coords[:, 3])
    return boxes, valid, quality_batch(logits)


def quality_batch(logits: np.ndarray) -> np.ndarray:
    """Localization quality for ``(N, 4, K)`` logits."""
    best = np.max(np.asarray(logits, dtype=np.float64), axis=2)
    return np.mean(sigmoid(best), axis=1)
