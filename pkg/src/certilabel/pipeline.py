"""Pseudo-label generation for one unlabeled image.

Raw teacher outputs (candidate box, class scores, interval predictions)
are decoded into detections carrying both a classification confidence and
a localization quality, suppressed class-wise, then filtered against the
per-class dynamic thresholds derived from a ``ClassBalanceState``. The
surviving labels keep a snapshot of the thresholds and per-class loss
weights in force when they were produced.

Class score vectors may carry one trailing background column (length
``num_classes + 1``); candidates whose best class is background are
dropped before suppression.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import balance as _balance
from .balance import BalanceParams, ClassBalanceState
from .geometry import Box, Detection, hflip, nms
from .intervals import IntervalPrediction, decode_batch, grid_arrays

__all__ = [
    "PipelineParams",
    "RawPrediction",
    "PseudoLabelSet",
    "decode_candidates",
    "candidate_detections",
    "label_detections",
    "generate_pseudo_labels",
    "transform_labels_hflip",
]


@dataclass(frozen=True, slots=True)
class PipelineParams:
    """Everything the per-image labeling flow needs to know."""

    num_classes: int
    num_intervals: int = 30
    segment_scale: float = 2.0
    nms_iou: float = 0.5
    ranking: str = "combined"
    filter_score: str = "combined"
    balance: BalanceParams = field(default_factory=BalanceParams)

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must lie in (0, 1), got {self.nms_iou}")
        for name, value in (("ranking", self.ranking), ("filter_score", self.filter_score)):
            if value not in ("score", "combined"):
                raise ValueError(f"{name} must be 'score' or 'combined', got {value!r}")


@dataclass(frozen=True, slots=True)
class RawPrediction:
    """One candidate's raw teacher output before any decoding."""

    candidate: Box
    class_scores: np.ndarray
    intervals: IntervalPrediction


@dataclass(frozen=True, slots=True)
class PseudoLabelSet:
    """Filtered pseudo ground truth for one image plus the balance snapshot."""

    image_id: int
    labels: tuple[Detection, ...]
    alpha: np.ndarray
    tau_used: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def decode_candidates(
    raw: Sequence[RawPrediction], params: PipelineParams
) -> list[Detection]:
    """Decode raw predictions into detections, dropping background and
    candidates whose decoded coordinates do not form a valid box."""
    if not raw:
        return []
    m = params.num_classes
    boxes = np.stack([r.candidate.as_array() for r in raw])
    starts, widths = grid_arrays(boxes, params.num_intervals, params.segment_scale)
    logits = np.stack([r.intervals.logits for r in raw])
    offsets = np.stack([r.intervals.offsets for r in raw])
    if logits.shape[2] != params.num_intervals:
        raise ValueError(
            f"predictions carry {logits.shape[2]} intervals, params expect "
            f"{params.num_intervals}"
        )
    decoded, valid, quals = decode_batch(starts, widths, logits, offsets)

    out: list[Detection] = []
    for i, r in enumerate(raw):
        scores = np.asarray(r.class_scores, dtype=np.float64)
        if scores.shape[0] not in (m, m + 1):
            raise ValueError(
                f"class score vector of length {scores.shape[0]}, expected "
                f"{m} or {m + 1} (with background)"
            )
        best = int(np.argmax(scores))
        if best == m:
            continue  # background wins
        if not valid[i]:
            continue
        x1, y1, x2, y2 = decoded[i]
        out.append(
            Detection(
                box=Box(float(x1), float(y1), float(x2), float(y2)),
                class_id=best,
                score=float(scores[best]),
                loc_quality=float(quals[i]),
            )
        )
    return out


def candidate_detections(
    raw: Sequence[RawPrediction], params: PipelineParams
) -> list[Detection]:
    """Decoded, background-free, class-wise suppressed detections."""
    return nms(decode_candidates(raw, params), params.nms_iou, ranking=params.ranking)


def label_detections(
    dets: Sequence[Detection],
    state: ClassBalanceState,
    params: PipelineParams,
    image_id: int = 0,
    suppressed: bool = False,
) -> PseudoLabelSet:
    """Threshold post-decode detections into a pseudo-label set.

    Runs class-wise NMS first unless ``suppressed`` says the input already
    went through it. Filtering keeps detections whose filter score
    (confidence or confidence * quality) reaches their class threshold.
    """
    if state.num_classes != params.num_classes:
        raise ValueError(
            f"state covers {state.num_classes} classes, params expect "
            f"{params.num_classes}"
        )
    if not suppressed:
        dets = nms(dets, params.nms_iou, ranking=params.ranking)
    tau = _balance.thresholds(state, params.balance)
    alpha = _balance.weights(state, params.balance)
    kept = tuple(d for d in dets if d.rank(params.filter_score) >= tau[d.class_id])
    return PseudoLabelSet(image_id=image_id, labels=kept, alpha=alpha, tau_used=tau)


def generate_pseudo_labels(
    raw: Sequence[RawPrediction],
    state: ClassBalanceState,
    params: PipelineParams,
    image_id: int = 0,
) -> PseudoLabelSet:
    """Full per-image flow: decode, suppress, dynamically filter."""
    dets = candidate_detections(raw, params)
    return label_detections(dets, state, params, image_id=image_id, suppressed=True)


def transform_labels_hflip(s: PseudoLabelSet, image_width: float) -> PseudoLabelSet:
    """Map a pseudo-label set through a horizontal flip; scores unchanged."""
    flipped = tuple(
        Detection(
            box=hflip(d.box, image_width),
            class_id=d.class_id,
            score=d.score,
            loc_quality=d.loc_quality,
        )
        for d in s.labels
    )
    return PseudoLabelSet(
        image_id=s.image_id, labels=flipped, alpha=s.alpha, tau_used=s.tau_used
    )
