"""Axis-aligned box arithmetic, IoU, horizontal flips and class-wise NMS.

Coordinates are continuous reals in pixel units, corner form
``(x1, y1, x2, y2)`` with the origin at the top left. All functions are
pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Box",
    "Detection",
    "iou",
    "iou_matrix",
    "hflip",
    "nms",
    "RANKINGS",
]

# Recognized detection rankings: raw classification confidence, or the
# product of classification confidence and localization quality.
RANKINGS = ("score", "combined")


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned rectangle with strictly positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {coords}: need x1 < x2 and y1 < y2")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def as_xywh(self) -> tuple[float, float, float, float]:
        """Corner form converted to ``(x, y, w, h)``."""
        return (self.x1, self.y1, self.width, self.height)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, slots=True)
class Detection:
    """A box with class id, classification confidence and localization quality."""

    box: Box
    class_id: int
    score: float
    loc_quality: float = 1.0

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError(f"class_id must be nonnegative, got {self.class_id}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if not 0.0 <= self.loc_quality <= 1.0:
            raise ValueError(f"loc_quality must lie in [0, 1], got {self.loc_quality}")

    @property
    def combined(self) -> float:
        """Classification confidence times localization quality."""
        return self.score * self.loc_quality

    def rank(self, ranking: str) -> float:
        if ranking == "score":
            return self.score
        if ranking == "combined":
            return self.combined
        raise ValueError(f"unknown ranking {ranking!r}, expected one of {RANKINGS}")


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(N, 4)`` / ``(M, 4)`` corner-form arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0.0, inter / union, 0.0)


def hflip(box: Box, image_width: float) -> Box:
    """Reflect a box across the vertical image centerline.

    Applying the flip twice returns the original box exactly.
    """
    if not (0.0 <= box.x1 and box.x2 <= image_width):
        raise ValueError(
            f"box x-range [{box.x1}, {box.x2}] outside image width {image_width}"
        )
    return Box(image_width - box.x2, box.y1, image_width - box.x1, box.y2)


def nms(
    dets: Sequence[Detection],
    iou_threshold: float,
    ranking: str = "score",
) -> list[Detection]:
    """Greedy class-wise non-maximum suppression.

    Detections of different classes never suppress each other. Within a
    class, the highest-ranked remaining detection is kept and same-class
    detections with IoU >= ``iou_threshold`` against it are removed. The
    output is ordered by descending rank, ties broken by lower input index.

    Args:
        dets: input detections in any order.
        iou_threshold: suppression threshold, strictly inside (0, 1).
        ranking: "score" ranks by classification confidence, "combined"
            by confidence times localization quality.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    n = len(dets)
    if n == 0:
        return []
    ranks = np.array([d.rank(ranking) for d in dets], dtype=np.float64)
    classes = np.array([d.class_id for d in dets], dtype=np.int64)
    boxes = np.stack([d.box.as_array() for d in dets])
    # Descending rank, ties by lower input index (last lexsort key is primary).
    order = np.lexsort((np.arange(n), -ranks))

    keep_mask = np.zeros(n, dtype=bool)
    alive = np.ones(n, dtype=bool)
    for idx in order:
        if not alive[idx]:
            continue
        keep_mask[idx] = True
        alive[idx] = False
        same = alive & (classes == classes[idx])
        if not same.any():
            continue
        rivals = np.flatnonzero(same)
        overlaps = iou_matrix(boxes[idx], boxes[rivals])[0]
        alive[rivals[overlaps >= iou_threshold]] = False
    return [dets[i] for i in order if keep_mask[i]]


def group_by_class(dets: Iterable[Detection]) -> dict[int, list[Detection]]:
    """Bucket detections by class id, preserving input order within a class."""
    out: dict[int, list[Detection]] = {}
    for d in dets:
        out.setdefault(d.class_id, []).append(d)
    return out
