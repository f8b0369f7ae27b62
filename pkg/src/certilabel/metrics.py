"""Detection evaluation: greedy matching, interpolated AP, quality curves.

Matching is the usual greedy scheme: predictions in descending score
order each claim the highest-IoU unmatched ground truth of the same class
at or above the IoU threshold. Average precision uses 101-point
interpolation over the precision-recall curve and averages over classes
that appear in the ground truth. The pseudo-label quality curve reports,
per IoU threshold, the fraction of pseudo boxes that match a same-class
ground truth (precision) and the fraction of ground truths covered
(recall).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import Box, Detection, iou_matrix
from .pipeline import PseudoLabelSet

__all__ = [
    "MatchResult",
    "QualityPoint",
    "EvalReport",
    "COCO_AP_THRESHOLDS",
    "DEFAULT_QUALITY_GRID",
    "match_detections",
    "average_precision",
    "evaluate_detections",
    "pseudo_label_quality",
    "pseudo_label_quality_by_class",
]

COCO_AP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_QUALITY_GRID = (0.5, 0.75, 0.85, 0.95)

# Ground truth for one image: sequence of (class_id, Box).
GroundTruth = Sequence[tuple[int, Box]]


@dataclass(frozen=True, slots=True)
class MatchResult:
    """Greedy matching outcome for one image and one class.

    ``order`` lists prediction indices by descending score (ties keep
    input order); ``matches[j]`` is the ground-truth index claimed by
    prediction ``order[j]`` or -1; ``gt_covered`` flags claimed truths.
    """

    order: np.ndarray
    matches: np.ndarray
    gt_covered: np.ndarray

    @property
    def num_matched(self) -> int:
        return int((self.matches >= 0).sum())


def _as_box_array(boxes: Sequence[Box] | np.ndarray) -> np.ndarray:
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64)
    return (
        np.stack([b.as_array() for b in boxes])
        if len(boxes)
        else np.zeros((0, 4))
    )


def match_detections(
    pred_boxes: Sequence[Box] | np.ndarray,
    pred_scores: Sequence[float] | np.ndarray,
    gt_boxes: Sequence[Box] | np.ndarray,
    iou_threshold: float,
) -> MatchResult:
    """Greedily match same-class predictions to ground truths of one image.

    Each prediction, visited in descending score order, claims the
    unmatched ground truth with the highest IoU at or above the
    threshold; IoU ties go to the lower ground-truth index.
    """
    preds = _as_box_array(pred_boxes)
    gts = _as_box_array(gt_boxes)
    scores = np.asarray(pred_scores, dtype=np.float64)
    n, g = preds.shape[0], gts.shape[0]
    order = np.lexsort((np.arange(n), -scores))
    matches = np.full(n, -1, dtype=np.int64)
    covered = np.zeros(g, dtype=bool)
    if n and g:
        ious = iou_matrix(preds, gts)
        for j, pi in enumerate(order):
            row = ious[pi]
            open_ids = np.flatnonzero(~covered & (row >= iou_threshold))
            if open_ids.size:
                best = open_ids[np.argmax(row[open_ids])]
                matches[j] = best
                covered[best] = True
    return MatchResult(order=order, matches=matches, gt_covered=covered)


def _interpolated_ap(scores: np.ndarray, tp: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP from per-prediction true-positive flags."""
    if num_gt == 0:
        raise ValueError("AP undefined without ground truth")
    if scores.size == 0:
        return 0.0
    order = np.lexsort((np.arange(scores.size), -scores))
    tp = tp[order].astype(np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / num_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # Precision envelope: best precision achievable at recall >= r.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(recall, grid, side="left")
    valid = idx < recall.size
    return float(np.where(valid, envelope[np.minimum(idx, recall.size - 1)], 0.0).mean())


def _group_predictions(
    predictions: Mapping[int, Sequence[Detection]],
) -> dict[int, list[tuple[int, Detection]]]:
    by_class: dict[int, list[tuple[int, Detection]]] = {}
    for image_id in sorted(predictions):
        for det in predictions[image_id]:
            by_class.setdefault(det.class_id, []).append((image_id, det))
    return by_class


def _group_ground_truth(
    ground_truth: Mapping[int, GroundTruth],
) -> dict[int, dict[int, list[Box]]]:
    by_class: dict[int, dict[int, list[Box]]] = {}
    for image_id in sorted(ground_truth):
        for class_id, box in ground_truth[image_id]:
            by_class.setdefault(class_id, {}).setdefault(image_id, []).append(box)
    return by_class


def _class_tp_flags(
    preds: list[tuple[int, Detection]],
    gt_by_image: dict[int, list[Box]],
    iou_threshold: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Global (scores, tp flags) for one class, folded in image order."""
    scores = np.array([d.score for _, d in preds], dtype=np.float64)
    tp = np.zeros(len(preds), dtype=bool)
    by_image: dict[int, list[int]] = {}
    for pos, (image_id, _) in enumerate(preds):
        by_image.setdefault(image_id, []).append(pos)
    for image_id, positions in by_image.items():
        gts = gt_by_image.get(image_id, [])
        if not gts:
            continue
        boxes = [preds[p][1].box for p in positions]
        local_scores = [preds[p][1].score for p in positions]
        result = match_detections(boxes, local_scores, gts, iou_threshold)
        for j, local in enumerate(result.order):
            tp[positions[local]] = result.matches[j] >= 0
    return scores, tp


def average_precision(
    predictions: Mapping[int, Sequence[Detection]],
    ground_truth: Mapping[int, GroundTruth],
    iou_threshold: float,
) -> float:
    """Mean over ground-truth classes of 101-point interpolated AP."""
    preds_by_class = _group_predictions(predictions)
    gt_by_class = _group_ground_truth(ground_truth)
    if not gt_by_class:
        raise ValueError("no ground-truth annotations to evaluate against")
    aps = []
    for class_id in sorted(gt_by_class):
        gt_images = gt_by_class[class_id]
        num_gt = sum(len(v) for v in gt_images.values())
        preds = preds_by_class.get(class_id, [])
        scores, tp = _class_tp_flags(preds, gt_images, iou_threshold)
        aps.append(_interpolated_ap(scores, tp, num_gt))
    return float(np.mean(aps))


@dataclass(frozen=True, slots=True)
class QualityPoint:
    """Precision/recall of a pseudo-label set at one IoU threshold."""

    precision: float
    recall: float
    precision_defined: bool
    num_pseudo: int
    num_gt: int
    matched: int
    covered: int

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "precision_defined": self.precision_defined,
            "num_pseudo": self.num_pseudo,
            "num_gt": self.num_gt,
            "matched": self.matched,
            "covered": self.covered,
        }


def _quality_counts(
    pseudo_sets: Mapping[int, PseudoLabelSet] | Sequence[PseudoLabelSet],
    ground_truth: Mapping[int, GroundTruth],
    iou_grid: Sequence[float],
) -> dict[int, dict[float, list[int]]]:
    """Per class and threshold: [num_pseudo, num_gt, matched, covered]."""
    if not isinstance(pseudo_sets, Mapping):
        pseudo_sets = {s.image_id: s for s in pseudo_sets}
    missing = set(pseudo_sets) - set(ground_truth)
    if missing:
        raise ValueError(
            f"no held-out annotations for image(s) {sorted(missing)[:5]}"
        )
    counts: dict[int, dict[float, list[int]]] = {}

    def cell(class_id: int, thr: float) -> list[int]:
        return counts.setdefault(class_id, {}).setdefault(thr, [0, 0, 0, 0])

    for image_id in sorted(ground_truth):
        gts = ground_truth[image_id]
        labels = pseudo_sets[image_id].labels if image_id in pseudo_sets else ()
        classes = {c for c, _ in gts} | {d.class_id for d in labels}
        for class_id in sorted(classes):
            gt_boxes = [b for c, b in gts if c == class_id]
            dets = [d for d in labels if d.class_id == class_id]
            boxes = [d.box for d in dets]
            ranks = [d.combined for d in dets]
            for thr in iou_grid:
                c = cell(class_id, thr)
                c[0] += len(dets)
                c[1] += len(gt_boxes)
                if dets and gt_boxes:
                    result = match_detections(boxes, ranks, gt_boxes, thr)
                    c[2] += result.num_matched
                    c[3] += int(result.gt_covered.sum())
    return counts


def _quality_point(num_pseudo: int, num_gt: int, matched: int, covered: int) -> QualityPoint:
    defined = num_pseudo > 0
    return QualityPoint(
        precision=matched / num_pseudo if defined else 0.0,
        recall=covered / num_gt if num_gt else 0.0,
        precision_defined=defined,
        num_pseudo=num_pseudo,
        num_gt=num_gt,
        matched=matched,
        covered=covered,
    )


def pseudo_label_quality(
    pseudo_sets: Mapping[int, PseudoLabelSet] | Sequence[PseudoLabelSet],
    ground_truth: Mapping[int, GroundTruth],
    iou_grid: Sequence[float] = DEFAULT_QUALITY_GRID,
) -> dict[float, QualityPoint]:
    """Aggregate precision/recall of pseudo labels across a held-out set.

    Pseudo boxes are matched one-to-one against same-class ground truths,
    visiting boxes in descending combined-score order. Images present in
    the ground truth but absent from ``pseudo_sets`` count as empty label
    sets. An empty overall label set yields precision 0 with
    ``precision_defined=False``.
    """
    counts = _quality_counts(pseudo_sets, ground_truth, iou_grid)
    out: dict[float, QualityPoint] = {}
    for thr in iou_grid:
        totals = [0, 0, 0, 0]
        for per_class in counts.values():
            if thr in per_class:
                totals = [a + b for a, b in zip(totals, per_class[thr])]
        out[thr] = _quality_point(*totals)
    return out


def pseudo_label_quality_by_class(
    pseudo_sets: Mapping[int, PseudoLabelSet] | Sequence[PseudoLabelSet],
    ground_truth: Mapping[int, GroundTruth],
    iou_grid: Sequence[float] = DEFAULT_QUALITY_GRID,
) -> dict[int, dict[float, QualityPoint]]:
    """Per-class quality curves; same matching rules as the aggregate."""
    counts = _quality_counts(pseudo_sets, ground_truth, iou_grid)
    return {
        class_id: {thr: _quality_point(*vals) for thr, vals in per_class.items()}
        for class_id, per_class in sorted(counts.items())
    }


@dataclass(frozen=True, slots=True)
class EvalReport:
    """Per-class AP table, mAP aggregates, quality curves and counts."""

    ap: dict[int, dict[float, float]]
    ap50: float
    ap75: float
    ap_avg: float
    quality: dict[float, QualityPoint]
    quality_by_class: dict[int, dict[float, QualityPoint]] = field(default_factory=dict)
    gt_counts: dict[int, int] = field(default_factory=dict)
    pred_counts: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": {
                str(c): {f"{t:g}": v for t, v in per.items()}
                for c, per in self.ap.items()
            },
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_avg": self.ap_avg,
            "quality": {f"{t:g}": q.to_dict() for t, q in self.quality.items()},
            "quality_by_class": {
                str(c): {f"{t:g}": q.to_dict() for t, q in per.items()}
                for c, per in self.quality_by_class.items()
            },
            "gt_counts": {str(c): n for c, n in self.gt_counts.items()},
            "pred_counts": {str(c): n for c, n in self.pred_counts.items()},
        }


def evaluate_detections(
    predictions: Mapping[int, Sequence[Detection]],
    ground_truth: Mapping[int, GroundTruth],
    ap_thresholds: Sequence[float] = COCO_AP_THRESHOLDS,
    quality_grid: Sequence[float] = DEFAULT_QUALITY_GRID,
) -> EvalReport:
    """Full evaluation of a detection set against annotations."""
    preds_by_class = _group_predictions(predictions)
    gt_by_class = _group_ground_truth(ground_truth)
    if not gt_by_class:
        raise ValueError("no ground-truth annotations to evaluate against")

    ap: dict[int, dict[float, float]] = {}
    for class_id in sorted(gt_by_class):
        gt_images = gt_by_class[class_id]
        num_gt = sum(len(v) for v in gt_images.values())
        preds = preds_by_class.get(class_id, [])
        ap[class_id] = {}
        for thr in ap_thresholds:
            scores, tp = _class_tp_flags(preds, gt_images, thr)
            ap[class_id][thr] = _interpolated_ap(scores, tp, num_gt)

    def aggregate(thr: float) -> float:
        vals = [per[thr] for per in ap.values() if thr in per]
        return float(np.mean(vals)) if vals else 0.0

    present = sorted({t for per in ap.values() for t in per})
    pseudo_like = {
        image_id: PseudoLabelSet(
            image_id=image_id,
            labels=tuple(predictions.get(image_id, ())),
            alpha=np.zeros(0),
            tau_used=np.zeros(0),
        )
        for image_id in ground_truth
    }
    return EvalReport(
        ap=ap,
        ap50=aggregate(0.5),
        ap75=aggregate(0.75),
        ap_avg=float(np.mean([aggregate(t) for t in present])) if present else 0.0,
        quality=pseudo_label_quality(pseudo_like, ground_truth, quality_grid),
        quality_by_class=pseudo_label_quality_by_class(
            pseudo_like, ground_truth, quality_grid
        ),
        gt_counts={
            c: sum(len(v) for v in imgs.values()) for c, imgs in gt_by_class.items()
        },
        pred_counts={c: len(p) for c, p in preds_by_class.items()},
    )
