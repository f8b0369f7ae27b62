"""Localization losses, their analytic gradients, and a finite-difference check.

The interval classification term is a full binary cross-entropy over all
4 x K interval logits against the one-hot side labels. A positive-only
variant (dropping the negative term) is available behind
``positive_only=True``; it has no finite minimizer for unlabeled
intervals and exists for ablation only. The fine regression term is a
smooth L1 over the labeled intervals' offset residuals; unlabeled
intervals contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .intervals import IntervalPrediction, IntervalTargets, sigmoid
from .rng import stream

__all__ = [
    "LossBreakdown",
    "LossGradient",
    "seg_loss",
    "reg_loss",
    "cls_loss",
    "loc_loss",
    "loc_loss_grad",
    "total_loss",
    "finite_difference_grad",
    "gradient_check",
    "GradientCheckResult",
    "random_instance",
]

_LOG_FLOOR = 1e-12


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    """Per-instance loss components; ``total`` is their plain sum."""

    cls: float = 0.0
    seg: float = 0.0
    reg: float = 0.0

    @property
    def total(self) -> float:
        return self.cls + self.seg + self.reg


@dataclass(frozen=True, slots=True)
class LossGradient:
    """Gradients of the localization loss w.r.t. logits and offsets."""

    d_logits: np.ndarray
    d_offsets: np.ndarray


def _one_hot(tgt: IntervalTargets, num_intervals: int) -> np.ndarray:
    y = np.zeros((4, num_intervals), dtype=np.float64)
    y[np.arange(4), np.asarray(tgt.labels, dtype=np.int64)] = 1.0
    return y


def seg_loss(
    pred: IntervalPrediction, tgt: IntervalTargets, positive_only: bool = False
) -> float:
    """Binary cross-entropy over all interval logits vs one-hot labels.

    Computed in logit space (softplus form), so no probability ever hits
    an exact log(0); the value agrees with the clamped-log scalar
    formulation to well below 1e-12.
    """
    t = pred.logits
    y = _one_hot(tgt, pred.num_intervals)
    # -y*log(sigmoid(t)) = y*softplus(-t); -(1-y)*log(1-sigmoid(t)) = (1-y)*softplus(t)
    positive = y * np.logaddexp(0.0, -t)
    if positive_only:
        return float(positive.sum())
    negative = (1.0 - y) * np.logaddexp(0.0, t)
    return float((positive + negative).sum())


def _smooth_l1(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)


def _smooth_l1_grad(x: np.ndarray) -> np.ndarray:
    return np.where(np.abs(x) < 1.0, x, np.sign(x))


def reg_loss(pred: IntervalPrediction, tgt: IntervalTargets) -> float:
    """Smooth L1 over the four labeled intervals' offset residuals."""
    labels = np.asarray(tgt.labels, dtype=np.int64)
    picked = pred.offsets[np.arange(4), labels]
    return float(_smooth_l1(picked - tgt.offsets).sum())


def cls_loss(class_probs: np.ndarray, label: int) -> float:
    """Negative log likelihood of the true class under predicted probabilities."""
    probs = np.asarray(class_probs, dtype=np.float64)
    if not 0 <= label < probs.shape[-1]:
        raise ValueError(f"label {label} outside [0, {probs.shape[-1]})")
    return float(-np.log(max(probs[label], _LOG_FLOOR)))


def loc_loss(
    pred: IntervalPrediction, tgt: IntervalTargets, positive_only: bool = False
) -> LossBreakdown:
    """Interval classification plus fine regression for one instance."""
    return LossBreakdown(
        cls=0.0,
        seg=seg_loss(pred, tgt, positive_only=positive_only),
        reg=reg_loss(pred, tgt),
    )


def loc_loss_grad(
    pred: IntervalPrediction, tgt: IntervalTargets, positive_only: bool = False
) -> LossGradient:
    """Analytic gradient of ``loc_loss`` w.r.t. every logit and offset."""
    y = _one_hot(tgt, pred.num_intervals)
    s = sigmoid(pred.logits)
    if positive_only:
        d_logits = y * (s - 1.0)
    else:
        d_logits = s - y
    d_offsets = np.zeros_like(pred.offsets)
    labels = np.asarray(tgt.labels, dtype=np.int64)
    rows = np.arange(4)
    residual = pred.offsets[rows, labels] - tgt.offsets
    d_offsets[rows, labels] = _smooth_l1_grad(residual)
    return LossGradient(d_logits=d_logits, d_offsets=d_offsets)


def total_loss(
    sup: Sequence[LossBreakdown],
    unsup: Sequence[tuple[LossBreakdown, int]],
    lambda_u: float,
    alpha: Mapping[int, float] | np.ndarray,
) -> float:
    """Supervised sum plus ``lambda_u`` times the class-reweighted unsupervised sum."""
    if lambda_u < 0.0:
        raise ValueError(f"lambda_u must be nonnegative, got {lambda_u}")
    total = sum(b.total for b in sup)
    for breakdown, class_id in unsup:
        try:
            weight = alpha[class_id]
        except (KeyError, IndexError):
            raise ValueError(f"class {class_id} missing from alpha table") from None
        if weight <= 0.0:
            raise ValueError(f"alpha[{class_id}] must be positive, got {weight}")
        total += lambda_u * weight * breakdown.total
    return float(total)


# --- finite-difference verification -----------------------------------------


def finite_difference_grad(
    pred: IntervalPrediction,
    tgt: IntervalTargets,
    step: float = 1e-4,
    positive_only: bool = False,
) -> LossGradient:
    """Central-difference gradient of ``loc_loss``; independent of the analytic path."""

    def value(logits: np.ndarray, offsets: np.ndarray) -> float:
        p = IntervalPrediction(logits=logits, offsets=offsets)
        b = loc_loss(p, tgt, positive_only=positive_only)
        return b.total

    d_logits = np.zeros_like(pred.logits)
    d_offsets = np.zeros_like(pred.offsets)
    for s in range(4):
        for k in range(pred.num_intervals):
            up = pred.logits.copy()
            down = pred.logits.copy()
            up[s, k] += step
            down[s, k] -= step
            d_logits[s, k] = (value(up, pred.offsets) - value(down, pred.offsets)) / (2 * step)

            up = pred.offsets.copy()
            down = pred.offsets.copy()
            up[s, k] += step
            down[s, k] -= step
            d_offsets[s, k] = (value(pred.logits, up) - value(pred.logits, down)) / (2 * step)
    return LossGradient(d_logits=d_logits, d_offsets=d_offsets)


def random_instance(
    rng: np.random.Generator, num_intervals: int
) -> tuple[IntervalPrediction, IntervalTargets]:
    """A random prediction/target pair for verification runs."""
    pred = IntervalPrediction(
        logits=rng.normal(0.0, 2.0, size=(4, num_intervals)),
        offsets=rng.normal(0.0, 1.0, size=(4, num_intervals)),
    )
    tgt = IntervalTargets(
        labels=rng.integers(0, num_intervals, size=4),
        offsets=rng.uniform(-0.5, 0.5, size=4),
    )
    return pred, tgt


@dataclass(frozen=True, slots=True)
class GradientCheckResult:
    max_rel_error: float
    trials: int
    intervals: tuple[int, ...]
    step: float
    per_k: dict[int, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-5


def gradient_check(
    seed: int = 0,
    trials: int = 100,
    intervals: Sequence[int] = (2, 8, 30),
    step: float = 1e-4,
    abs_floor: float = 1e-8,
    positive_only: bool = False,
) -> GradientCheckResult:
    """Compare analytic and central-difference gradients on random instances.

    The reported error for each coordinate is the absolute difference
    divided by the larger gradient magnitude; coordinates where both
    gradients are below ``abs_floor`` count as exact.
    """
    worst = 0.0
    per_k: dict[int, float] = {}
    for num_intervals in intervals:
        rng = stream(seed, "gradcheck", num_intervals)
        k_worst = 0.0
        for _ in range(trials):
            pred, tgt = random_instance(rng, num_intervals)
            # Smooth L1 has a curvature break at |residual| = 1; keep probe
            # points away from it so central differences are trustworthy.
            rows = np.arange(4)
            labels = np.asarray(tgt.labels, dtype=np.int64)
            residual = pred.offsets[rows, labels] - tgt.offsets
            bad = np.abs(np.abs(residual) - 1.0) < 4 * step
            if bad.any():
                shifted = pred.offsets.copy()
                shifted[rows[bad], labels[bad]] += 8 * step
                pred = IntervalPrediction(logits=pred.logits, offsets=shifted)
            analytic = loc_loss_grad(pred, tgt, positive_only=positive_only)
            numeric = finite_difference_grad(pred, tgt, step=step, positive_only=positive_only)
            for a, f in ((analytic.d_logits, numeric.d_logits),
                         (analytic.d_offsets, numeric.d_offsets)):
                diff = np.abs(a - f)
                scale = np.maximum(np.abs(a), np.abs(f))
                mask = scale > abs_floor
                if mask.any():
                    k_worst = max(k_worst, float((diff[mask] / scale[mask]).max()))
        per_k[num_intervals] = k_worst
        worst = max(worst, k_worst)
    return GradientCheckResult(
        max_rel_error=worst,
        trials=trials,
        intervals=tuple(intervals),
        step=step,
        per_k=per_k,
    )
