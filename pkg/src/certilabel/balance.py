"""Per-class confidence accumulation and dynamic threshold / weight derivation.

Each foreground detection contributes its confidence product
``score * loc_quality`` to its class's running mass ``c`` and bumps the
class instance count ``n``. After a full labeling round, the per-class
filter threshold scales the base threshold by ``(c / mean_count) ** gamma1``
(clipped to a fixed band) and the per-class loss weight is
``(mean_count / c) ** gamma2`` (capped), where ``mean_count`` is the mean
instance count over all classes. Setting an exponent to zero disables the
corresponding mechanism entirely: every class then gets the base
threshold, respectively weight 1, regardless of accumulated mass.

States merge by elementwise sum, so independent workers can accumulate
private states and combine them in any fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Detection

__all__ = [
    "BalanceParams",
    "ClassBalanceState",
    "accumulate",
    "accumulate_arrays",
    "merge",
    "thresholds",
    "weights",
    "snapshot",
]


@dataclass(frozen=True, slots=True)
class BalanceParams:
    """Knobs for dynamic thresholding and re-weighting."""

    tau: float = 0.7
    gamma1: float = 0.05
    gamma2: float = 0.6
    clip_lo: float = 0.4
    clip_hi: float = 0.9
    alpha_cap: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_lo < self.clip_hi < 1.0:
            raise ValueError(
                f"need 0 < clip_lo < clip_hi < 1, got [{self.clip_lo}, {self.clip_hi}]"
            )
        if self.gamma1 < 0.0 or self.gamma2 < 0.0:
            raise ValueError("gamma1 and gamma2 must be nonnegative")
        if self.alpha_cap < 1.0:
            raise ValueError(f"alpha_cap must be >= 1, got {self.alpha_cap}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must lie in (0, 1], got {self.tau}")


@dataclass(frozen=True, slots=True)
class ClassBalanceState:
    """Accumulated per-class confidence mass and foreground instance counts."""

    confidence_mass: np.ndarray
    instance_counts: np.ndarray

    def __post_init__(self) -> None:
        mass = np.asarray(self.confidence_mass, dtype=np.float64)
        counts = np.asarray(self.instance_counts, dtype=np.int64)
        if mass.shape != counts.shape or mass.ndim != 1:
            raise ValueError("confidence_mass and instance_counts must be 1-d, same length")
        if np.any(mass < 0.0) or np.any(counts < 0):
            raise ValueError("state entries must be nonnegative")
        object.__setattr__(self, "confidence_mass", mass)
        object.__setattr__(self, "instance_counts", counts)

    @classmethod
    def empty(cls, num_classes: int) -> "ClassBalanceState":
        if num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {num_classes}")
        return cls(
            confidence_mass=np.zeros(num_classes),
            instance_counts=np.zeros(num_classes, dtype=np.int64),
        )

    @property
    def num_classes(self) -> int:
        return self.confidence_mass.shape[0]

    @property
    def mean_count(self) -> float:
        return float(self.instance_counts.sum()) / self.num_classes

    def to_dict(self) -> dict:
        return {
            "confidence_mass": self.confidence_mass.tolist(),
            "instance_counts": self.instance_counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassBalanceState":
        return cls(
            confidence_mass=np.array(d["confidence_mass"], dtype=np.float64),
            instance_counts=np.array(d["instance_counts"], dtype=np.int64),
        )


def accumulate(state: ClassBalanceState, dets: Iterable[Detection]) -> ClassBalanceState:
    """Fold foreground detections into a new state; the input is untouched."""
    mass = state.confidence_mass.copy()
    counts = state.instance_counts.copy()
    m = state.num_classes
    for d in dets:
        if d.class_id >= m:
            raise ValueError(f"class {d.class_id} outside [0, {m})")
        mass[d.class_id] += d.combined
        counts[d.class_id] += 1
    return ClassBalanceState(confidence_mass=mass, instance_counts=counts)


def accumulate_arrays(
    state: ClassBalanceState, class_ids: np.ndarray, combined: np.ndarray
) -> ClassBalanceState:
    """Array-path accumulation: ``combined`` holds score * quality per detection."""
    class_ids = np.asarray(class_ids, dtype=np.int64)
    combined = np.asarray(combined, dtype=np.float64)
    m = state.num_classes
    if class_ids.size and (class_ids.min() < 0 or class_ids.max() >= m):
        raise ValueError(f"class ids outside [0, {m})")
    mass = state.confidence_mass + np.bincount(class_ids, weights=combined, minlength=m)
    counts = state.instance_counts + np.bincount(class_ids, minlength=m)
    return ClassBalanceState(confidence_mass=mass, instance_counts=counts)


def merge(a: ClassBalanceState, b: ClassBalanceState) -> ClassBalanceState:
    """Elementwise-sum merge of two states over the same class table."""
    if a.num_classes != b.num_classes:
        raise ValueError("cannot merge states with different class counts")
    return ClassBalanceState(
        confidence_mass=a.confidence_mass + b.confidence_mass,
        instance_counts=a.instance_counts + b.instance_counts,
    )


def thresholds(state: ClassBalanceState, params: BalanceParams) -> np.ndarray:
    """Per-class filter thresholds, always inside [clip_lo, clip_hi].

    With ``gamma1 == 0`` the mechanism is disabled and every class gets
    the (clipped) base threshold. Otherwise classes with no accumulated
    mass, or a state with no instances at all, get the most permissive
    threshold ``clip_lo``.
    """
    m = state.num_classes
    base = float(np.clip(params.tau, params.clip_lo, params.clip_hi))
    if params.gamma1 == 0.0:
        return np.full(m, base)
    mean_count = state.mean_count
    if mean_count == 0.0:
        return np.full(m, params.clip_lo)
    ratio = state.confidence_mass / mean_count
    raw = np.power(ratio, params.gamma1) * params.tau
    out = np.clip(raw, params.clip_lo, params.clip_hi)
    out[state.confidence_mass == 0.0] = params.clip_lo
    return out


def weights(state: ClassBalanceState, params: BalanceParams) -> np.ndarray:
    """Per-class loss weights, capped at ``alpha_cap``.

    With ``gamma2 == 0`` re-weighting is disabled and every class gets 1.
    Classes with no accumulated mass get the full cap.
    """
    m = state.num_classes
    if params.gamma2 == 0.0:
        return np.ones(m)
    out = np.full(m, params.alpha_cap)
    mean_count = state.mean_count
    if mean_count == 0.0:
        return out
    mass = state.confidence_mass
    pos = mass > 0.0
    out[pos] = np.minimum(
        np.power(mean_count / mass[pos], params.gamma2), params.alpha_cap
    )
    return out


def snapshot(state: ClassBalanceState, params: BalanceParams) -> dict:
    """Serializable view of the state plus its derived thresholds and weights."""
    return {
        **state.to_dict(),
        "thresholds": thresholds(state, params).tolist(),
        "weights": weights(state, params).tolist(),
    }
