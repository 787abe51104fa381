"""Policy-first actionable loss.

An item carries a label-free policy score Q and a calibration-only
severity m, both in [0, 1]. The deployed action is a closed-threshold
gate on Q; the loss is the severity charged only when the gate accepts:

    L(y, lambda) = 1{Q(y) >= lambda} * m(y)

which is monotone non-increasing in lambda and bounded in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AlphaOutOfRange, EmptyInput, ScoreOutOfRange

ITEM_KINDS = ("gram_energy", "judge_norm", "other")
CALIBRATOR_NAMES = ("crc", "bb_crc", "rbwa_crc")

# Documented rubric weights for the optional judge sub-score columns;
# recorded as metadata only, never used in any computation.
JUDGE_RUBRIC_WEIGHTS = {
    "correctness": 0.60,
    "faithfulness": 0.20,
    "completeness": 0.15,
    "clarity": 0.05,
}

CLIP_TOL = 1e-6


def clip_unit(x: float, what: str) -> float:
    """Clip a value to [0, 1] if within 1e-6, otherwise raise.

    Tolerates floating-point drift from CSV round trips without
    accepting genuinely out-of-range inputs.
    """
    if not np.isfinite(x):
        raise ValueError(f"{what} must be finite, got {x!r}")
    if -CLIP_TOL <= x < 0.0:
        return 0.0
    if 1.0 < x <= 1.0 + CLIP_TOL:
        return 1.0
    if 0.0 <= x <= 1.0:
        return float(x)
    raise ValueError(f"{what} must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class CalibrationItem:
    """A (policy score, severity) pair consumed by calibrators."""

    q_score: float
    severity: float
    group_id: str = ""
    kind: str = "other"

    def __post_init__(self):
        object.__setattr__(self, "q_score", clip_unit(self.q_score, "q_score"))
        object.__setattr__(self, "severity", clip_unit(self.severity, "severity"))
        if self.kind not in ITEM_KINDS:
            raise ValueError(f"kind must be one of {ITEM_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class Threshold:
    """A calibrated gate threshold.

    ``value`` is the threshold in [0, 1], or None for the REJECT_ALL
    sentinel that realizes the maximal threshold (the gate rejects
    everything, so the loss is identically zero).
    """

    value: float | None
    alpha: float
    calibrator: str = "crc"
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must be in (0, 1), got {self.alpha!r}")
        if self.calibrator not in CALIBRATOR_NAMES:
            raise ValueError(f"calibrator must be one of {CALIBRATOR_NAMES}, got {self.calibrator!r}")
        if self.value is not None:
            object.__setattr__(self, "value", clip_unit(self.value, "threshold value"))

    @classmethod
    def reject_all(cls, alpha: float, calibrator: str = "crc", seed: int | None = None) -> "Threshold":
        return cls(value=None, alpha=alpha, calibrator=calibrator, seed=seed)

    @property
    def is_reject_all(self) -> bool:
        return self.value is None


def gate(u: float, threshold: Threshold) -> bool:
    """Closed-threshold gate: accept iff u >= threshold. REJECT_ALL rejects all."""
    if not np.isfinite(u) or not -CLIP_TOL <= u <= 1.0 + CLIP_TOL:
        raise ScoreOutOfRange(f"score must lie in [0, 1], got {u!r}")
    if threshold.is_reject_all:
        return False
    return u >= threshold.value


def loss(item: CalibrationItem, threshold: Threshold) -> float:
    """Severity if the gate accepts the item's score, else 0."""
    return item.severity if gate(item.q_score, threshold) else 0.0


def empirical_risk(items: Sequence[CalibrationItem], threshold: Threshold) -> float:
    """Mean loss over a nonempty item list.

    A non-increasing step function of the threshold value, jumping only
    at item score values.
    """
    if len(items) == 0:
        raise EmptyInput("empirical_risk needs at least one item")
    return float(np.mean([loss(it, threshold) for it in items]))


def items_to_arrays(items: Iterable[CalibrationItem]) -> tuple[np.ndarray, np.ndarray]:
    """Extract (q_score, severity) arrays in item order."""
    qs = []
    ms = []
    for it in items:
        qs.append(it.q_score)
        ms.append(it.severity)
    return np.asarray(qs, dtype=float), np.asarray(ms, dtype=float)


def risk_at(q: np.ndarray, m: np.ndarray, threshold: Threshold) -> float:
    """Vectorized mean loss of (q, m) arrays at a threshold."""
    if q.size == 0:
        raise EmptyInput("risk_at needs at least one item")
    if threshold.is_reject_all:
        return 0.0
    return float(np.mean(np.where(q >= threshold.value, m, 0.0)))
