"""Confusion-matrix accumulation and the competition-style F1 suite.

All scores are pixel-level over one pooled confusion matrix per split.
Localization is the binary building-vs-background task obtained by the
joint-prediction rule (class >= 1 is a building); damage F1 is the harmonic
mean of the four damage-class F1s; the combined score weights them 30/70.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .types import IGNORE, NUM_CLASSES, derive_localization, validate_mask

LOCALIZATION_WEIGHT = 0.3
DAMAGE_WEIGHT = 0.7

# Floor applied to per-class F1 before harmonic-mean inversion so a class
# that is never predicted yields a defined (near-zero) damage F1.
F1_FLOOR = 1e-6


@dataclass
class ConfusionMatrix:
    """counts[i, j] = pixels with truth class i predicted as class j."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion matrix entries must be non-negative")
        self.counts = counts

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))


def accumulate_confusion(
    pred: np.ndarray, truth: np.ndarray, num_classes: int = NUM_CLASSES
) -> ConfusionMatrix:
    """Pixel counts of (truth, prediction) pairs; IGNORE truth pixels skipped."""
    pred = validate_mask(pred, "prediction")
    truth = validate_mask(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    keep = truth != IGNORE
    p = pred[keep].astype(np.int64)
    t = truth[keep].astype(np.int64)
    if ((p >= num_classes) | (t >= num_classes)).any():
        raise ValueError(f"labels must be < {num_classes} where truth is not IGNORE")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def merge_confusion(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Entrywise sum; associative and commutative."""
    if a.num_classes != b.num_classes:
        raise ValueError(
            f"cannot merge confusion matrices of size {a.num_classes} and {b.num_classes}"
        )
    return ConfusionMatrix(a.counts + b.counts)


def collapse_to_localization(cm: ConfusionMatrix) -> ConfusionMatrix:
    """Collapse a 5-class matrix to 2x2 by summing rows/cols of classes 1..4."""
    if cm.num_classes != NUM_CLASSES:
        raise ValueError(f"expected a {NUM_CLASSES}-class matrix, got {cm.num_classes}")
    c = cm.counts
    out = np.array(
        [
            [c[0, 0], c[0, 1:].sum()],
            [c[1:, 0].sum(), c[1:, 1:].sum()],
        ],
        dtype=np.int64,
    )
    return ConfusionMatrix(out)


def f1_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class F1 = 2PR/(P+R); any 0/0 resolves to 0."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    denom = 2.0 * tp + fp + fn
    f1 = np.zeros(cm.num_classes, dtype=np.float64)
    nz = denom > 0
    f1[nz] = 2.0 * tp[nz] / denom[nz]
    return f1


def localization_f1(pred: np.ndarray, truth: np.ndarray) -> float:
    """F1 of the building class after applying the joint-prediction rule to both masks."""
    cm = accumulate_confusion(derive_localization(pred), derive_localization(truth), 2)
    return float(f1_per_class(cm)[1])


def damage_f1(per_class: Sequence[float]) -> float:
    """Harmonic mean of the damage-class F1s (classes 1..4), floored before inversion."""
    vals = np.asarray(per_class, dtype=np.float64)
    if vals.shape == (NUM_CLASSES,):
        vals = vals[1:]
    elif vals.shape != (4,):
        raise ValueError(f"expected 4 or 5 per-class F1 values, got shape {vals.shape}")
    if (vals < 0).any() or (vals > 1).any():
        raise ValueError("per-class F1 values must lie in [0, 1]")
    return float(4.0 / np.sum(1.0 / np.maximum(vals, F1_FLOOR)))


def overall_f1(loc: float, dmg: float) -> float:
    """Combined score: 30% localization F1 + 70% damage F1."""
    if not (0.0 <= loc <= 1.0 and 0.0 <= dmg <= 1.0):
        raise ValueError(f"F1 inputs must lie in [0, 1], got loc={loc}, dmg={dmg}")
    return LOCALIZATION_WEIGHT * loc + DAMAGE_WEIGHT * dmg


@dataclass
class MetricsReport:
    per_class_f1: tuple[float, float, float, float, float]
    localization_f1: float
    damage_f1: float
    overall_f1: float

    def to_dict(self) -> dict:
        return {
            "localization_f1": self.localization_f1,
            "damage_f1": self.damage_f1,
            "overall_f1": self.overall_f1,
            "per_class_f1": list(self.per_class_f1),
        }

    def to_json(self) -> str:
        # float repr keeps full precision, well past 6 significant digits
        return json.dumps(self.to_dict(), indent=2)


def report_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    """Full metrics suite from one pooled 5-class confusion matrix."""
    per_class = f1_per_class(cm)
    loc = float(f1_per_class(collapse_to_localization(cm))[1])
    dmg = damage_f1(per_class)
    return MetricsReport(
        per_class_f1=tuple(float(v) for v in per_class),
        localization_f1=loc,
        damage_f1=dmg,
        overall_f1=overall_f1(loc, dmg),
    )
