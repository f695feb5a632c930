"""Class-frequency statistics, inverse-frequency weights, and the training losses.

Both losses are computed in float64 and return the scalar value together with
the analytic gradient with respect to the logits. Reductions use a single
fixed-order numpy summation over the flattened pixel axis, so results are
deterministic and stable well below 1e-9 regardless of caller-side pixel
ordering of equal inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import IGNORE, NUM_CLASSES, DatasetIndex, label_histogram

FREQUENCY_FLOOR = 1e-4


@dataclass(frozen=True)
class ClassFrequencies:
    """Pixel counts per class over a dataset split; IGNORE pixels excluded."""

    counts: tuple[int, int, int, int, int]

    def __post_init__(self):
        if len(self.counts) != NUM_CLASSES:
            raise ValueError(f"expected {NUM_CLASSES} counts, got {len(self.counts)}")
        if any(c < 0 for c in self.counts):
            raise ValueError("class counts must be non-negative")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class ClassWeights:
    """Per-class loss weights; mean over classes present in the split is 1."""

    weights: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.weights) != NUM_CLASSES:
            raise ValueError(f"expected {NUM_CLASSES} weights, got {len(self.weights)}")
        if any(not np.isfinite(w) or w <= 0 for w in self.weights):
            raise ValueError(f"weights must be positive and finite, got {self.weights}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @classmethod
    def uniform(cls) -> "ClassWeights":
        return cls((1.0,) * NUM_CLASSES)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=np.float64)


def frequencies_from_masks(masks) -> ClassFrequencies:
    """Exact per-class pixel counts over an iterable of truth masks."""
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    n = 0
    for mask in masks:
        counts += label_histogram(mask)[:NUM_CLASSES]
        n += 1
    if n == 0:
        raise ValueError("cannot compute class frequencies over zero masks")
    freq = ClassFrequencies(tuple(counts.tolist()))
    if freq.total == 0:
        raise ValueError("split contains no labeled (non-IGNORE) pixels")
    return freq


def compute_class_frequencies(index: DatasetIndex) -> ClassFrequencies:
    """Pixel counts per class over all truth masks in a split."""
    from .ingest import load_truth  # local import to keep module deps one-way

    if len(index) == 0:
        raise ValueError(f"split {index.split!r} is empty")
    return frequencies_from_masks(load_truth(e) for e in index.entries)


def inverse_frequency_weights(
    freq: ClassFrequencies, floor: float = FREQUENCY_FLOOR
) -> ClassWeights:
    """Weights proportional to inverse class frequency, floored and mean-normalized.

    Frequencies below `floor` (including absent classes) are clamped to it, and
    the normalization makes the mean weight over classes with nonzero counts
    equal 1, so loss magnitudes stay comparable across weighting schemes.
    """
    counts = np.asarray(freq.counts, dtype=np.float64)
    total = float(freq.total)
    if total <= 0:
        raise ValueError("class frequencies are empty")
    f = np.maximum(counts / total, floor)
    raw = 1.0 / f
    present = counts > 0
    return ClassWeights(tuple((raw / raw[present].mean()).tolist()))


def _flatten_inputs(logits: np.ndarray, truth: np.ndarray):
    logits = np.asarray(logits, dtype=np.float64)
    truth = np.asarray(truth)
    if logits.shape[-1] != NUM_CLASSES:
        raise ValueError(f"logits must have {NUM_CLASSES} channels last, got {logits.shape}")
    if logits.shape[:-1] != truth.shape:
        raise ValueError(f"logits shape {logits.shape} does not match truth shape {truth.shape}")
    if not np.issubdtype(truth.dtype, np.integer):
        raise ValueError(f"truth must be an integer array, got dtype {truth.dtype}")
    flat_logits = logits.reshape(-1, NUM_CLASSES)
    flat_truth = truth.reshape(-1)
    keep = flat_truth != IGNORE
    if not keep.any():
        raise ValueError("all pixels are IGNORE; loss is undefined")
    y = flat_truth[keep]
    if ((y < 0) | (y >= NUM_CLASSES)).any():
        raise ValueError("truth labels must lie in [0, 4] or be IGNORE")
    return logits, flat_logits, keep, y.astype(np.int64)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def weighted_cross_entropy(
    logits: np.ndarray, truth: np.ndarray, weights: ClassWeights
) -> tuple[float, np.ndarray]:
    """Weighted-mean cross-entropy over non-IGNORE pixels, with gradient.

    loss = sum_i w[y_i] * (-log softmax(z_i)[y_i]) / sum_i w[y_i]
    """
    logits, flat, keep, y = _flatten_inputs(logits, truth)
    w = weights.as_array()[y]
    z = flat[keep]
    logp = _log_softmax(z)
    ce = -logp[np.arange(len(y)), y]
    denom = w.sum()
    loss = float((w * ce).sum() / denom)

    p = np.exp(logp)
    p[np.arange(len(y)), y] -= 1.0
    grad_flat = np.zeros_like(flat)
    grad_flat[keep] = (w[:, None] / denom) * p
    return loss, grad_flat.reshape(logits.shape)


def ordinal_cross_entropy(logits: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy scaled by (1 + ordinal distance to the predicted class).

    The distance factor uses the argmax prediction (ties to the lower class)
    and is treated as a constant in the gradient.
    """
    logits, flat, keep, y = _flatten_inputs(logits, truth)
    z = flat[keep]
    pred = np.argmax(z, axis=-1)
    d = 1.0 + np.abs(pred - y)
    logp = _log_softmax(z)
    ce = -logp[np.arange(len(y)), y]
    n = len(y)
    loss = float((d * ce).sum() / n)

    p = np.exp(logp)
    p[np.arange(len(y)), y] -= 1.0
    grad_flat = np.zeros_like(flat)
    grad_flat[keep] = (d[:, None] / n) * p
    return loss, grad_flat.reshape(logits.shape)
