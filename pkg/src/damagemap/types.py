"""Shared vocabulary: damage classes, images, masks, annotations, dataset index.

Images are numpy float arrays of shape (H, W, 3) with values in [0, 1].
Damage masks are integer arrays of shape (H, W) over {0..4} plus the IGNORE
sentinel for pixels excluded from loss and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

NUM_CLASSES = 5

# Sentinel for pixels excluded from loss and metrics (un-classified polygons).
# 255 keeps masks storable as 8-bit rasters.
IGNORE = 255


class DamageClass(IntEnum):
    NO_BUILDING = 0
    NO_DAMAGE = 1
    MINOR_DAMAGE = 2
    MAJOR_DAMAGE = 3
    DESTROYED = 4


SUBTYPES = ("no-damage", "minor-damage", "major-damage", "destroyed", "un-classified")

_SUBTYPE_TO_CLASS = {
    "no-damage": int(DamageClass.NO_DAMAGE),
    "minor-damage": int(DamageClass.MINOR_DAMAGE),
    "major-damage": int(DamageClass.MAJOR_DAMAGE),
    "destroyed": int(DamageClass.DESTROYED),
    "un-classified": IGNORE,
}

_CLASS_TO_SUBTYPE = {
    int(DamageClass.NO_DAMAGE): "no-damage",
    int(DamageClass.MINOR_DAMAGE): "minor-damage",
    int(DamageClass.MAJOR_DAMAGE): "major-damage",
    int(DamageClass.DESTROYED): "destroyed",
}


def class_of_subtype(subtype: str) -> int:
    """Map an annotation subtype string to its damage class, or IGNORE."""
    try:
        return _SUBTYPE_TO_CLASS[subtype]
    except KeyError:
        raise ValueError(f"unknown annotation subtype: {subtype!r}") from None


def subtype_of_class(label: int) -> str:
    """Inverse of class_of_subtype for the four damage classes."""
    try:
        return _CLASS_TO_SUBTYPE[int(label)]
    except KeyError:
        raise ValueError(f"no subtype for class {label!r}") from None


def validate_image(pixels: np.ndarray, name: str = "image") -> np.ndarray:
    """Check an (H, W, 3) float array with values in [0, 1]."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {pixels.shape}")
    if pixels.shape[0] <= 0 or pixels.shape[1] <= 0:
        raise ValueError(f"{name} must have positive dimensions, got {pixels.shape}")
    if not np.isfinite(pixels).all():
        raise ValueError(f"{name} contains non-finite values")
    lo, hi = float(pixels.min()), float(pixels.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1], got range [{lo}, {hi}]")
    return pixels


def validate_mask(labels: np.ndarray, name: str = "mask") -> np.ndarray:
    """Check an (H, W) integer array over {0..4} plus IGNORE."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"{name} must be an integer array, got dtype {labels.dtype}")
    bad = (labels != IGNORE) & ((labels < 0) | (labels >= NUM_CLASSES))
    if bad.any():
        values = sorted(np.unique(labels[bad]).tolist())
        raise ValueError(f"{name} contains invalid labels {values}")
    return labels


def label_histogram(mask: np.ndarray) -> np.ndarray:
    """Counts per class 0..4 plus an IGNORE bucket at index 5; sums to H*W."""
    mask = validate_mask(mask)
    counts = np.zeros(NUM_CLASSES + 1, dtype=np.int64)
    values, n = np.unique(mask, return_counts=True)
    for v, c in zip(values.tolist(), n.tolist()):
        counts[NUM_CLASSES if v == IGNORE else v] = c
    return counts


def derive_localization(mask: np.ndarray) -> np.ndarray:
    """Joint-prediction rule: building iff damage class >= 1; IGNORE preserved."""
    mask = validate_mask(mask)
    out = np.zeros_like(mask)
    out[(mask >= 1) & (mask < NUM_CLASSES)] = 1
    out[mask == IGNORE] = IGNORE
    return out


@dataclass(frozen=True)
class PolygonAnnotation:
    """One labeled building footprint: a closed pixel-space ring plus subtype."""

    uid: str
    vertices: np.ndarray  # (N, 2) float64, columns (x, y); ring order preserved
    subtype: str

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError(
                f"polygon {self.uid!r} needs at least 3 (x, y) vertices, got shape {verts.shape}"
            )
        if self.subtype not in SUBTYPES:
            raise ValueError(f"unknown annotation subtype: {self.subtype!r}")
        object.__setattr__(self, "vertices", verts)

    @property
    def damage_class(self) -> int:
        return class_of_subtype(self.subtype)


@dataclass
class ImagePair:
    """Co-registered pre/post disaster images of one scene, optionally with truth."""

    scene_id: str
    pre: np.ndarray
    post: np.ndarray
    truth: np.ndarray | None = None

    def __post_init__(self):
        validate_image(self.pre, "pre image")
        validate_image(self.post, "post image")
        if self.pre.shape != self.post.shape:
            raise ValueError(
                f"scene {self.scene_id!r}: pre shape {self.pre.shape} != post shape {self.post.shape}"
            )
        if self.truth is not None:
            validate_mask(self.truth, "truth mask")
            if self.truth.shape != self.pre.shape[:2]:
                raise ValueError(
                    f"scene {self.scene_id!r}: truth shape {self.truth.shape} "
                    f"!= image shape {self.pre.shape[:2]}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.pre.shape[:2]


@dataclass(frozen=True)
class SceneEntry:
    scene_id: str
    pre_path: Path
    post_path: Path
    label_path: Path


@dataclass
class DatasetIndex:
    """Per-split listing of complete scenes; entries sorted by scene_id."""

    split: str
    entries: list[SceneEntry] = field(default_factory=list)
    skipped: tuple[str, ...] = ()  # scene ids dropped for missing files

    def __post_init__(self):
        ids = [e.scene_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({s for s in ids if ids.count(s) > 1})
            raise ValueError(f"duplicate scene ids in split {self.split!r}: {dupes}")
        self.entries = sorted(self.entries, key=lambda e: e.scene_id)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def scene_ids(self) -> list[str]:
        return [e.scene_id for e in self.entries]

    def entry(self, scene_id: str) -> SceneEntry:
        for e in self.entries:
            if e.scene_id == scene_id:
                return e
        raise KeyError(f"scene {scene_id!r} not in {self.split!r} index")
