"""Seeded synthetic scenes where damage is only recoverable bi-temporally.

Each scene is a textured background plus non-overlapping rectangular
buildings with random base colors. The post image applies a per-class
rotation of the color space about the gray axis (0/40/80/120 degrees for
classes 1-4), and destroyed buildings are additionally pixel-scrambled.
Because base hues are uniform and the pixel noise is isotropic Gaussian,
the post-only appearance distribution is identical across classes: a model
must compare pre and post to recover the damage level. Building pixel
counts are exact rectangle areas, recorded in the manifest as an oracle
for the rasterization path.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .types import NUM_CLASSES, subtype_of_class

ROTATION_DEGREES = {1: 0.0, 2: 40.0, 3: 80.0, 4: 120.0}

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SyntheticSpec:
    num_scenes: int
    image_size: int = 64
    buildings_per_scene: tuple[int, int] = (3, 6)
    class_mix: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    seed: int = 0
    # split name -> scene count; defaults to all scenes in "train"
    splits: dict[str, int] | None = None

    def __post_init__(self):
        if self.num_scenes <= 0:
            raise ValueError(f"num_scenes must be positive, got {self.num_scenes}")
        if self.image_size % 2 != 0 or self.image_size < 8:
            raise ValueError(f"image_size must be even and >= 8, got {self.image_size}")
        lo, hi = self.buildings_per_scene
        if not (0 < lo <= hi):
            raise ValueError(f"bad buildings_per_scene range: {self.buildings_per_scene}")
        object.__setattr__(self, "buildings_per_scene", (int(lo), int(hi)))
        mix = tuple(float(p) for p in self.class_mix)
        if len(mix) != 4 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError(f"class_mix must be 4 proportions summing to 1, got {self.class_mix}")
        object.__setattr__(self, "class_mix", mix)
        if self.splits is not None:
            splits = {str(k): int(v) for k, v in self.splits.items()}
            if any(v <= 0 for v in splits.values()):
                raise ValueError(f"split scene counts must be positive, got {splits}")
            if sum(splits.values()) != self.num_scenes:
                raise ValueError(
                    f"split counts {splits} must sum to num_scenes={self.num_scenes}"
                )
            object.__setattr__(self, "splits", splits)

    @property
    def split_plan(self) -> dict[str, int]:
        return dict(self.splits) if self.splits else {"train": self.num_scenes}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["buildings_per_scene"] = list(self.buildings_per_scene)
        d["class_mix"] = list(self.class_mix)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)


def _gray_axis_rotation(degrees: float) -> np.ndarray:
    """Rotation of RGB space about the (1,1,1) axis (a hue rotation)."""
    theta = np.deg2rad(degrees)
    axis = np.ones(3) / np.sqrt(3.0)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


_ROTATIONS = {c: _gray_axis_rotation(deg) for c, deg in ROTATION_DEGREES.items()}

# Chroma basis orthogonal to the gray axis.
_CHROMA_U = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_CHROMA_V = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)


def _quota_classes(n: int, mix: tuple[float, ...], rng: np.random.Generator) -> np.ndarray:
    """Largest-remainder allocation of n buildings to classes 1..4, shuffled."""
    target = np.asarray(mix) * n
    base = np.floor(target).astype(np.int64)
    remainder = target - base
    short = n - int(base.sum())
    if short > 0:
        order = np.argsort(-remainder, kind="stable")
        base[order[:short]] += 1
    classes = np.repeat(np.arange(1, 5), base)
    rng.shuffle(classes)
    return classes


def _place_rectangles(rng: np.random.Generator, size: int, count: int) -> list[tuple[int, int, int, int]]:
    """Non-overlapping integer rectangles (x0, y0, w, h); drops ones that won't fit."""
    lo = max(4, size // 8)
    hi = max(lo + 1, size // 3)
    placed: list[tuple[int, int, int, int]] = []
    for _ in range(count):
        for _attempt in range(60):
            w = int(rng.integers(lo, hi + 1))
            h = int(rng.integers(lo, hi + 1))
            x0 = int(rng.integers(0, size - w + 1))
            y0 = int(rng.integers(0, size - h + 1))
            if all(
                x0 + w <= px or px + pw <= x0 or y0 + h <= py or py + ph <= y0
                for px, py, pw, ph in placed
            ):
                placed.append((x0, y0, w, h))
                break
    return placed


def _write_png(array: np.ndarray, path: Path, mode: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png.tmp")
    os.close(fd)
    try:
        PILImage.fromarray(array, mode=mode).save(tmp, format="PNG")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def write_json_atomic(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".json.tmp")
    os.close(fd)
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _render_scene(
    rng: np.random.Generator, size: int, rects, classes
) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Returns (pre, post) uint8 images plus per-building records."""
    base = rng.uniform(0.08, 0.20, size=3)
    pre = np.clip(base[None, None, :] + rng.normal(0.0, 0.02, (size, size, 3)), 0.0, 1.0)

    buildings = []
    for k, ((x0, y0, w, h), cls) in enumerate(zip(rects, classes)):
        g = rng.uniform(0.45, 0.65)
        radius = rng.uniform(0.12, 0.22)
        # hues sit on a 40-degree grid, which every class rotation maps onto
        # itself, so the post-only hue distribution is class-independent
        phi = float(rng.integers(0, 9)) * (2.0 * np.pi / 9.0)
        color = g * np.ones(3) + radius * (np.cos(phi) * _CHROMA_U + np.sin(phi) * _CHROMA_V)
        patch = color[None, None, :] + rng.normal(0.0, 0.02, (h, w, 3))
        pre[y0 : y0 + h, x0 : x0 + w] = patch
        buildings.append(
            {"index": k, "x0": x0, "y0": y0, "width": w, "height": h, "damage_class": int(cls)}
        )

    post = pre.copy()
    for (x0, y0, w, h), cls in zip(rects, classes):
        patch = pre[y0 : y0 + h, x0 : x0 + w]
        rotated = patch @ _ROTATIONS[int(cls)].T
        if int(cls) == 4:
            flat = rotated.reshape(-1, 3)
            rotated = flat[rng.permutation(len(flat))].reshape(h, w, 3)
        post[y0 : y0 + h, x0 : x0 + w] = rotated

    pre8 = np.round(np.clip(pre, 0.0, 1.0) * 255.0).astype(np.uint8)
    post8 = np.round(np.clip(post, 0.0, 1.0) * 255.0).astype(np.uint8)
    return pre8, post8, buildings


def _label_payload(scene_id: str, size: int, buildings: list[dict]) -> dict:
    features = []
    for b in buildings:
        x0, y0 = b["x0"], b["y0"]
        x1, y1 = x0 + b["width"], y0 + b["height"]
        wkt = f"POLYGON (({x0} {y0}, {x1} {y0}, {x1} {y1}, {x0} {y1}, {x0} {y0}))"
        features.append(
            {
                "wkt": wkt,
                "properties": {
                    "uid": f"{scene_id}_b{b['index']}",
                    "subtype": subtype_of_class(b["damage_class"]),
                },
            }
        )
    return {"features": {"xy": features}, "metadata": {"width": size, "height": size}}


def generate_synthetic(spec: SyntheticSpec, out_dir: Path | str) -> dict:
    """Write a deterministic dataset tree plus manifest; returns the manifest."""
    out = Path(out_dir)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.num_scenes + len(spec.split_plan))

    manifest: dict = {"spec": spec.to_dict(), "splits": {}, "scenes": {}}
    scene_index = 0
    for split_number, (split, count) in enumerate(sorted(spec.split_plan.items())):
        # split-level rng drives the class quota so small minorities still appear
        split_rng = np.random.default_rng(seeds[spec.num_scenes + split_number])
        scene_rngs = []
        rects_per_scene = []
        for _ in range(count):
            rng = np.random.default_rng(seeds[scene_index])
            scene_index += 1
            n_b = int(rng.integers(spec.buildings_per_scene[0], spec.buildings_per_scene[1] + 1))
            rects_per_scene.append(_place_rectangles(rng, spec.image_size, n_b))
            scene_rngs.append(rng)
        classes = _quota_classes(sum(len(r) for r in rects_per_scene), spec.class_mix, split_rng)

        split_pixels = np.zeros(NUM_CLASSES, dtype=np.int64)
        split_scene_ids = []
        offset = 0
        for j, (rng, rects) in enumerate(zip(scene_rngs, rects_per_scene)):
            scene_id = f"{split}_{j:04d}"
            scene_classes = classes[offset : offset + len(rects)]
            offset += len(rects)
            pre8, post8, buildings = _render_scene(rng, spec.image_size, rects, scene_classes)

            images = out / split / "images"
            labels = out / split / "labels"
            _write_png(pre8, images / f"{scene_id}_pre_disaster.png", "RGB")
            _write_png(post8, images / f"{scene_id}_post_disaster.png", "RGB")
            write_json_atomic(
                _label_payload(scene_id, spec.image_size, buildings),
                labels / f"{scene_id}_post_disaster.json",
            )

            pixels = np.zeros(NUM_CLASSES, dtype=np.int64)
            for b in buildings:
                pixels[b["damage_class"]] += b["width"] * b["height"]
            pixels[0] = spec.image_size * spec.image_size - int(pixels[1:].sum())
            split_pixels += pixels
            split_scene_ids.append(scene_id)
            manifest["scenes"][scene_id] = {
                "split": split,
                "class_pixels": pixels.tolist(),
                "buildings": buildings,
            }

        manifest["splits"][split] = {
            "scene_ids": split_scene_ids,
            "class_pixels": split_pixels.tolist(),
        }

    write_json_atomic(manifest, out / MANIFEST_NAME)
    return manifest
