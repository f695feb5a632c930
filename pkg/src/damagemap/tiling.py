"""Quadrant tiling: split a scene into four equal crops and reassemble exactly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

QUADRANT_ORDER = ("top-left", "top-right", "bottom-left", "bottom-right")


@dataclass
class TileSet:
    """Four quadrant crops in QUADRANT_ORDER plus the source dimensions."""

    tiles: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    origin_shape: tuple[int, int]

    def __post_init__(self):
        if len(self.tiles) != 4:
            raise ValueError(f"a TileSet has exactly 4 tiles, got {len(self.tiles)}")

    def __iter__(self):
        return iter(self.tiles)


def split_quadrants(x: np.ndarray) -> TileSet:
    """Split an (H, W[, C]) array into non-overlapping quadrants; H, W must be even."""
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"expected an (H, W[, C]) array, got shape {x.shape}")
    h, w = x.shape[0], x.shape[1]
    if h % 2 != 0 or w % 2 != 0:
        raise ValueError(f"quadrant split needs even dimensions, got {h}x{w}")
    hh, hw = h // 2, w // 2
    tiles = (
        x[:hh, :hw],
        x[:hh, hw:],
        x[hh:, :hw],
        x[hh:, hw:],
    )
    return TileSet(tiles=tiles, origin_shape=(h, w))


def merge_quadrants(t: TileSet | Sequence[np.ndarray]) -> np.ndarray:
    """Reassemble four quadrants; exact inverse of split_quadrants."""
    tiles = tuple(t.tiles) if isinstance(t, TileSet) else tuple(np.asarray(a) for a in t)
    if len(tiles) != 4:
        raise ValueError(f"expected 4 tiles, got {len(tiles)}")
    shapes = {a.shape for a in tiles}
    if len(shapes) != 1:
        raise ValueError(f"tiles must share one shape, got {sorted(shapes)}")
    tl, tr, bl, br = tiles
    top = np.concatenate([tl, tr], axis=1)
    bottom = np.concatenate([bl, br], axis=1)
    return np.concatenate([top, bottom], axis=0)
