"""Label-file parsing, polygon rasterization, and dataset indexing.

Label files are JSON: {"features": {"xy": [{"wkt": "POLYGON ((x y, ...))",
"properties": {"uid": ..., "subtype": ...}}]}}; extra fields are ignored.
Directory layout per split:
    <root>/<split>/images/<scene_id>_pre_disaster.png
    <root>/<split>/images/<scene_id>_post_disaster.png
    <root>/<split>/labels/<scene_id>_post_disaster.json
"""

from __future__ import annotations

import json
import re
import warnings
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .types import (
    IGNORE,
    NUM_CLASSES,
    DatasetIndex,
    ImagePair,
    PolygonAnnotation,
    SceneEntry,
    class_of_subtype,
)

PRE_SUFFIX = "_pre_disaster.png"
POST_SUFFIX = "_post_disaster.png"
LABEL_SUFFIX = "_post_disaster.json"

_WKT_POLYGON = re.compile(r"^\s*POLYGON\s*\(\s*(.*)\s*\)\s*$", re.DOTALL)


def parse_wkt_polygon(wkt: str) -> np.ndarray:
    """Parse a WKT POLYGON outer ring into an (N, 2) array of (x, y) vertices.

    Interior rings (holes) are rejected; vertex order is preserved as written.
    """
    m = _WKT_POLYGON.match(wkt)
    if m is None:
        raise ValueError(f"not a WKT POLYGON: {wkt!r}")
    body = m.group(1).strip()
    rings = re.findall(r"\(([^()]*)\)", body)
    if not rings:
        raise ValueError(f"WKT POLYGON has no ring: {wkt!r}")
    if len(rings) > 1:
        raise ValueError("polygons with interior rings are not supported")
    vertices = []
    for pair in rings[0].split(","):
        parts = pair.split()
        if len(parts) != 2:
            raise ValueError(f"bad WKT coordinate pair: {pair.strip()!r}")
        try:
            vertices.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ValueError(f"bad WKT coordinate pair: {pair.strip()!r}") from None
    if len(vertices) < 3:
        raise ValueError(f"WKT ring needs at least 3 vertices, got {len(vertices)}")
    return np.asarray(vertices, dtype=np.float64)


def parse_label_file(text: str) -> list[PolygonAnnotation]:
    """Parse label-file contents into annotations, order preserved."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValueError(f"label file is not valid JSON: {e}") from None
    try:
        features = obj["features"]["xy"]
    except (TypeError, KeyError):
        raise ValueError('label file missing "features" -> "xy" list') from None
    if not isinstance(features, list):
        raise ValueError('"features" -> "xy" must be a list')

    annotations: list[PolygonAnnotation] = []
    seen_uids: set[str] = set()
    for i, feat in enumerate(features):
        try:
            props = feat["properties"]
            uid = props["uid"]
            subtype = props["subtype"]
            wkt = feat["wkt"]
        except (TypeError, KeyError) as e:
            raise ValueError(f"feature {i}: missing field {e}") from None
        try:
            vertices = parse_wkt_polygon(wkt)
            ann = PolygonAnnotation(uid=str(uid), vertices=vertices, subtype=subtype)
        except ValueError as e:
            raise ValueError(f"feature {i}: {e}") from None
        if ann.uid in seen_uids:
            warnings.warn(f"duplicate annotation uid {ann.uid!r}", stacklevel=2)
        seen_uids.add(ann.uid)
        annotations.append(ann)
    return annotations


def _polygon_mask(vertices: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pixels whose centers lie inside or on the boundary of the ring.

    Crossing parity and the on-boundary test are both decided from edge cross
    products only (no divisions), so results are exact whenever vertex
    coordinates and products stay within float64's integer range.
    """
    verts = vertices.astype(np.float64)
    if not np.array_equal(verts[0], verts[-1]):
        verts = np.vstack([verts, verts[0]])

    px = np.arange(width, dtype=np.float64) + 0.5
    py = np.arange(height, dtype=np.float64) + 0.5
    gx = px[None, :]  # (1, W)
    gy = py[:, None]  # (H, 1)

    crossings = np.zeros((height, width), dtype=np.int64)
    on_edge = np.zeros((height, width), dtype=bool)
    for (x1, y1), (x2, y2) in zip(verts[:-1], verts[1:]):
        # cross > 0 iff the pixel center is strictly left of the directed edge
        cross = (x2 - x1) * (gy - y1) - (y2 - y1) * (gx - x1)
        within_bbox = (
            (gx >= min(x1, x2))
            & (gx <= max(x1, x2))
            & (gy >= min(y1, y2))
            & (gy <= max(y1, y2))
        )
        on_edge |= (cross == 0.0) & within_bbox
        if y1 == y2:
            continue
        straddles = (y1 > gy) != (y2 > gy)
        # ray to +x crosses the edge iff the center lies on the edge's left
        # (for upward edges) or right (for downward edges)
        hits = straddles & ((cross > 0) if (y2 > y1) else (cross < 0))
        crossings += hits
    return (crossings % 2 == 1) | on_edge


def rasterize(annotations: list[PolygonAnnotation], height: int, width: int) -> np.ndarray:
    """Burn annotations into a damage mask using the pixel-center rule.

    Overlaps resolve to the maximum damage class; un-classified polygons mark
    IGNORE only where no numeric class claims the pixel. Vertices are clipped
    to the image rectangle before the inside test.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"mask dimensions must be positive, got {height}x{width}")
    numeric = np.zeros((height, width), dtype=np.uint8)
    ignore_cover = np.zeros((height, width), dtype=bool)
    for ann in annotations:
        verts = ann.vertices.copy()
        verts[:, 0] = np.clip(verts[:, 0], 0.0, float(width))
        verts[:, 1] = np.clip(verts[:, 1], 0.0, float(height))
        inside = _polygon_mask(verts, height, width)
        c = class_of_subtype(ann.subtype)
        if c == IGNORE:
            ignore_cover |= inside
        else:
            numeric[inside] = np.maximum(numeric[inside], np.uint8(c))
    mask = numeric.copy()
    mask[ignore_cover & (numeric == 0)] = IGNORE
    return mask


def load_image(path: Path | str) -> np.ndarray:
    """Decode an 8-bit RGB PNG to float32 (H, W, 3) in [0, 1]."""
    with PILImage.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def image_size(path: Path | str) -> tuple[int, int]:
    """(height, width) of an image without decoding pixel data."""
    with PILImage.open(path) as img:
        w, h = img.size
    return h, w


def build_index(data_root: Path | str, split: str) -> DatasetIndex:
    """Index scenes of one split that have all three files; count the rest."""
    root = Path(data_root)
    images_dir = root / split / "images"
    labels_dir = root / split / "labels"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"missing images directory: {images_dir}")

    entries: list[SceneEntry] = []
    skipped: list[str] = []
    for pre_path in sorted(images_dir.glob(f"*{PRE_SUFFIX}")):
        scene_id = pre_path.name[: -len(PRE_SUFFIX)]
        post_path = images_dir / f"{scene_id}{POST_SUFFIX}"
        label_path = labels_dir / f"{scene_id}{LABEL_SUFFIX}"
        if post_path.is_file() and label_path.is_file():
            entries.append(
                SceneEntry(
                    scene_id=scene_id,
                    pre_path=pre_path,
                    post_path=post_path,
                    label_path=label_path,
                )
            )
        else:
            skipped.append(scene_id)
    return DatasetIndex(split=split, entries=entries, skipped=tuple(sorted(skipped)))


def load_truth(entry: SceneEntry) -> np.ndarray:
    """Rasterize a scene's label file at its post-image resolution."""
    h, w = image_size(entry.post_path)
    annotations = parse_label_file(entry.label_path.read_text(encoding="utf-8"))
    return rasterize(annotations, h, w)


def load_pair(index: DatasetIndex, scene_id: str) -> ImagePair:
    """Load and normalize one scene's images plus its rasterized truth mask."""
    entry = index.entry(scene_id)
    pre = load_image(entry.pre_path)
    post = load_image(entry.post_path)
    if pre.shape != post.shape:
        raise ValueError(
            f"scene {scene_id!r}: pre image is {pre.shape[:2]} but post image is {post.shape[:2]}"
        )
    annotations = parse_label_file(entry.label_path.read_text(encoding="utf-8"))
    truth = rasterize(annotations, post.shape[0], post.shape[1])
    return ImagePair(scene_id=scene_id, pre=pre, post=post, truth=truth)
