import json
from fractions import Fraction

import numpy as np
import pytest

from damagemap.ingest import (
    build_index,
    load_pair,
    load_truth,
    parse_label_file,
    parse_wkt_polygon,
    rasterize,
)
from damagemap.types import IGNORE, PolygonAnnotation, label_histogram


def point_in_polygon_oracle(px, py, vertices):
    """Exact-rational ray cast with an on-segment boundary test.

    Deliberately a different algorithm from the production rasterizer: it
    computes actual ray/edge x-intersections with Fraction arithmetic.
    """
    pts = [(Fraction(x), Fraction(y)) for x, y in vertices]
    if pts[0] != pts[-1]:
        pts.append(pts[0])
    qx, qy = Fraction(px), Fraction(py)
    for (x1, y1), (x2, y2) in zip(pts[:-1], pts[1:]):
        cross = (x2 - x1) * (qy - y1) - (y2 - y1) * (qx - x1)
        if (
            cross == 0
            and min(x1, x2) <= qx <= max(x1, x2)
            and min(y1, y2) <= qy <= max(y1, y2)
        ):
            return True
    inside = False
    for (x1, y1), (x2, y2) in zip(pts[:-1], pts[1:]):
        if (y1 > qy) != (y2 > qy):
            x_int = x1 + (qy - y1) * (x2 - x1) / (y2 - y1)
            if qx < x_int:
                inside = not inside
    return inside


def brute_force_rasterize(annotations, height, width):
    mask = np.zeros((height, width), dtype=np.int64)
    ignore_cover = np.zeros((height, width), dtype=bool)
    for ann in annotations:
        verts = ann.vertices.copy()
        verts[:, 0] = np.clip(verts[:, 0], 0.0, float(width))
        verts[:, 1] = np.clip(verts[:, 1], 0.0, float(height))
        for row in range(height):
            for col in range(width):
                if point_in_polygon_oracle(col + 0.5, row + 0.5, verts.tolist()):
                    if ann.damage_class == IGNORE:
                        ignore_cover[row, col] = True
                    else:
                        mask[row, col] = max(mask[row, col], ann.damage_class)
    out = mask.copy()
    out[ignore_cover & (mask == 0)] = IGNORE
    return out


def random_annotations(rng, size, max_polygons=4):
    """Simple (star-shaped) polygons on the half-integer grid, some out of bounds."""
    annotations = []
    subtypes = ["no-damage", "minor-damage", "major-damage", "destroyed", "un-classified"]
    for k in range(rng.integers(1, max_polygons + 1)):
        n = int(rng.integers(3, 8))
        cx, cy = rng.uniform(0, size, 2)
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        radius = rng.uniform(2, size / 2, n)
        xs = np.round((cx + radius * np.cos(angles)) * 2) / 2
        ys = np.round((cy + radius * np.sin(angles)) * 2) / 2
        verts = np.c_[np.clip(xs, -2, size + 2), np.clip(ys, -2, size + 2)]
        if len(np.unique(verts, axis=0)) < 3:
            continue
        annotations.append(
            PolygonAnnotation(
                uid=f"p{k}", vertices=verts, subtype=subtypes[int(rng.integers(0, 5))]
            )
        )
    return annotations


LABEL_ONE_FEATURE = json.dumps(
    {
        "features": {
            "xy": [
                {
                    "wkt": "POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0))",
                    "properties": {"uid": "b1", "subtype": "minor-damage"},
                }
            ]
        }
    }
)


class TestParseWkt:
    def test_square(self):
        verts = parse_wkt_polygon("POLYGON ((0 0, 4 0, 4 4, 0 4, 0 0))")
        assert verts.shape == (5, 2)
        assert verts[0].tolist() == [0.0, 0.0]

    def test_not_a_polygon(self):
        with pytest.raises(ValueError, match="not a WKT POLYGON"):
            parse_wkt_polygon("LINESTRING (0 0, 1 1)")

    def test_interior_ring_rejected(self):
        wkt = "POLYGON ((0 0, 9 0, 9 9, 0 9, 0 0), (2 2, 3 2, 3 3, 2 2))"
        with pytest.raises(ValueError, match="interior rings"):
            parse_wkt_polygon(wkt)

    def test_bad_coordinate_pair(self):
        with pytest.raises(ValueError, match="coordinate pair"):
            parse_wkt_polygon("POLYGON ((0 0 7, 1 0, 1 1))")


class TestParseLabelFile:
    def test_one_feature(self):
        anns = parse_label_file(LABEL_ONE_FEATURE)
        assert len(anns) == 1
        assert anns[0].vertices.shape[0] == 5
        assert anns[0].subtype == "minor-damage"
        assert anns[0].uid == "b1"

    def test_empty_features(self):
        assert parse_label_file('{"features": {"xy": []}}') == []

    def test_duplicate_uid_warns_but_returns_both(self):
        payload = json.loads(LABEL_ONE_FEATURE)
        payload["features"]["xy"].append(payload["features"]["xy"][0])
        with pytest.warns(UserWarning, match="duplicate"):
            anns = parse_label_file(json.dumps(payload))
        assert len(anns) == 2

    def test_malformed_json(self):
        with pytest.raises(ValueError, match="not valid JSON"):
            parse_label_file("{nope")

    def test_missing_subtype_reports_feature_index(self):
        payload = json.loads(LABEL_ONE_FEATURE)
        del payload["features"]["xy"][0]["properties"]["subtype"]
        with pytest.raises(ValueError, match="feature 0"):
            parse_label_file(json.dumps(payload))

    def test_unparseable_wkt_reports_feature_index(self):
        payload = json.loads(LABEL_ONE_FEATURE)
        payload["features"]["xy"][0]["wkt"] = "POLYGON (oops)"
        with pytest.raises(ValueError, match="feature 0"):
            parse_label_file(json.dumps(payload))

    def test_extra_fields_ignored(self):
        payload = json.loads(LABEL_ONE_FEATURE)
        payload["metadata"] = {"width": 8}
        payload["features"]["lng_lat"] = []
        payload["features"]["xy"][0]["properties"]["feature_type"] = "building"
        assert len(parse_label_file(json.dumps(payload))) == 1


class TestRasterize:
    def test_no_annotations_all_zero(self):
        assert not rasterize([], 8, 8).any()

    def test_axis_aligned_square_hits_exact_centers(self):
        ann = PolygonAnnotation(
            uid="a",
            vertices=[(2, 2), (6, 2), (6, 6), (2, 6), (2, 2)],
            subtype="destroyed",
        )
        mask = rasterize([ann], 8, 8)
        expected = np.zeros((8, 8), dtype=np.uint8)
        expected[2:6, 2:6] = 4
        np.testing.assert_array_equal(mask, expected)

    def test_overlap_resolves_to_max_class(self):
        a = PolygonAnnotation(
            uid="a", vertices=[(0, 0), (5, 0), (5, 5), (0, 5)], subtype="no-damage"
        )
        b = PolygonAnnotation(
            uid="b", vertices=[(3, 3), (8, 3), (8, 8), (3, 8)], subtype="major-damage"
        )
        mask = rasterize([a, b], 8, 8)
        assert (mask[3:5, 3:5] == 3).all()  # intersection
        assert (mask[0:3, 0:3] == 1).all()
        assert (mask[6:8, 6:8] == 3).all()

    def test_unclassified_becomes_ignore_but_loses_to_numeric(self):
        u = PolygonAnnotation(
            uid="u", vertices=[(0, 0), (4, 0), (4, 4), (0, 4)], subtype="un-classified"
        )
        d = PolygonAnnotation(
            uid="d", vertices=[(2, 0), (4, 0), (4, 4), (2, 4)], subtype="destroyed"
        )
        mask = rasterize([u, d], 4, 4)
        assert (mask[:, 0:2] == IGNORE).all()
        assert (mask[:, 2:4] == 4).all()

    def test_out_of_bounds_vertices_clipped(self):
        ann = PolygonAnnotation(
            uid="a", vertices=[(-5, -5), (20, -5), (20, 3), (-5, 3)], subtype="minor-damage"
        )
        mask = rasterize([ann], 8, 8)
        assert (mask[0:3, :] == 2).all()
        assert not mask[3:, :].any()

    def test_deterministic(self, rng):
        anns = random_annotations(rng, 16)
        m1 = rasterize(anns, 16, 16)
        m2 = rasterize(anns, 16, 16)
        np.testing.assert_array_equal(m1, m2)

    def test_matches_exact_rational_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(12):
            size = int(rng.integers(6, 20))
            anns = random_annotations(rng, size)
            got = rasterize(anns, size, size)
            want = brute_force_rasterize(anns, size, size)
            np.testing.assert_array_equal(got, want)

    def test_boundary_centers_count_as_inside(self):
        # edge passes exactly through centers at x=1.5
        ann = PolygonAnnotation(
            uid="a", vertices=[(1.5, 0), (3, 0), (3, 3), (1.5, 3)], subtype="no-damage"
        )
        mask = rasterize([ann], 3, 3)
        assert (mask[:, 1] == 1).all()

    def test_histogram_permutation_invariant_without_overlap(self, rng):
        a = PolygonAnnotation(uid="a", vertices=[(0, 0), (3, 0), (3, 3), (0, 3)], subtype="no-damage")
        b = PolygonAnnotation(uid="b", vertices=[(5, 5), (8, 5), (8, 8), (5, 8)], subtype="destroyed")
        h1 = label_histogram(rasterize([a, b], 8, 8))
        h2 = label_histogram(rasterize([b, a], 8, 8))
        np.testing.assert_array_equal(h1, h2)


class TestBuildIndex:
    def _scene(self, root, split, sid, with_post=True, with_label=True):
        from PIL import Image

        images = root / split / "images"
        labels = root / split / "labels"
        images.mkdir(parents=True, exist_ok=True)
        labels.mkdir(parents=True, exist_ok=True)
        img = Image.new("RGB", (8, 8))
        img.save(images / f"{sid}_pre_disaster.png")
        if with_post:
            img.save(images / f"{sid}_post_disaster.png")
        if with_label:
            (labels / f"{sid}_post_disaster.json").write_text('{"features": {"xy": []}}')

    def test_complete_scenes_indexed_missing_skipped(self, tmp_path):
        for sid in ("a", "b", "c"):
            self._scene(tmp_path, "train", sid)
        self._scene(tmp_path, "train", "broken", with_post=False)
        index = build_index(tmp_path, "train")
        assert index.scene_ids == ["a", "b", "c"]
        assert index.skipped == ("broken",)

    def test_empty_directory(self, tmp_path):
        (tmp_path / "train" / "images").mkdir(parents=True)
        index = build_index(tmp_path, "train")
        assert len(index) == 0

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            build_index(tmp_path, "nope")

    def test_synthetic_round_trip(self, train_index, synth_dataset):
        _, spec, _ = synth_dataset
        assert len(train_index) == spec.split_plan["train"]
        assert train_index.skipped == ()


class TestLoadPair:
    def test_truth_histogram_matches_manifest(self, synth_dataset, train_index):
        _, _, manifest = synth_dataset
        for sid in train_index.scene_ids:
            pair = load_pair(train_index, sid)
            hist = label_histogram(pair.truth)[:5]
            assert hist.tolist() == manifest["scenes"][sid]["class_pixels"]

    def test_images_normalized(self, train_index):
        pair = load_pair(train_index, train_index.scene_ids[0])
        assert pair.pre.dtype == np.float32
        assert 0.0 <= pair.pre.min() and pair.pre.max() <= 1.0

    def test_missing_scene(self, train_index):
        with pytest.raises(KeyError, match="ghost"):
            load_pair(train_index, "ghost")

    def test_all_background_label_gives_zero_truth(self, tmp_path):
        from PIL import Image

        images = tmp_path / "train" / "images"
        labels = tmp_path / "train" / "labels"
        images.mkdir(parents=True)
        labels.mkdir(parents=True)
        Image.new("RGB", (8, 8)).save(images / "s_pre_disaster.png")
        Image.new("RGB", (8, 8)).save(images / "s_post_disaster.png")
        (labels / "s_post_disaster.json").write_text('{"features": {"xy": []}}')
        pair = load_pair(build_index(tmp_path, "train"), "s")
        assert not pair.truth.any()

    def test_dimension_mismatch_names_scene(self, tmp_path):
        from PIL import Image

        images = tmp_path / "train" / "images"
        labels = tmp_path / "train" / "labels"
        images.mkdir(parents=True)
        labels.mkdir(parents=True)
        Image.new("RGB", (8, 8)).save(images / "s_pre_disaster.png")
        Image.new("RGB", (8, 10)).save(images / "s_post_disaster.png")
        (labels / "s_post_disaster.json").write_text('{"features": {"xy": []}}')
        with pytest.raises(ValueError, match="'s'"):
            load_pair(build_index(tmp_path, "train"), "s")

    def test_load_truth_matches_load_pair(self, train_index):
        entry = train_index.entries[0]
        pair = load_pair(train_index, entry.scene_id)
        np.testing.assert_array_equal(load_truth(entry), pair.truth)
