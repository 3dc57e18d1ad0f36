import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damagefv.imaging import (
    AnnotationSet, MEDIUM, MILD, Polygon, SEVERE, Sample, fill_polygon, filter_empty,
    load_annotations, load_image, load_labelmap, make_folds, majority_vote,
    merge_annotations, rasterize_annotations, rasterize_polygons, save_annotations,
    save_image, save_labelmap,
)


def even_odd_oracle(points, w, h):
    """Classic crossing test per pixel centre, written independently of the scanline fill."""
    pts = [tuple(map(float, p)) for p in points]
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            px, py = c + 0.5, r + 0.5
            inside = False
            for k in range(len(pts)):
                (xa, ya), (xb, yb) = pts[k], pts[(k + 1) % len(pts)]
                if (ya > py) != (yb > py):
                    xi = xa + (py - ya) * (xb - xa) / (yb - ya)
                    if xi > px:
                        inside = not inside
            out[r, c] = inside
    return out


def test_square_severe():
    lm, skipped = rasterize_polygons([Polygon(SEVERE, [[2, 2], [7, 2], [7, 7], [2, 7]])], 10, 10)
    assert skipped == 0
    expected = np.zeros((10, 10), dtype=np.uint8)
    expected[2:7, 2:7] = 3
    np.testing.assert_array_equal(lm, expected)


def test_nested_severity_wins():
    outer = Polygon(MILD, [[0, 0], [10, 0], [10, 10], [0, 10]])
    inner = Polygon(SEVERE, [[3, 3], [6, 3], [6, 6], [3, 6]])
    for order in ([outer, inner], [inner, outer]):
        lm, _ = rasterize_polygons(order, 10, 10)
        assert np.all(lm[3:6, 3:6] == SEVERE)
        assert lm[0, 0] == MILD and lm[9, 9] == MILD


def test_triangle_matches_oracle():
    tri = [[0, 0], [4, 0], [0, 4]]
    np.testing.assert_array_equal(fill_polygon(tri, 5, 5), even_odd_oracle(tri, 5, 5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 14), st.floats(-2, 14)), min_size=3, max_size=8))
def test_fill_matches_oracle_random(points):
    np.testing.assert_array_equal(fill_polygon(points, 12, 12), even_odd_oracle(points, 12, 12))


def test_degenerate_polygons_skipped(caplog):
    ann = AnnotationSet("img", 6, 6, [
        ("a", [Polygon(MILD, [[1, 1], [1, 1], [3, 3]]), Polygon(MILD, [[0, 0], [4, 0], [4, 4], [0, 4]])]),
    ])
    with caplog.at_level("WARNING"):
        maps = rasterize_annotations(ann, 6, 6)
    assert "skipped 1" in caplog.text
    assert maps[0].sum() == 16


def test_rasterize_idempotent():
    polys = [Polygon(MEDIUM, [[0.3, 1.2], [8.7, 0.4], [6.1, 9.9]])]
    a, _ = rasterize_polygons(polys, 10, 10)
    b, _ = rasterize_polygons(polys, 10, 10)
    assert a.tobytes() == b.tobytes()


def test_majority_single_annotator_identity():
    lm = np.random.default_rng(0).integers(0, 4, (5, 6)).astype(np.uint8)
    np.testing.assert_array_equal(majority_vote([lm]), lm)


def test_majority_votes():
    S, Md, M = np.full((1, 1), 3, np.uint8), np.full((1, 1), 2, np.uint8), np.full((1, 1), 1, np.uint8)
    assert majority_vote([S, S, Md])[0, 0] == 3
    assert majority_vote([M, S])[0, 0] == 3
    assert majority_vote([Md, M])[0, 0] == 2


def vote_oracle(votes):
    counts = {c: votes.count(c) for c in range(4)}
    best = max(counts.values())
    return max(c for c in range(4) if counts[c] == best)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.integers(0, 3), min_size=6, max_size=6), min_size=1, max_size=5), st.randoms())
def test_majority_oracle_and_permutation(votes, rnd):
    maps = [np.array(v, dtype=np.uint8).reshape(2, 3) for v in votes]
    out = majority_vote(maps)
    for i in range(6):
        assert out.ravel()[i] == vote_oracle([v[i] for v in votes])
    shuffled = list(maps)
    rnd.shuffle(shuffled)
    np.testing.assert_array_equal(majority_vote(shuffled), out)


def test_majority_errors():
    with pytest.raises(ValueError):
        majority_vote([])
    with pytest.raises(ValueError):
        majority_vote([np.zeros((2, 2), np.uint8), np.zeros((3, 2), np.uint8)])


def test_folds_paper_size():
    f = make_folds(1085, 5, seed=0)
    assert f.sizes() == [217] * 5


def test_folds_basic():
    f = make_folds(5, 5, seed=3)
    assert sorted(len(f.test_indices(k)) for k in range(5)) == [1] * 5
    assert make_folds(40, 5, 9) == make_folds(40, 5, 9)
    with pytest.raises(ValueError):
        make_folds(3, 5)
    with pytest.raises(ValueError):
        make_folds(10, 1)


@given(st.integers(2, 60), st.integers(2, 9), st.integers(0, 2**32 - 1))
def test_folds_partition(n, k, seed):
    if n < k:
        return
    f = make_folds(n, k, seed)
    tests = [f.test_indices(i) for i in range(k)]
    assert sorted(i for t in tests for i in t) == list(range(n))
    sizes = f.sizes()
    assert max(sizes) - min(sizes) <= 1
    for i in range(k):
        assert set(f.train_indices(i)) | set(tests[i]) == set(range(n))


def test_filter_empty():
    empty = np.zeros((4, 4), np.uint8)
    one = empty.copy()
    one[2, 2] = SEVERE
    assert filter_empty([Sample("a", None, empty)]) == []
    assert len(filter_empty([Sample("b", None, one)])) == 1
    corpus = [Sample(str(i), None, empty if i < 6 else one) for i in range(10)]
    assert len(filter_empty(corpus)) == 4


def test_annotation_json_roundtrip(tmp_path):
    ann = AnnotationSet("scene", 8, 6, [
        ("a", [Polygon(MILD, [[0, 0], [3, 0], [3, 3]])]),
        ("b", [Polygon(SEVERE, [[1, 1], [5, 1], [5, 5], [1, 5]])]),
    ])
    path = tmp_path / "ann.json"
    save_annotations(path, ann)
    doc = json.loads(path.read_text())
    assert doc["image"] == "scene" and doc["annotations"][1]["polygons"][0]["label"] == "severe"
    back = load_annotations(path)
    assert back.to_json() == ann.to_json()
    merged = merge_annotations(back)
    assert merged.shape == (6, 8)


def test_annotation_json_errors():
    with pytest.raises(ValueError):
        AnnotationSet.from_json({"image": "x"})
    with pytest.raises(ValueError):
        AnnotationSet.from_json({"image": "x", "width": 2, "height": 2, "annotations": [
            {"annotator": "a", "polygons": [{"label": "ruined", "points": [[0, 0], [1, 0], [1, 1]]}]}]})


def test_image_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    gray = np.round(rng.random((7, 9)) * 255) / 255
    save_image(tmp_path / "g.pgm", gray)
    np.testing.assert_array_equal(load_image(tmp_path / "g.pgm"), gray)
    rgb = np.round(rng.random((5, 4, 3)) * 255) / 255
    save_image(tmp_path / "c.ppm", rgb)
    np.testing.assert_array_equal(load_image(tmp_path / "c.ppm"), rgb)
    lm = rng.integers(0, 4, (6, 5)).astype(np.uint8)
    save_labelmap(tmp_path / "l.pgm", lm)
    np.testing.assert_array_equal(load_labelmap(tmp_path / "l.pgm"), lm)
