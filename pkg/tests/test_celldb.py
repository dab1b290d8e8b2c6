import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cytoarch.celldb import build_cell_db, export_csv, load_db, save_db
from cytoarch.features import N_FEATURES
from cytoarch.geometry import points_in_polygon

from conftest import random_db


def rect_scan_oracle(db, section, row_lo, row_hi, col_lo, col_hi):
    out = []
    for i in range(len(db)):
        r, c = db.centroids[i]
        if db.sections[i] == section and row_lo <= r < row_hi and col_lo <= c < col_hi:
            out.append(i)
    return np.array(out, dtype=np.int64)


def test_rect_query_matches_linear_scan(rng):
    db = random_db(rng, n=500)
    for _ in range(40):
        section = "secA" if rng.random() < 0.5 else "secB"
        r0, c0 = rng.uniform(-50, 550, size=2)
        r1 = r0 + rng.uniform(1, 400)
        c1 = c0 + rng.uniform(1, 400)
        np.testing.assert_array_equal(
            np.sort(db.query_rect(section, r0, r1, c0, c1)),
            rect_scan_oracle(db, section, r0, r1, c0, c1),
        )


def test_polygon_query_matches_pointwise_oracle(rng):
    db = random_db(rng, n=400)
    triangle = np.array([[50.0, 30.0], [520.0, 90.0], [260.0, 540.0]])
    got = db.query_polygon("secA", triangle)
    xy = db.centroids[:, ::-1]
    inside = points_in_polygon(xy, triangle)
    want = np.array(
        [i for i in range(len(db)) if inside[i] and db.sections[i] == "secA"],
        dtype=np.int64,
    )
    np.testing.assert_array_equal(np.sort(got), want)


def test_empty_and_degenerate_queries(rng):
    db = random_db(rng, n=50)
    assert len(db.query_rect("secA", 10, 10, 0, 100)) == 0
    assert len(db.query_rect("nosuch", 0, 600, 0, 600)) == 0
    assert len(db.query_rect("secA", -900, -800, 0, 100)) == 0


def test_rect_boundaries_half_open():
    centroids = np.array([[100.0, 100.0], [200.0, 100.0], [100.0, 200.0]])
    db = build_cell_db(
        ["a", "b", "c"], ["s"] * 3, centroids, np.ones(3), np.zeros((3, N_FEATURES))
    )
    hit = db.query_rect("s", 100.0, 200.0, 100.0, 200.0)
    assert db.cell_ids[int(hit[0])] == "a" and len(hit) == 1


def test_section_indices(rng):
    db = random_db(rng, n=120)
    idx = db.section_indices("secB")
    assert all(db.sections[i] == "secB" for i in idx)
    assert len(idx) + len(db.section_indices("secA")) == 120


def test_duplicate_id_rejected():
    with pytest.raises(ValueError, match="duplicate cell_id 'x'"):
        build_cell_db(
            ["x", "x"], ["s", "s"], np.zeros((2, 2)), np.ones(2), np.zeros((2, N_FEATURES))
        )


def test_column_length_mismatch_rejected():
    with pytest.raises(ValueError, match="disagree"):
        build_cell_db(
            ["a", "b"], ["s"], np.zeros((2, 2)), np.ones(2), np.zeros((2, N_FEATURES))
        )


def test_feature_width_enforced():
    with pytest.raises(ValueError, match="features must be"):
        build_cell_db(["a"], ["s"], np.zeros((1, 2)), np.ones(1), np.zeros((1, 7)))


def test_save_load_roundtrip_bit_identical(tmp_path, rng):
    db = random_db(rng, n=80)
    db.meta = {"aligned": True}
    path = str(tmp_path / "db.bin")
    save_db(db, path)
    back = load_db(path)
    assert back.cell_ids == db.cell_ids
    assert back.sections == db.sections
    assert back.resolution_um == db.resolution_um
    assert back.meta == {"aligned": True}
    np.testing.assert_array_equal(back.centroids, db.centroids)
    np.testing.assert_array_equal(back.areas, db.areas)
    np.testing.assert_array_equal(back.features, db.features)


def test_export_csv_roundtrips_floats(tmp_path, rng):
    db = random_db(rng, n=10)
    path = str(tmp_path / "cells.csv")
    export_csv(db, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["cell_id", "section_id", "centroid_row", "centroid_col", "area"]
    assert len(rows) == 11
    for i, row in enumerate(rows[1:]):
        assert row[0] == db.cell_ids[i]
        assert float(row[4]) == db.areas[i]
        np.testing.assert_array_equal(
            np.array([float(v) for v in row[5:]]), db.features[i]
        )


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 500), st.floats(0, 500),
       st.floats(1, 700), st.floats(1, 700))
def test_rect_query_equals_scan_property(seed, r0, c0, dr, dc):
    rng = np.random.default_rng(seed)
    db = random_db(rng, n=60)
    got = np.sort(db.query_rect("secA", r0, r0 + dr, c0, c0 + dc))
    want = rect_scan_oracle(db, "secA", r0, r0 + dr, c0, c0 + dc)
    np.testing.assert_array_equal(got, want)
