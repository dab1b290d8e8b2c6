import numpy as np
import pytest

from cytoarch.config import PopulationConfig, SynthConfig
from cytoarch.segmentation import adaptive_threshold, segment_section
from cytoarch.synth import (
    ellipse_coverage,
    generate_synthetic_section,
    ground_truth_cell_mask,
    ground_truth_from_json,
    ground_truth_json,
)


def iou(mask_a, mask_b):
    inter = np.logical_and(mask_a, mask_b).sum()
    union = np.logical_or(mask_a, mask_b).sum()
    return inter / union if union else 0.0


def test_deterministic_given_seed():
    cfg = SynthConfig(width=120, height=120, seed=9, populations=[PopulationConfig(count=12)])
    img1, truth1 = generate_synthetic_section(cfg, "x")
    img2, truth2 = generate_synthetic_section(cfg, "x")
    np.testing.assert_array_equal(img1.pixels, img2.pixels)
    assert [c.center for c in truth1.cells] == [c.center for c in truth2.cells]


def test_seed_changes_output():
    base = dict(width=120, height=120, populations=[PopulationConfig(count=12)])
    img1, _ = generate_synthetic_section(SynthConfig(seed=1, **base), "x")
    img2, _ = generate_synthetic_section(SynthConfig(seed=2, **base), "x")
    assert (img1.pixels != img2.pixels).any()


def test_cells_darker_than_background():
    cfg = SynthConfig(width=200, height=200, seed=3, noise_std=0.0,
                      populations=[PopulationConfig(count=15)])
    image, truth = generate_synthetic_section(cfg, "x")
    for cell in truth.cells:
        mask = ground_truth_cell_mask(cell, 200, 200)
        if mask.any():
            assert image.pixels[mask].mean() < 150


def test_polygon_population_stays_inside():
    poly = [[50, 50], [150, 50], [150, 150], [50, 150]]
    cfg = SynthConfig(width=200, height=200, seed=4,
                      populations=[PopulationConfig(count=30, polygon=poly)])
    _, truth = generate_synthetic_section(cfg, "x")
    for cell in truth.cells:
        r, c = cell.center
        assert 50 <= c < 150 and 50 <= r < 150


def test_structure_requires_polygon():
    cfg = SynthConfig(populations=[PopulationConfig(count=1, structure="s")])
    with pytest.raises(ValueError):
        generate_synthetic_section(cfg, "x")


def test_ellipse_coverage_area_close_to_analytic():
    _, _, cov = ellipse_coverage(100, 100, (50.0, 50.0), 10.0, 6.0, -30.0)
    assert cov.sum() == pytest.approx(np.pi * 10 * 6, rel=0.02)


def test_ellipse_coverage_clipped_at_border():
    r0, c0, cov = ellipse_coverage(40, 40, (2.0, 2.0), 8.0, 5.0, 0.0)
    assert r0 == 0 and c0 == 0
    assert cov.sum() < np.pi * 8 * 5


def test_ground_truth_roundtrip():
    cfg = SynthConfig(
        width=150, height=150, seed=6,
        populations=[
            PopulationConfig(count=8),
            PopulationConfig(count=5, polygon=[[20, 20], [90, 20], [90, 90], [20, 90]],
                             structure="zone"),
        ],
    )
    _, truth = generate_synthetic_section(cfg, "x")
    back = ground_truth_from_json(ground_truth_json(truth))
    assert len(back.cells) == len(truth.cells)
    assert back.cells[3].center == pytest.approx(truth.cells[3].center)
    assert back.cells[3].angle_deg == truth.cells[3].angle_deg
    assert set(back.structures) == {"zone"}
    np.testing.assert_allclose(back.structures["zone"], truth.structures["zone"])


# ------------------------------------------------- generator <-> segmentation


@pytest.fixture(scope="module")
def sparse_section():
    # sparse so ellipses rarely merge; exercises detector recall
    cfg = SynthConfig(
        width=500, height=500, seed=21,
        populations=[PopulationConfig(count=60, orientation_kappa=0.0)],
    )
    return generate_synthetic_section(cfg, "sparse")


def test_every_cell_overlaps_foreground(sparse_section):
    image, truth = sparse_section
    fg = adaptive_threshold(image)
    for cell in truth.cells:
        mask = ground_truth_cell_mask(cell, 500, 500)
        if mask.sum() < 5:
            continue
        assert np.logical_and(fg, mask).any()


def test_segment_recall_against_ground_truth(sparse_section):
    image, truth = sparse_section
    segs = segment_section(image)
    seg_masks = []
    for seg in segs:
        m = np.zeros((500, 500), dtype=bool)
        m[seg.pixel_coords[:, 0], seg.pixel_coords[:, 1]] = True
        seg_masks.append(m)
    matched = 0
    usable = 0
    for cell in truth.cells:
        gt = ground_truth_cell_mask(cell, 500, 500)
        if gt.sum() < 20:
            continue
        usable += 1
        if any(iou(gt, m) >= 0.3 for m in seg_masks):
            matched += 1
    assert usable > 30
    assert matched / usable >= 0.90


def test_oriented_population_angles_recovered():
    cfg = SynthConfig(
        width=900, height=900, seed=13,
        populations=[PopulationConfig(count=100, orientation_mean_deg=-30.0,
                                      orientation_kappa=25.0)],
    )
    image, truth = generate_synthetic_section(cfg, "ang")
    from cytoarch.segmentation import extract_patch

    segs = segment_section(image)
    angles = []
    for seg in segs:
        patch = extract_patch(image, seg)
        if patch.rotation_confidence > 0.4:
            angles.append(patch.rotation_angle)
    assert len(angles) >= 60
    diffs = np.abs(np.asarray(angles) - (-30.0))
    diffs = np.minimum(diffs, 180.0 - diffs)
    assert np.mean(diffs <= 15.0) >= 0.80
