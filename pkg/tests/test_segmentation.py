import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cytoarch.imaging import SectionImage
from cytoarch.segmentation import (
    adaptive_threshold,
    connected_components,
    extract_patch,
    gaussian_block_kernel,
    local_gaussian_mean,
    normalize_rotation,
    orientation_from_coords,
    rotate_patch,
    segment_section,
)


def brute_gaussian_mean(image, block_size):
    """Per-pixel weighted mean with replicated borders, straight from the
    definition; quadratic, only for small inputs."""
    k1 = gaussian_block_kernel(block_size)
    weights = np.outer(k1, k1)
    h, w = image.shape
    half = block_size // 2
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            acc = 0.0
            for dr in range(-half, half + 1):
                for dc in range(-half, half + 1):
                    rr = min(max(r + dr, 0), h - 1)
                    cc = min(max(c + dc, 0), w - 1)
                    acc += weights[dr + half, dc + half] * image[rr, cc]
            out[r, c] = acc
    return out


def flood_fill_components(mask):
    """4-connected labeling by explicit BFS; oracle for the scipy-backed path."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    comps = []
    h, w = mask.shape
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            comp = []
            while stack:
                r, c = stack.pop()
                comp.append((r, c))
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            comps.append(sorted(comp))
    comps.sort(key=lambda comp: (min(r for r, _ in comp), min(c for _, c in comp)))
    return comps


# ---------------------------------------------------------------- threshold


def test_gaussian_kernel_normalized_and_symmetric():
    k = gaussian_block_kernel(11)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(k, k[::-1])


def test_gaussian_kernel_rejects_even():
    with pytest.raises(ValueError):
        gaussian_block_kernel(10)


def test_local_mean_matches_bruteforce():
    rng = np.random.default_rng(0)
    image = rng.integers(0, 256, size=(17, 13)).astype(np.float64)
    got = local_gaussian_mean(image, 11)
    want = brute_gaussian_mean(image, 11)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_adaptive_threshold_dark_square():
    pixels = np.full((30, 30), 200, dtype=np.uint8)
    pixels[10:15, 10:15] = 100
    image = SectionImage(pixels=pixels, section_id="t")
    mask = adaptive_threshold(image, block_size=11, c=-12.0)
    assert mask[12, 12]
    assert not mask[0, 0] and not mask[29, 29]


def test_adaptive_threshold_matches_definition():
    rng = np.random.default_rng(3)
    pixels = rng.integers(0, 256, size=(20, 20)).astype(np.uint8)
    image = SectionImage(pixels=pixels, section_id="t")
    mask = adaptive_threshold(image, block_size=11, c=-12.0)
    want = (pixels.astype(float) - brute_gaussian_mean(pixels.astype(float), 11)) < -12.0
    np.testing.assert_array_equal(mask, want)


def test_adaptive_threshold_rejects_even_block():
    image = SectionImage(pixels=np.zeros((8, 8), dtype=np.uint8), section_id="t")
    with pytest.raises(ValueError):
        adaptive_threshold(image, block_size=10)


def test_flat_image_has_no_foreground():
    image = SectionImage(pixels=np.full((40, 40), 128, dtype=np.uint8), section_id="t")
    assert not adaptive_threshold(image).any()


# ---------------------------------------------------------------- components


def test_components_match_flood_fill_fixed():
    mask = np.zeros((12, 12), dtype=bool)
    mask[1:4, 1:4] = True
    mask[1:4, 6:9] = True       # separate blob
    mask[6, 1:9] = True         # line touching nothing above
    mask[3, 4] = True           # diagonal-only neighbor of first blob: separate in 4-conn
    segs = connected_components(mask, section_id="m")
    oracle = flood_fill_components(mask)
    assert len(segs) == len(oracle)
    for seg, comp in zip(segs, oracle):
        got = sorted(map(tuple, seg.pixel_coords))
        assert got == comp


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(dtype=bool, shape=st.tuples(st.integers(1, 18), st.integers(1, 18))))
def test_components_match_flood_fill_random(mask):
    segs = connected_components(mask, section_id="m")
    oracle = flood_fill_components(mask)
    assert [sorted(map(tuple, s.pixel_coords)) for s in segs] == oracle


def test_component_area_filters():
    mask = np.zeros((10, 10), dtype=bool)
    mask[0, 0] = True           # area 1
    mask[2:4, 2:4] = True       # area 4
    mask[6:9, 6:9] = True       # area 9
    assert len(connected_components(mask)) == 3
    assert len(connected_components(mask, min_area=2)) == 2
    assert len(connected_components(mask, min_area=2, max_area=4)) == 1
    with pytest.raises(ValueError):
        connected_components(mask, min_area=0)


def test_component_ids_are_ordered_and_named():
    mask = np.zeros((8, 8), dtype=bool)
    mask[5, 5] = True
    mask[1, 6] = True
    segs = connected_components(mask, section_id="sec9")
    assert [s.cell_id for s in segs] == ["sec9:000000", "sec9:000001"]
    assert segs[0].pixel_coords[0, 0] == 1  # min_row ordering


# ---------------------------------------------------------------- orientation


def test_horizontal_bar_angle_zero():
    coords = np.array([[5, c] for c in range(3, 12)])
    angle, conf = orientation_from_coords(coords)
    assert angle == pytest.approx(0.0, abs=1e-9)
    assert conf == pytest.approx(1.0)


def test_vertical_bar_angle_90():
    coords = np.array([[r, 5] for r in range(3, 12)])
    angle, conf = orientation_from_coords(coords)
    assert angle == pytest.approx(90.0, abs=1e-9)
    assert conf == pytest.approx(1.0)


def test_diagonal_down_right_is_minus_45():
    # rows grow downward, so a (0,0),(1,1),... diagonal points at -45 visually
    coords = np.array([[i, i] for i in range(9)])
    angle, _ = orientation_from_coords(coords)
    assert angle == pytest.approx(-45.0, abs=1e-9)


def test_isotropic_set_reports_zero():
    coords = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    angle, conf = orientation_from_coords(coords)
    assert (angle, conf) == (0.0, 0.0)


def test_single_pixel_is_isotropic():
    angle, conf = orientation_from_coords(np.array([[4, 7]]))
    assert (angle, conf) == (0.0, 0.0)


@settings(max_examples=100)
@given(st.floats(-89.0, 89.0))
def test_synthetic_ellipse_angle_recovered(target):
    # lattice points inside an oriented ellipse; discretization costs a few degrees
    t = math.radians(target)
    pts = []
    for r in range(-20, 21):
        for c in range(-20, 21):
            x, y = c, -r
            u = x * math.cos(t) + y * math.sin(t)
            v = -x * math.sin(t) + y * math.cos(t)
            if (u / 16.0) ** 2 + (v / 5.0) ** 2 <= 1.0:
                pts.append((r, c))
    angle, conf = orientation_from_coords(np.array(pts))
    diff = abs(angle - target)
    assert min(diff, 180.0 - diff) < 3.0
    assert conf > 0.5


# ---------------------------------------------------------------- rotation


def nearest_neighbor_rotate(patch, angle_deg):
    """Forward-map rasterization oracle: paint each source pixel at its rotated
    location, nearest cell wins by painting order."""
    h, w = patch.shape
    out = np.zeros_like(patch)
    phi = math.radians(angle_deg)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    for r in range(h):
        for c in range(w):
            if patch[r, c] == 0:
                continue
            x, y = c - cc, -(r - cr)
            x2 = x * math.cos(phi) - y * math.sin(phi)
            y2 = x * math.sin(phi) + y * math.cos(phi)
            rr, ccol = int(round(cr - y2)), int(round(cc + x2))
            if 0 <= rr < h and 0 <= ccol < w:
                out[rr, ccol] = patch[r, c]
    return out


def test_rotate_zero_is_exact_copy():
    rng = np.random.default_rng(0)
    patch = rng.uniform(0, 255, size=(16, 16))
    out = rotate_patch(patch, 0.0)
    np.testing.assert_array_equal(out, patch)
    assert out is not patch


def test_rotate_90_moves_horizontal_bar_vertical():
    patch = np.zeros((21, 21))
    patch[10, 4:17] = 100.0
    out = rotate_patch(patch, 90.0)
    col_mass = out.sum(axis=0)
    row_mass = out.sum(axis=1)
    assert col_mass.argmax() == 10
    assert row_mass[4] > 0 and row_mass[16] > 0
    assert out[10, 10] == pytest.approx(100.0, abs=1e-9)


def test_rotation_against_forward_rasterizer():
    # at 1-degree steps: the rotated bar measures at the requested angle, and its
    # support covers every pixel the forward NN rasterizer paints (same center,
    # same direction, no mirroring)
    patch = np.zeros((33, 33))
    patch[15:18, 6:27] = 200.0
    for angle in range(-89, 90, 1):
        ours = rotate_patch(patch, float(angle))
        oracle = nearest_neighbor_rotate(patch, float(angle))
        measured, _ = orientation_from_coords(np.column_stack(np.nonzero(ours > 20)))
        d = abs(measured - angle)
        assert min(d, 180.0 - d) < 3.0, f"angle {angle}: measured {measured}"
        coverage = (ours[oracle > 0] > 20).mean()
        assert coverage >= 0.95, f"angle {angle}: coverage {coverage}"


def test_rotation_preserves_mass_roughly():
    patch = np.zeros((32, 32))
    patch[12:20, 12:20] = 50.0
    for angle in (10.0, 45.0, 77.0):
        out = rotate_patch(patch, angle)
        assert out.sum() == pytest.approx(patch.sum(), rel=0.05)


@settings(max_examples=40, deadline=None)
@given(st.floats(-85, 85))
def test_normalize_rotation_idempotent_within_a_degree(angle):
    # an ellipse at `angle` normalizes to ~horizontal; renormalizing the result
    # measures less than a degree of residual tilt
    from cytoarch.synth import ellipse_coverage

    r0, c0, cov = ellipse_coverage(48, 48, (23.5, 23.5), 16.0, 5.0, angle)
    raw = np.zeros((48, 48))
    raw[r0 : r0 + cov.shape[0], c0 : c0 + cov.shape[1]] = cov * 180.0
    coords = np.column_stack(np.nonzero(raw >= 90.0))
    rotated, first_angle, _ = normalize_rotation(raw, coords)
    d = abs(first_angle - angle)
    assert min(d, 180.0 - d) < 3.0
    coords2 = np.column_stack(np.nonzero(rotated >= 90.0))
    _, second_angle, _ = normalize_rotation(rotated, coords2)
    assert abs(second_angle) < 1.0


# ---------------------------------------------------------------- patches


def test_extract_patch_centers_centroid():
    pixels = np.full((50, 50), 220, dtype=np.uint8)
    pixels[20:23, 30:37] = 40
    image = SectionImage(pixels=pixels, section_id="t")
    segs = segment_section(image, block_size=11, min_area=5)
    assert len(segs) == 1
    patch = extract_patch(image, segs[0], patch_size=32)
    nz = np.column_stack(np.nonzero(patch.raw_mask))
    assert nz[:, 0].mean() == pytest.approx(16, abs=1.0)
    assert nz[:, 1].mean() == pytest.approx(16, abs=1.0)
    # raw patch keeps original intensities exactly
    assert set(np.unique(patch.raw_pixels[patch.raw_mask])) == {40.0}
    assert patch.rotation_angle == pytest.approx(0.0, abs=1e-6)


def test_extract_patch_rejects_tiny_size():
    pixels = np.zeros((20, 20), dtype=np.uint8)
    image = SectionImage(pixels=pixels, section_id="t")
    seg_mask = np.zeros((20, 20), dtype=bool)
    seg_mask[5:8, 5:8] = True
    seg = connected_components(seg_mask, section_id="t")[0]
    with pytest.raises(ValueError):
        extract_patch(image, seg, patch_size=4)


def test_oversized_cell_is_cropped_not_error():
    pixels = np.full((80, 80), 220, dtype=np.uint8)
    pixels[10:70, 38:42] = 30
    image = SectionImage(pixels=pixels, section_id="t")
    segs = segment_section(image, block_size=31, min_area=5)
    patch = extract_patch(image, segs[0], patch_size=16)
    assert patch.raw_mask.sum() < len(segs[0].pixel_coords)
    assert patch.pixels.shape == (16, 16)


def test_aligned_cell_skips_resampling():
    # perfectly horizontal cell: rotated patch is bitwise equal to the raw patch
    pixels = np.full((40, 40), 220, dtype=np.uint8)
    pixels[20, 10:30] = 35
    image = SectionImage(pixels=pixels, section_id="t")
    segs = segment_section(image, block_size=11, min_area=3)
    patch = extract_patch(image, segs[0])
    assert patch.rotation_angle == 0.0
    np.testing.assert_array_equal(patch.pixels, patch.raw_pixels)
