import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cytoarch.alignment import (
    AffineMap,
    alignment_cost,
    alignment_gradient,
    apply_affine,
    fit_affine_alignment,
    load_affine,
    save_affine,
)


def gradient_descent_fit(source, target, steps=6000, lr=0.05):
    """First-order reference fit; slow but independent of the closed form."""
    d = source.shape[1]
    affine = AffineMap(shift=np.zeros(d), linear=np.eye(d))
    for _ in range(steps):
        g_shift, g_linear = alignment_gradient(affine, source, target)
        affine = AffineMap(shift=affine.shift - lr * g_shift,
                           linear=affine.linear - lr * g_linear)
    return affine


def random_affine(rng, d):
    linear = rng.normal(0, 1, size=(d, d)) + 2.0 * np.eye(d)
    shift = rng.normal(0, 3, size=d)
    return AffineMap(shift=shift, linear=linear)


def test_apply_affine_matches_definition(rng):
    affine = random_affine(rng, 4)
    pts = rng.normal(size=(7, 4))
    want = np.array([affine.shift + affine.linear @ p for p in pts])
    np.testing.assert_allclose(apply_affine(affine, pts), want, atol=1e-12)
    np.testing.assert_allclose(apply_affine(affine, pts[0]), want[0], atol=1e-12)


def test_exact_recovery_of_planted_map(rng):
    for _ in range(20):
        d = int(rng.integers(2, 8))
        true = random_affine(rng, d)
        source = rng.normal(0, 2, size=(60, d))
        target = apply_affine(true, source)
        fitted = fit_affine_alignment(source, target)
        assert np.abs(fitted.linear - true.linear).max() < 1e-9
        assert np.abs(fitted.shift - true.shift).max() < 1e-9


def test_signed_permutation_recovered(rng):
    # the case the aligner exists for: flipped and reordered embedding axes
    d = 6
    perm = rng.permutation(d)
    signs = rng.choice([-1.0, 1.0], size=d)
    linear = np.zeros((d, d))
    linear[np.arange(d), perm] = signs
    true = AffineMap(shift=np.zeros(d), linear=linear)
    source = rng.normal(size=(80, d))
    fitted = fit_affine_alignment(source, apply_affine(true, source))
    assert np.abs(fitted.linear - linear).max() < 1e-9


def test_noisy_fit_beats_gradient_descent(rng):
    d = 3
    true = random_affine(rng, d)
    source = rng.normal(0, 1.5, size=(100, d))
    target = apply_affine(true, source) + rng.normal(0, 0.1, size=(100, d))
    closed = fit_affine_alignment(source, target)
    iterative = gradient_descent_fit(source, target)
    assert alignment_cost(closed, source, target) <= (
        alignment_cost(iterative, source, target) + 1e-9
    )


def test_gradient_zero_at_closed_form_optimum(rng):
    source = rng.normal(size=(40, 5))
    target = rng.normal(size=(40, 5))
    fitted = fit_affine_alignment(source, target)
    g_shift, g_linear = alignment_gradient(fitted, source, target)
    assert np.abs(g_shift).max() < 1e-9
    assert np.abs(g_linear).max() < 1e-9


def test_gradient_matches_finite_differences(rng):
    source = rng.normal(size=(15, 2))
    target = rng.normal(size=(15, 2))
    affine = random_affine(rng, 2)
    g_shift, g_linear = alignment_gradient(affine, source, target)
    h = 1e-6
    for i in range(2):
        bumped = AffineMap(shift=affine.shift + h * np.eye(2)[i], linear=affine.linear)
        fd = (alignment_cost(bumped, source, target)
              - alignment_cost(affine, source, target)) / h
        assert abs(fd - g_shift[i]) < 1e-4
    for i in range(2):
        for j in range(2):
            bump = np.zeros((2, 2))
            bump[i, j] = h
            bumped = AffineMap(shift=affine.shift, linear=affine.linear + bump)
            fd = (alignment_cost(bumped, source, target)
                  - alignment_cost(affine, source, target)) / h
            assert abs(fd - g_linear[i, j]) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_optimum_invariant_under_target_affine(seed):
    # composing the target with any affine map must leave the fit consistent:
    # fitting to (T o f)(source) recovers T composed with the first fit
    rng = np.random.default_rng(seed)
    source = rng.normal(size=(30, 3))
    target = rng.normal(size=(30, 3))
    first = fit_affine_alignment(source, target)
    extra = random_affine(rng, 3)
    second = fit_affine_alignment(source, apply_affine(extra, target))
    composed_cost = alignment_cost(second, source, apply_affine(extra, target))
    direct_cost = alignment_cost(
        AffineMap(shift=extra.shift + extra.linear @ first.shift,
                  linear=extra.linear @ first.linear),
        source, apply_affine(extra, target))
    assert composed_cost <= direct_cost + 1e-8


def test_degenerate_source_raises(rng):
    source = np.zeros((20, 4))
    source[:, :2] = rng.normal(size=(20, 2))  # last two axes collapsed
    with pytest.raises(ValueError, match="2 deficient"):
        fit_affine_alignment(source, rng.normal(size=(20, 4)))


def test_too_few_pairs_raises(rng):
    with pytest.raises(ValueError, match="at least 5 pairs"):
        fit_affine_alignment(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))


def test_shape_mismatch_raises(rng):
    with pytest.raises(ValueError, match="equal shape"):
        fit_affine_alignment(rng.normal(size=(10, 3)), rng.normal(size=(10, 4)))


def test_bad_affine_construction_rejected():
    with pytest.raises(ValueError, match="square"):
        AffineMap(shift=np.zeros(2), linear=np.zeros((2, 3)))
    with pytest.raises(ValueError, match="shift dimension"):
        AffineMap(shift=np.zeros(3), linear=np.eye(2))


def test_save_load_roundtrip(tmp_path, rng):
    affine = random_affine(rng, 5)
    path = str(tmp_path / "aff.bin")
    save_affine(affine, path)
    back = load_affine(path)
    np.testing.assert_array_equal(back.shift, affine.shift)
    np.testing.assert_array_equal(back.linear, affine.linear)
