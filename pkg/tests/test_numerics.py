import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from allospec.numerics import (
    ConvergenceError,
    NotPositiveDefiniteError,
    eig_sym,
    op_norm,
    spd_inv_sqrt,
    spd_sqrt,
    std_normal_cdf,
    symmetrize,
    top_eigvec,
)
from oracles import charpoly_eigenvalues, phi, random_spd


# Characteristic-polynomial roots (cofactor expansion, 40-digit root finding)
# of fixed matrices, frozen here.
CHARPOLY_CASES = [
    (
        [[4.0, 1.0, 0.5], [1.0, 3.0, 0.25], [0.5, 0.25, 2.0]],
        [4.731559415452213, 2.3867603743778893, 1.8816802101698977],
    ),
    (
        [[2.0, -1.0, 0.0, 0.0], [-1.0, 2.0, -1.0, 0.0], [0.0, -1.0, 2.0, -1.0], [0.0, 0.0, -1.0, 2.0]],
        [3.618033988749895, 2.618033988749895, 1.381966011250105, 0.38196601125010515],
    ),
]


@pytest.mark.parametrize("a, expected", CHARPOLY_CASES)
def test_eig_sym_matches_frozen_charpoly_roots(a, expected):
    vals = eig_sym(a).eigenvalues
    np.testing.assert_allclose(vals, expected, rtol=1e-12)


def test_frozen_charpoly_values_reproduce_from_oracle():
    for a, expected in CHARPOLY_CASES:
        np.testing.assert_allclose(charpoly_eigenvalues(a), expected, rtol=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_eig_sym_random_small_against_charpoly(n):
    rng = np.random.default_rng(100 + n)
    a = random_spd(rng, n)
    np.testing.assert_allclose(eig_sym(a).eigenvalues, charpoly_eigenvalues(a), rtol=1e-8)


def test_diagonal_and_two_by_two():
    d = eig_sym(np.diag([7.5, 1.0]))
    np.testing.assert_array_equal(d.eigenvalues, [7.5, 1.0])
    np.testing.assert_array_equal(d.eigenvectors[:, 0], [1.0, 0.0])

    vals, vecs = eig_sym([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(vals, [3.0, 1.0], rtol=1e-15)
    np.testing.assert_allclose(vecs[:, 0], np.array([1.0, 1.0]) / math.sqrt(2.0), rtol=1e-15)


def test_sign_convention_largest_entry_positive():
    rng = np.random.default_rng(3)
    vecs = eig_sym(random_spd(rng, 8)).eigenvectors
    idx = np.argmax(np.abs(vecs), axis=0)
    assert np.all(vecs[idx, np.arange(8)] > 0)


def test_output_is_read_only_and_sorted():
    d = eig_sym(random_spd(np.random.default_rng(4), 6))
    assert np.all(np.diff(d.eigenvalues) <= 0)
    with pytest.raises(ValueError):
        d.eigenvalues[0] = 1.0


def test_repeated_eigenvalues_keep_orthonormal_basis():
    q, _ = np.linalg.qr(np.random.default_rng(5).standard_normal((5, 5)))
    a = (q * np.array([3.0, 2.0, 2.0, 2.0, 1.0])) @ q.T
    d = eig_sym(a)
    np.testing.assert_allclose(d.eigenvalues, [3, 2, 2, 2, 1], atol=1e-14)
    np.testing.assert_allclose(d.eigenvectors.T @ d.eigenvectors, np.eye(5), atol=1e-13)


def test_extreme_scales():
    vals = eig_sym(np.diag([1e300, 1e-300, 1.0])).eigenvalues
    np.testing.assert_array_equal(vals, [1e300, 1.0, 1e-300])
    vals = eig_sym([[1e-200, 1e-210], [1e-210, 1e-200]]).eigenvalues
    np.testing.assert_allclose(vals, [1e-200 + 1e-210, 1e-200 - 1e-210], rtol=1e-14)


def test_matches_lapack_on_larger_matrices():
    rng = np.random.default_rng(6)
    for n in (40, 130):
        a = symmetrize(rng.standard_normal((n, n)))
        ref = np.linalg.eigvalsh(a)[::-1]
        np.testing.assert_allclose(eig_sym(a).eigenvalues, ref, atol=1e-12 * np.abs(ref).max())


def test_non_square_and_non_finite_rejected():
    with pytest.raises(ValueError):
        eig_sym(np.ones((2, 3)))
    with pytest.raises(ValueError):
        eig_sym([[1.0, np.nan], [np.nan, 1.0]])


def test_sweep_cap_raises_with_residual():
    with pytest.raises(ConvergenceError) as info:
        eig_sym([[2.0, 1.0], [1.0, 2.0]], max_sweeps=0)
    assert info.value.residual == pytest.approx(math.sqrt(2.0))


def test_only_upper_triangle_is_read():
    a = np.array([[1.0, 2.0], [99.0, 1.0]])
    np.testing.assert_allclose(eig_sym(a).eigenvalues, [3.0, -1.0], rtol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(-10, 10)))
def test_property_trace_frobenius_residual(x):
    a = symmetrize(x)
    d = eig_sym(a)
    scale = max(1.0, float(np.linalg.norm(a)))
    assert abs(np.trace(a) - d.eigenvalues.sum()) <= 1e-10 * scale
    assert abs(np.linalg.norm(a) - np.linalg.norm(d.eigenvalues)) <= 1e-10 * scale
    v = d.eigenvectors
    assert np.abs(a @ v - v * d.eigenvalues).max() <= 1e-12 * scale
    assert np.abs(v.T @ v - np.eye(6)).max() <= 1e-12


def test_top_eigvec_examples():
    r = top_eigvec(np.diag([3.0, 1.0, 1.0]))
    assert r.value == 3.0
    np.testing.assert_array_equal(r.vector, [1.0, 0.0, 0.0])
    r = top_eigvec(np.diag([3.0, 1.0, 1.0]), hint=[-1.0, 0.0, 0.0])
    np.testing.assert_array_equal(r.vector, [-1.0, 0.0, 0.0])
    assert not r.ill_conditioned


def test_top_eigvec_agrees_with_full_decomposition():
    a = random_spd(np.random.default_rng(7), 6)
    d = eig_sym(a)
    r = top_eigvec(a)
    assert r.value == pytest.approx(d.eigenvalues[0], rel=1e-8)
    np.testing.assert_allclose(r.vector, d.eigenvectors[:, 0], atol=1e-8)


def test_top_eigvec_degenerate_flagged():
    assert top_eigvec(np.eye(4)).ill_conditioned


def test_top_eigvec_rejects_zero_hint():
    with pytest.raises(ValueError):
        top_eigvec(np.eye(3), hint=np.zeros(3))


def test_power_path_against_lapack():
    rng = np.random.default_rng(8)
    n = 300
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    vals = np.concatenate([[10.0, 6.0], rng.uniform(0.5, 4.0, n - 2)])
    a = (q * vals) @ q.T
    r = top_eigvec(a, hint=q[:, 0])
    assert r.value == pytest.approx(10.0, rel=1e-12)
    np.testing.assert_allclose(r.vector, q[:, 0], atol=1e-9)
    assert not r.ill_conditioned


def test_power_path_flags_degenerate_top():
    n = 260
    a = np.eye(n)
    a[0, 0] = a[1, 1] = 2.0
    assert top_eigvec(a).ill_conditioned


def test_spd_sqrt_examples():
    np.testing.assert_array_equal(spd_sqrt(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(spd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), rtol=1e-15)
    np.testing.assert_allclose(spd_inv_sqrt(np.diag([4.0, 9.0])), np.diag([0.5, 1 / 3]), rtol=1e-15)


def test_spd_sqrt_recomposition():
    a = random_spd(np.random.default_rng(9), 10, cond=1e4)
    r = spd_sqrt(a)
    np.testing.assert_allclose(r @ r, a, atol=1e-12 * np.abs(a).max())
    np.testing.assert_allclose(r, r.T, atol=0)
    ri = spd_inv_sqrt(a)
    np.testing.assert_allclose(ri @ a @ ri, np.eye(10), atol=1e-9)


def test_spd_sqrt_rejects_indefinite():
    with pytest.raises(NotPositiveDefiniteError) as info:
        spd_sqrt(np.diag([1.0, -1.0]))
    assert info.value.eigenvalue == -1.0
    with pytest.raises(NotPositiveDefiniteError):
        spd_inv_sqrt(np.diag([1.0, 1e-14]))


def test_op_norm():
    assert op_norm(np.diag([-5.0, 2.0])) == 5.0
    assert op_norm(np.eye(3)) == 1.0
    a = random_spd(np.random.default_rng(10), 7)
    assert op_norm(a) == pytest.approx(eig_sym(a).eigenvalues[0], rel=1e-14)


# Quadrature values of the standard normal CDF, frozen.
PHI_CASES = [
    (0.0, 0.5),
    (-1.959963984540054, 0.025),
    (-0.5, 0.3085375387259869),
    (-1.0, 0.15865525393145705),
    (-1.5, 0.06680720126885807),
    (-2.7, 0.0034669738030406664),
    (-8.0, 6.220960574271784e-16),
    (-20.0, 2.7536241186062337e-89),
    (3.0, 0.9986501019683699),
]


@pytest.mark.parametrize("x, expected", PHI_CASES)
def test_std_normal_cdf_frozen(x, expected):
    assert std_normal_cdf(x) == pytest.approx(expected, rel=1e-12, abs=1e-300)


def test_std_normal_cdf_live_quadrature():
    for x in np.linspace(-30, 8, 39):
        assert std_normal_cdf(float(x)) == pytest.approx(phi(x), rel=1e-12)


def test_std_normal_cdf_saturation_and_nan():
    assert std_normal_cdf(-40.0) == 0.0
    assert std_normal_cdf(40.0) == 1.0
    with pytest.raises(ValueError):
        std_normal_cdf(float("nan"))


def test_std_normal_cdf_array():
    out = std_normal_cdf(np.array([0.0, -0.5]))
    np.testing.assert_allclose(out, [0.5, 0.3085375387259869], rtol=1e-15)
