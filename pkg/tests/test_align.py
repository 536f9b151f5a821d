import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from sobalign.align import (
    AlignOptions, DistanceWeights, GivensCoeffs, _coeffs, _Pair, alignment_distance,
    distance_matrix, frob_dist_sq, givens, givens_coeffs, jacobi_align, maximize_on_circle,
    quartic, rho, solve_givens, tau, tau_full,
)
from sobalign.errors import InputError
from sobalign.kernel import chi2_kernel
from sobalign.klds import transform

from _common import (
    brute_force_o2, plane_grid, random_descriptor, random_orthogonal, rho_stack, single_column,
)

W = DistanceWeights(0.25, 0.0)
W1 = DistanceWeights(1.0, 0.0)


@pytest.fixture(scope="module")
def scalar_pair():
    # Two one-sample systems whose histograms have kernel value 0.9.
    x = brentq(lambda x: chi2_kernel([1, 0], [1 - x, x]) - 0.9, 1e-9, 1.0)
    return single_column([1, 0], 0.5), single_column([1 - x, x], 0.3)


def test_weights_validation():
    with pytest.raises(InputError):
        DistanceWeights(0.0, 0.0)
    with pytest.raises(InputError):
        DistanceWeights(1.0, -1.0)


def test_tau_identical():
    theta = random_descriptor(np.random.default_rng(0), 3)
    w = DistanceWeights(0.7, 2.0)
    assert tau(theta, theta, w) == pytest.approx(2 * 0.7 * np.sum(theta.A ** 2) + 6, abs=1e-12)


def test_scalar_example(scalar_pair):
    t1, t2 = scalar_pair
    Q = np.eye(1)
    assert tau(t1, t2, W1) == pytest.approx(2.34, abs=1e-12)
    assert rho(t1, t2, Q, W1) == pytest.approx(1.05, abs=1e-12)
    d = frob_dist_sq(t1, t2, Q, W1)
    assert d == pytest.approx(0.24, abs=1e-12)
    # Direct parameter differences: 0.2^2 + ||C1 - C2||^2 = 0.04 + (2 - 2 * 0.9).
    assert d == pytest.approx(0.04 + 0.20, abs=1e-12)


def test_tau_matches_full_form():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        t1, t2 = random_descriptor(rng, n), random_descriptor(rng, n, N=20)
        w = DistanceWeights(rng.uniform(0.1, 2), rng.uniform(0, 2))
        assert abs(tau(t1, t2, w) - tau_full(t1, t2, w)) <= 1e-10


def test_tau_rejects_invalid():
    theta = random_descriptor(np.random.default_rng(2), 2)
    with pytest.raises(InputError):
        tau(theta, theta.replace(alpha=2 * theta.alpha), W)


def test_rho_identity_forms():
    rng = np.random.default_rng(3)
    t1, t2 = random_descriptor(rng, 3), random_descriptor(rng, 3)
    pair = _Pair(t1, t2, W)
    expected = 0.25 * np.trace(t1.A.T @ t2.A) + np.trace(pair.M)
    assert rho(t1, t2, np.eye(3), W) == pytest.approx(expected, abs=1e-12)
    assert rho(t1, t1, np.eye(3), W) == pytest.approx(0.25 * np.sum(t1.A ** 2) + 3, abs=1e-10)
    with pytest.raises(InputError):
        rho(t1, t2, 1.1 * np.eye(3), W)


def test_frob_self_zero_and_symmetry():
    rng = np.random.default_rng(4)
    t1, t2 = random_descriptor(rng, 3), random_descriptor(rng, 3)
    assert frob_dist_sq(t1, t1, np.eye(3), W) <= 1e-10
    for _ in range(5):
        Q = random_orthogonal(3, rng, rng.choice([-1, 1]))
        lhs = frob_dist_sq(t1, t2, Q, W)
        rhs = frob_dist_sq(transform(t1, Q.T), t2, np.eye(3), W)
        assert abs(lhs - rhs) <= 1e-10
        # The decomposition agrees with an explicit evaluation of the distance.
        t2q = transform(t2, Q)
        explicit = frob_dist_sq(t1, t2q, np.eye(3), W)
        assert abs(lhs - explicit) <= 1e-10


def test_quartic_is_squared_stationarity():
    rng = np.random.default_rng(5)
    P = np.polynomial.Polynomial
    for _ in range(50):
        k = GivensCoeffs(*rng.standard_normal(5))
        d = k.k1 - k.k0
        # c (2 d s + k4) = k3 s - k2 (1 - 2 s^2), squared with c^2 = 1 - s^2.
        lhs = P([1, 0, -1]) * P([k.k4, 2 * d]) ** 2
        rhs = P([-k.k2, k.k3, 2 * k.k2]) ** 2
        ref = (lhs - rhs).coef[::-1]
        np.testing.assert_allclose(quartic(k), ref, atol=1e-12)


def test_givens_coefficients_contract():
    rng = np.random.default_rng(6)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        t1, t2 = random_descriptor(rng, n), random_descriptor(rng, n)
        t2 = transform(t2, random_orthogonal(n, rng))
        p, q = sorted(rng.choice(n, 2, replace=False))
        w = DistanceWeights(rng.uniform(0.1, 3), 0.0)
        k = givens_coeffs(t1, t2, p, q, w)
        ang = rng.uniform(0, 2 * np.pi, 6)
        direct = [rho(t1, t2, givens(n, p, q, np.cos(a), np.sin(a)), w) for a in ang]
        form = [k.value(np.cos(a), np.sin(a)) for a in ang]
        const = direct[5] - form[5]
        np.testing.assert_allclose(np.array(direct[:5]), np.array(form[:5]) + const, atol=1e-9)


def test_zero_coefficients():
    B = np.random.default_rng(7).standard_normal((3, 3))
    k = _coeffs(B, np.zeros((3, 3)), np.zeros((3, 3)), 0.5, 0, 2)
    assert tuple(k) == (0.0,) * 5


def test_diagonal_cross_term():
    m1, m2 = 0.7, -0.2
    k = _coeffs(np.zeros((2, 2)), np.zeros((2, 2)), np.diag([m1, m2]), 1.0, 0, 1)
    assert k.k3 == pytest.approx(m1 + m2)
    assert k.k4 == 0.0


def test_solve_examples():
    assert maximize_on_circle(GivensCoeffs(1, 0, 0, 0, 0)) == (1.0, 0.0)
    c, s = maximize_on_circle(GivensCoeffs(0, 0, 0, 0, 1))
    assert (c, s) == pytest.approx((0.0, 1.0), abs=1e-12)


def test_plane_index_errors():
    theta = random_descriptor(np.random.default_rng(8), 3)
    for p, q in [(1, 1), (2, 1), (0, 3), (-1, 2)]:
        with pytest.raises(InputError):
            givens_coeffs(theta, theta, p, q, W)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5))
def test_circle_maximizer_beats_grid(k):
    k = GivensCoeffs(*k)
    c, s = maximize_on_circle(k)
    assert c * c + s * s == pytest.approx(1.0, abs=1e-12)
    th = np.linspace(0, 2 * np.pi, 20_000, endpoint=False)
    assert k.value(c, s) >= k.value(np.cos(th), np.sin(th)).max() - 1e-8


def test_solve_givens_grid_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(2, 5))
        t1, t2 = random_descriptor(rng, n), random_descriptor(rng, n)
        t2 = transform(t2, random_orthogonal(n, rng))
        p, q = sorted(rng.choice(n, 2, replace=False))
        w = DistanceWeights(rng.uniform(0.05, 5), 0.0)
        c, s = solve_givens(t1, t2, p, q, w)
        grid_max = rho_stack(_Pair(t1, t2, w), plane_grid(n, p, q, 100_000)).max()
        assert rho(t1, t2, givens(n, p, q, c, s), w) >= grid_max - 1e-6


def test_jacobi_self_converges_immediately():
    theta = random_descriptor(np.random.default_rng(10), 4)
    r = jacobi_align(theta, theta, np.eye(4), W)
    assert r.converged and r.sweeps == 1
    assert r.dist_sq <= 1e-10


def test_jacobi_monotone_and_component():
    rng = np.random.default_rng(11)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        t1, t2 = random_descriptor(rng, n), random_descriptor(rng, n)
        sign = int(rng.choice([-1, 1]))
        r = jacobi_align(t1, t2, random_orthogonal(n, rng, sign), W, rng=rng)
        assert np.min(np.diff(r.plane_trace)) >= -1e-10
        assert np.min(np.diff(r.rho_trace)) >= -1e-10
        assert r.det_sign == sign
        assert np.max(np.abs(r.Q.T @ r.Q - np.eye(n))) <= 1e-10
        assert r.dist_sq == pytest.approx(frob_dist_sq(t1, t2, r.Q, W), abs=1e-12)


def test_jacobi_rejects_non_orthogonal():
    theta = random_descriptor(np.random.default_rng(12), 2)
    with pytest.raises(InputError):
        jacobi_align(theta, theta, np.ones((2, 2)), W)


def test_n2_grid_oracle():
    rng = np.random.default_rng(13)
    for _ in range(5):
        t1, t2 = random_descriptor(rng, 2), random_descriptor(rng, 2)
        d_brute, _ = brute_force_o2(_Pair(t1, t2, W))
        assert abs(alignment_distance(t1, t2, W).dist_sq - d_brute) <= 1e-6


def test_alignment_identity_and_equivalence():
    rng = np.random.default_rng(14)
    for n in (2, 3, 4):
        theta = random_descriptor(rng, n)
        assert alignment_distance(theta, theta, W).dist_sq <= 1e-10
        Q = random_orthogonal(n, rng, int(rng.choice([-1, 1])))
        assert alignment_distance(theta, transform(theta, Q), W).dist_sq <= 1e-8


def test_alignment_symmetry_and_invariance():
    rng = np.random.default_rng(15)
    w = DistanceWeights(0.25, 1.0)
    for _ in range(5):
        t1, t2 = random_descriptor(rng, 3), random_descriptor(rng, 3)
        d12 = alignment_distance(t1, t2, w).dist_sq
        d21 = alignment_distance(t2, t1, w).dist_sq
        assert abs(d12 - d21) / max(d12, 1e-12) <= 1e-4
        dq = alignment_distance(t1, transform(t2, random_orthogonal(3, rng, -1)), w).dist_sq
        assert abs(d12 - dq) <= 1e-6


def test_triangle_inequality_small_n():
    rng = np.random.default_rng(16)
    w = DistanceWeights(0.25, 1.0)
    ts = [random_descriptor(rng, 2) for _ in range(6)]
    D = np.sqrt(distance_matrix(ts, None, w))
    for i in range(6):
        for j in range(6):
            for k in range(6):
                assert D[i, k] <= D[i, j] + D[j, k] + 1e-6


def test_definite_with_mu_weight():
    rng = np.random.default_rng(17)
    t1, t2 = random_descriptor(rng, 2), random_descriptor(rng, 2)
    assert alignment_distance(t1, t2, DistanceWeights(0.25, 1.0)).dist_sq > 1e-6


def test_deterministic_given_seed():
    rng = np.random.default_rng(18)
    t1, t2 = random_descriptor(rng, 4), random_descriptor(rng, 4)
    a = alignment_distance(t1, t2, W, AlignOptions(seed=3))
    b = alignment_distance(t1, t2, W, AlignOptions(seed=3))
    np.testing.assert_array_equal(a.Q, b.Q)
    assert a.dist_sq == b.dist_sq


def test_option_validation():
    with pytest.raises(InputError):
        AlignOptions(n_init=0, include_canonical_inits=False)
    with pytest.raises(InputError):
        AlignOptions(max_sweeps=0)


def test_distance_matrix():
    rng = np.random.default_rng(19)
    ts = [random_descriptor(rng, 3) for _ in range(4)]
    D = distance_matrix(ts, None, W)
    assert np.max(np.diag(D)) <= 1e-10
    np.testing.assert_array_equal(D, D.T)
    D2 = distance_matrix(ts[:2], ts[2:], W)
    for i in range(2):
        for j in range(2):
            assert abs(D2[i, j] - alignment_distance(ts[i], ts[2 + j], W).dist_sq) <= 1e-12
    np.testing.assert_array_equal(distance_matrix(ts, None, W, n_jobs=2), D)


def test_incompatible_pairs():
    rng = np.random.default_rng(20)
    with pytest.raises(InputError):
        alignment_distance(random_descriptor(rng, 2), random_descriptor(rng, 3), W)
    with pytest.raises(InputError):
        alignment_distance(random_descriptor(rng, 2, p=4), random_descriptor(rng, 2, p=5), W)
