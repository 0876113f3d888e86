import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apfront.errors import ConjugacyTooFar, NotParabolic, SmallDivisor, SmallnessViolated
from apfront.kam_reduce import (
    FourierMatrixSeries,
    KamConfig,
    classify_trace,
    grid_points,
    homological_solve,
    kam_step,
    positive_solution_from_conjugacy,
    reduce_at_edge,
    sl2_exp,
    sl2_log,
    weighted_norm,
)
from apfront.potentials import GOLDEN, almost_mathieu

A_PAR = np.array([[2.0, -1.0], [1.0, 0.0]])


def random_real_series(rng, K_modes, K=8, scale=1.0, strip=0.5, d=1):
    """Real-valued sl(2) series: F(-k) = conj(F(k)), traceless coefficients."""
    F = FourierMatrixSeries.zeros(d, K, strip)
    for k in range(1, K_modes + 1):
        m = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))) * scale * math.exp(-k)
        m[1, 1] = -m[0, 0]
        F.coeffs[K + k] = m
        F.coeffs[K - k] = m.conj()
    m0 = rng.normal(size=(2, 2)) * scale
    m0[1, 1] = -m0[0, 0]
    F.coeffs[K] = m0
    return F


def test_zero_norm():
    assert weighted_norm(FourierMatrixSeries.zeros(2, 4), 0.3) == 0.0


def test_cosine_mode_norm():
    eps, r = 1e-3, 0.4
    m = np.array([[0.0, 0.0], [eps, 0.0]])
    F = FourierMatrixSeries.from_modes({(1,): m, (-1,): m}, 1, 4, 0.5)
    assert weighted_norm(F, r) == pytest.approx(2 * eps * math.exp(r), rel=1e-14)


def test_norm_beyond_strip():
    with pytest.raises(ValueError):
        weighted_norm(FourierMatrixSeries.zeros(1, 2, 0.2), 0.3)


@given(st.integers(0, 2**31), st.integers(1, 12), st.floats(0.05, 0.45))
def test_truncation_tail_bound(seed, K, gap):
    rng = np.random.default_rng(seed)
    r = 0.5
    F = random_real_series(rng, 12, K=12, strip=r)
    tail = weighted_norm(F.tail(K), r - gap)
    assert tail <= math.exp(-K * gap) * weighted_norm(F, r) * (1 + 1e-12)
    assert weighted_norm(F.truncate(K), r) + weighted_norm(F.tail(K), r) == pytest.approx(weighted_norm(F, r))


@given(st.integers(0, 2**31))
def test_reality(seed):
    rng = np.random.default_rng(seed)
    F = random_real_series(rng, 6)
    assert F.max_imag(grid_points(1, 64)) <= 1e-12


def test_sl2_exp_log_roundtrip():
    rng = np.random.default_rng(3)
    Y = rng.normal(size=(50, 2, 2)) * 0.1
    Y[:, 1, 1] = -Y[:, 0, 0]
    M = sl2_exp(Y)
    assert np.abs(np.linalg.det(M) - 1).max() <= 1e-13
    assert np.abs(sl2_log(M) - Y).max() <= 1e-12


def test_homological_zero():
    G = FourierMatrixSeries.zeros(1, 5)
    Y = homological_solve(np.diag([1.0, 1.0]).astype(complex), G, GOLDEN, 5)
    assert not np.any(Y.coeffs)


def test_homological_single_mode_rotation():
    rho = 0.3
    A = np.diag([np.exp(1j * rho), np.exp(-1j * rho)])
    g = 0.7 - 0.2j
    G = FourierMatrixSeries.from_modes({(2,): [[0, 0], [g, 0]]}, 1, 4)
    Y = homological_solve(A, G, GOLDEN, 4, rho_A=rho)
    z = np.exp(2j * np.pi * 2 * GOLDEN)
    expected = g / (z * np.exp(2j * rho) - 1)
    assert Y.coeffs[4 + 2][1, 0] == pytest.approx(expected, abs=1e-15)
    assert Y.coeffs[4 + 2][0, 0] == 0 and Y.coeffs[4 + 2][0, 1] == 0
    assert np.count_nonzero(np.abs(Y.coeffs).sum(axis=(-2, -1))) == 1


@pytest.mark.parametrize("d", [1, 2])
def test_homological_substitute_back(d):
    rng = np.random.default_rng(11)
    mu = np.exp(0.37j)
    A = np.array([[mu, 0.8 - 0.3j], [0.0, 1 / mu]])
    K = 5
    G = FourierMatrixSeries(rng.normal(size=(2 * K + 1,) * d + (2, 2)) + 1j * rng.normal(size=(2 * K + 1,) * d + (2, 2)), 1.0)
    G.coeffs[..., 1, 1] = -G.coeffs[..., 0, 0]
    alpha = np.array([GOLDEN, math.sqrt(2) - 1][:d])
    Y = homological_solve(A, G, alpha, K)
    assert not np.any(Y.zero_mode())
    pts = grid_points(d, 17)
    lhs = np.linalg.inv(A) @ Y(np.mod(pts + alpha, 1.0)) @ A - Y(pts)
    target = G.truncate(K)
    target.coeffs[(K,) * d] = 0
    assert np.abs(lhs - target(pts)).max() <= 1e-12


def test_homological_small_divisor():
    G = FourierMatrixSeries.from_modes({(1,): [[0, 1], [1, 0]]}, 1, 3)
    with pytest.raises(SmallDivisor) as exc:
        homological_solve(np.eye(2, dtype=complex), G, 1.0, 3)
    assert exc.value.k == (1,)


def test_kam_step_zero():
    Z = FourierMatrixSeries.zeros(1, 4, 0.5)
    Y, A2, F2, rep = kam_step(A_PAR, Z, GOLDEN, 0.5, 0.25)
    assert weighted_norm(Y, 0.25) == 0 and weighted_norm(F2, 0.25) == 0
    assert np.array_equal(A2, A_PAR)


@given(st.integers(0, 2**31))
def test_kam_step_random(seed):
    rng = np.random.default_rng(seed)
    r, rp = 0.5, 0.25
    F = random_real_series(rng, 5, K=8, strip=r)
    F.coeffs *= 1e-4 / weighted_norm(F, r)
    Y, A2, F2, rep = kam_step(A_PAR, F, GOLDEN, r, rp)
    assert rep.epsilon_in == pytest.approx(1e-4)
    assert weighted_norm(Y, rp) <= 1e-2
    assert weighted_norm(F2, rp) <= 4e-8
    assert np.linalg.norm(A2 - A_PAR, 2) <= 2e-4 * np.linalg.norm(A_PAR, 2)
    assert all(rep.bounds_hold().values())
    # conjugation identity on a grid
    pts = grid_points(1, 64)
    lhs = sl2_exp(-Y.real_values(np.mod(pts + GOLDEN, 1.0))) @ A_PAR @ sl2_exp(F.real_values(pts)) @ sl2_exp(Y.real_values(pts))
    rhs = A2 @ sl2_exp(F2.real_values(pts))
    assert np.abs(lhs - rhs).max() <= 1e-13


def test_kam_step_smallness():
    F = random_real_series(np.random.default_rng(0), 3, strip=0.5)
    F.coeffs *= 1e3 / weighted_norm(F, 0.5)
    with pytest.raises(SmallnessViolated):
        kam_step(A_PAR, F, GOLDEN, 0.5, 0.25)


def test_classify_trace():
    cfg = KamConfig()
    assert classify_trace(2.0 + 1e-7, cfg) == "parabolic"
    assert classify_trace(2.0 - 5e-5, cfg) == "inconclusive"
    assert classify_trace(2.1, cfg) == "hyperbolic"
    assert classify_trace(1.9, cfg) == "elliptic"


def test_reduce_free():
    p = almost_mathieu(0.0, 0.0, strict=False)
    cert = reduce_at_edge(p, 0.0, refine=False, check_rotation=False)
    assert cert.residual == 0.0
    assert cert.conjugacy_distance_to_identity == 0.0
    assert np.array_equal(cert.A_tilde, A_PAR)
    assert cert.parabolic


@pytest.fixture(scope="module")
def amo_small():
    return almost_mathieu(1e-3, 0.0, strict=False)


@pytest.fixture(scope="module")
def cert(amo_small):
    return reduce_at_edge(amo_small)


def test_reduce_quadratic_decay(cert):
    assert len(cert.steps) >= 2
    for s in cert.steps:
        assert all(s.bounds_hold(1e-14).values())
        assert s.rotation_condition
    for a, b in zip(cert.steps, cert.steps[1:]):
        assert b.epsilon_in == pytest.approx(a.epsilon_out)
    assert cert.steps[-1].epsilon_out <= 1e-14


def test_reduce_certificate(cert):
    assert cert.residual <= 1e-9
    assert cert.parabolic and cert.classification == "parabolic"
    assert abs(np.linalg.det(cert.A_tilde) - 1.0) <= 1e-10
    assert cert.conjugacy_distance_to_identity <= 0.01
    assert abs(cert.E - cert.E_input) <= 1e-6
    pts = grid_points(1, 128)
    for Y in cert.B.factors:
        assert Y.max_imag(pts) <= 1e-12


def test_reduce_rotation_invariance(cert):
    r0 = cert.rotations[0]
    assert len(cert.rotations) == len(cert.steps) + 1
    assert max(abs(r - r0) for r in cert.rotations) <= 1e-3


@pytest.mark.parametrize("shift", [-1e-8, 1e-8])
def test_classification_stable(cert, amo_small, shift):
    again = reduce_at_edge(amo_small, cert.E + shift, refine=False, check_rotation=False)
    assert again.classification == cert.classification


def test_positive_solution(cert, amo_small):
    sol = positive_solution_from_conjugacy(cert, amo_small)
    assert len(sol.u) == 10_000
    assert sol.residual_max <= 1e-8
    assert sol.inf_u >= math.sqrt(2) / 4 - 0.02
    assert np.all(sol.u > 0)
    assert sol.to_csv().startswith("n,u\n")


def test_positive_solution_errors(cert, amo_small):
    with pytest.raises(ConjugacyTooFar):
        positive_solution_from_conjugacy(cert, amo_small, max_distance=1e-9)
    ell = reduce_at_edge(amo_small, cert.E - 0.01, refine=False, check_rotation=False)
    assert ell.classification == "elliptic"
    with pytest.raises(NotParabolic):
        positive_solution_from_conjugacy(ell, amo_small)
