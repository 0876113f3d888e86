import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from apfront.cocycle import (
    cocycle_product,
    cocycle_rotation_number,
    hyperbolicity_report,
    is_uniformly_hyperbolic,
    lyapunov,
    rotation_number,
    transfer_matrix,
)
from apfront.frontspeed import edge_of
from apfront.kam_reduce import sl2_exp
from apfront.potentials import almost_mathieu, constant, periodic, shift


def test_transfer_matrix_examples(const1, per2):
    assert np.array_equal(transfer_matrix(3.0, const1, 7), [[4.0, -1.0], [1.0, 0.0]])
    # E = c(n) - 2 gives a zero diagonal
    assert np.array_equal(transfer_matrix(-0.5, per2, 1), [[0.0, -1.0], [1.0, 0.0]])


@given(st.floats(-10, 10), st.integers(-1000, 1000))
def test_transfer_det_exact(E, n):
    A = transfer_matrix(E, almost_mathieu(1.0, 3.0), n)
    assert A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0] == 1.0


def test_product_small(const1):
    o = cocycle_product(3.0, const1, 0)
    assert np.array_equal(o.product(), np.eye(2)) and o.log_scale == 0.0
    assert np.allclose(cocycle_product(3.0, const1, 2).product(), [[15, -4], [4, -1]], atol=1e-12)


def test_product_matches_direct_multiplication(amo_sub):
    E = 1.3
    M = np.eye(2)
    for n in range(40):
        M = transfer_matrix(E, amo_sub, n) @ M
    assert np.allclose(cocycle_product(E, amo_sub, 40).product(), M, rtol=1e-12)


def test_negative_product_is_inverse(amo_sub):
    E, m = 2.2, 25
    P = np.eye(2)
    for n in range(-m, 0):
        P = transfer_matrix(E, amo_sub, n) @ P
    assert np.allclose(cocycle_product(E, amo_sub, -m).product(), np.linalg.inv(P), rtol=1e-10)
    assert np.allclose(cocycle_product(E, shift(amo_sub, -m), m).product(), P, rtol=1e-12)


@pytest.mark.parametrize(
    "p,E",
    [
        (constant(1.0), -2.0),
        (constant(1.0), 0.3),
        (periodic([0.5, 1.5]), 0.8),
        (periodic([0.5, 1.5, 1.0]), -1.0),
    ],
)
def test_det_preserved_in_band(p, E):
    # bounded products: the reconstructed determinant is meaningful at n = 10^4
    o = cocycle_product(E, p, 10_000)
    assert abs(o.det() - 1.0) <= 1e-10


@given(st.floats(1.2, 6.0))
def test_det_preserved_hyperbolic_short(E):
    # until cancellation dominates (||A_n||^2 * eps_mach ~ 1e-10)
    p = constant(1.0)
    n = max(1, int(6.0 / math.acosh((E + 1) / 2)))
    assert abs(cocycle_product(E, p, n).det() - 1.0) <= 1e-10


@pytest.mark.parametrize("E", [1.5, 2.0, 3.0, 5.0])
def test_lyapunov_constant_closed_form(const1, E):
    est = lyapunov(E, const1, 10_000)
    assert abs(est.value - math.acosh((E + 1) / 2)) <= 1e-8


@pytest.mark.parametrize("E", [-6.0, 1.5, 2.0, 4.0])
def test_lyapunov_periodic_monodromy(per2, E):
    M = transfer_matrix(E, per2, 1) @ transfer_matrix(E, per2, 0)
    oracle = 0.5 * math.log(max(abs(np.linalg.eigvals(M))))
    assert lyapunov(E, per2, 20_000).value == pytest.approx(oracle, abs=1e-8)


def test_lyapunov_amo_supercritical(amo_super):
    lam = edge_of(amo_super)
    assert abs(lyapunov(lam, amo_super, 100_000, 16).value - math.log(2)) <= 0.05


def test_lyapunov_nonnegative(amo_sub):
    for E in (0.5, 1.0, 2.0, 3.0):
        assert lyapunov(E, amo_sub, 5000).value >= -1e-9


@pytest.mark.parametrize("fixture", ["const1", "per2", "amo_super", "amo_sub"])
def test_lyapunov_curve_shape(fixture, request):
    p = request.getfixturevalue(fixture)
    lam = edge_of(p)
    E = lam + np.linspace(0.25, 10.0, 16)
    est = [lyapunov(e, p, 50_000, 8) for e in E]
    L = np.array([e.value for e in est])
    se = np.array([max(e.std_error, 1e-12) for e in est])
    assert np.all(np.diff(L) >= -2 * (se[1:] + se[:-1]))
    h = E[1] - E[0]
    second = L[2:] - 2 * L[1:-1] + L[:-2]
    assert np.all(second <= 3 * (se[2:] + 2 * se[1:-1] + se[:-2]) + 1e-12 * h)
    inf_c = p.sample(-5000, 10_000).min()
    assert L.min() > 0
    assert np.all(L <= np.sqrt(E - inf_c) + 1e-9)


def test_rotation_examples(const1):
    assert rotation_number(-2.0, constant(0.0, strict=False), 1000).rho == pytest.approx(0.25, abs=1e-12)
    assert rotation_number(3.0, const1, 10_000).rho <= 1e-3
    assert rotation_number(-6.0, const1, 10_000).rho == pytest.approx(0.5, abs=1e-3)


def test_rotation_in_band_constant(const1):
    # A is conjugate to rotation by theta with 2cos(theta) = E + 2 - c0
    for E in (-2.5, -1.0, 0.5):
        th = math.acos((E + 1) / 2)
        assert rotation_number(E, const1, 100_000).rho == pytest.approx(th / (2 * math.pi), abs=1e-4)


def test_rotation_monotone(amo_sub):
    Es = np.linspace(-2.0, 4.0, 25)
    rho = [rotation_number(E, amo_sub, 20_000).rho for E in Es]
    assert np.all(np.diff(rho) <= 1e-3)


def test_uniform_hyperbolicity_examples(const1, amo_super):
    assert is_uniformly_hyperbolic(3.0, const1)
    assert not is_uniformly_hyperbolic(-2.0, constant(0.0, strict=False))
    lam = edge_of(amo_super)
    assert is_uniformly_hyperbolic(lam + 0.5, amo_super)
    assert hyperbolicity_report(3.0, const1).min_splitting_angle > 0.1


def _sl2_field(rng, amp, modes=3):
    coef = rng.normal(size=(modes, 2, 2, 2)) * amp
    coef[..., 1, 1, :] = -coef[..., 0, 0, :]

    def F(theta):
        th = np.asarray(theta).reshape(-1)
        out = np.zeros((th.size, 2, 2))
        for k in range(modes):
            out += np.cos(2 * np.pi * (k + 1) * th)[:, None, None] * coef[k, :, :, 0]
            out += np.sin(2 * np.pi * (k + 1) * th)[:, None, None] * coef[k, :, :, 1]
        return out

    return F


def _schrodinger(p, E):
    def S(theta):
        c = p.on_torus(theta)
        m = np.zeros((len(c), 2, 2))
        m[:, 0, 0] = E + 2 - c
        m[:, 0, 1] = -1
        m[:, 1, 0] = 1
        return m

    return S


@pytest.mark.parametrize("seed", range(3))
def test_rotation_conjugation_invariance(amo_sub, seed):
    rng = np.random.default_rng(seed)
    a = amo_sub.alpha
    S = _schrodinger(amo_sub, 1.7)
    Y = _sl2_field(rng, 0.1)

    def conj(theta):
        B = sl2_exp(Y(theta))
        Bs = sl2_exp(Y(np.mod(theta + a[0], 1.0)))
        return np.linalg.solve(Bs, S(theta) @ B)

    r0 = cocycle_rotation_number(S, a, amo_sub.phase, 50_000)
    r1 = cocycle_rotation_number(conj, a, amo_sub.phase, 50_000)
    assert abs(r0 - r1) <= 1e-3


@pytest.mark.parametrize("seed", range(4))
def test_rotation_perturbation_bound(seed):
    rng = np.random.default_rng(seed)
    alpha = [(math.sqrt(5) - 1) / 2]
    E = rng.uniform(-3.0, 1.0)
    A = np.array([[E + 1.0, -1.0], [1.0, 0.0]])
    F = _sl2_field(rng, 1e-3)
    grid = np.linspace(0, 1, 2048, endpoint=False)
    F0 = np.linalg.norm(F(grid), 2, axis=(1, 2)).max()

    def pert(theta):
        return A @ sl2_exp(F(theta))

    r0 = cocycle_rotation_number(lambda th: np.broadcast_to(A, (len(th), 2, 2)), alpha, [0.0], 50_000)
    r1 = cocycle_rotation_number(pert, alpha, [0.0], 50_000)
    assert abs(r1 - r0) <= 2 * np.linalg.norm(A, 2) * math.sqrt(F0)


@given(st.floats(-6.0, 12.0), st.sampled_from(["const", "per", "amo2", "amo05"]))
def test_qr_determinant_long_products(E, which):
    from apfront.cocycle import product_log_det

    p = {"const": constant(1.0), "per": periodic([0.5, 1.5]),
         "amo2": almost_mathieu(2.0, 5.0), "amo05": almost_mathieu(0.5, 3.0)}[which]
    log_det, sign = product_log_det(E, p, 10_000)
    assert sign == 1
    assert abs(math.expm1(log_det)) <= 1e-10
