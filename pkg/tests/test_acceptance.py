"""Acceptance criteria 1-11; each test prints one ACCEPTANCE line."""
import math
import time

import numpy as np
import pytest

from apfront.cocycle import lyapunov, product_log_det, rotation_number
from apfront.frontspeed import decay_rate, decaying_solution, edge_of, minimal_speed, underline_speed
from apfront.kam_reduce import positive_solution_from_conjugacy, reduce_at_edge
from apfront.kpp_sim import (
    LatticeField,
    build_super_sub,
    critical_front_times,
    integrate,
    pullback_front,
    spreading_speed,
    value_at,
)
from apfront.potentials import almost_mathieu, constant, periodic
from apfront.spectrum import ids, lambda1_truncated, spectral_edge

from conftest import golden_min_oracle

POTENTIALS = {
    "constant": lambda: constant(1.0),
    "periodic": lambda: periodic([0.5, 1.5]),
    "amo_k2": lambda: almost_mathieu(2.0, 5.0),
    "amo_k05": lambda: almost_mathieu(0.5, 3.0),
}


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'} [{elapsed:.2f}s] {detail}")
        assert ok, detail

    return emit


def test_criterion_01_constant_lyapunov(verdict):
    p = constant(1.0)
    t0 = time.perf_counter()
    errs = [abs(lyapunov(E, p, 10_000).value - math.acosh((E + 1) / 2)) for E in (1.5, 2.0, 3.0, 5.0)]
    dt = time.perf_counter() - t0
    verdict(1, max(errs) <= 1e-8 and dt < 1.0, f"max |L - arccosh((E+1)/2)| = {max(errs):.2e}", dt)


def test_criterion_02_amo_supercritical(verdict):
    p = almost_mathieu(2.0, 5.0)
    t0 = time.perf_counter()
    lam = spectral_edge(p, 1e-8, cross_check=False).lambda1
    L = lyapunov(lam, p, 1_000_000, 16).value
    dt = time.perf_counter() - t0
    err = abs(L - math.log(2))
    verdict(2, err <= 0.05 and dt < 30.0, f"lambda1 = {lam:.8f}, |L - ln 2| = {err:.4f}", dt)


def test_criterion_03_amo_subcritical_edge(verdict):
    p = almost_mathieu(0.5, 3.0)
    t0 = time.perf_counter()
    lam = spectral_edge(p, 1e-8, cross_check=False).lambda1
    L = lyapunov(lam + 0.0125, p, 200_000, 16).value
    _, infinite, Ls, L0, _ = underline_speed(p, lam)
    dt = time.perf_counter() - t0
    ok = L <= 0.05 and infinite and dt < 60.0
    verdict(3, ok, f"L(lambda1 + 0.0125) = {L:.4f} (bound 0.05), edge limit {L0:.2e}, "
                   f"underline_w infinite = {infinite}", dt)


def test_criterion_04_edge_convergence(verdict):
    t0 = time.perf_counter()
    Ns = (50, 100, 200, 400, 800)
    worst_drop, worst_closed = 0.0, 0.0
    for name in ("constant", "periodic", "amo_k2", "amo_k05"):
        p = POTENTIALS[name]()
        lams = [lambda1_truncated(p, N) for N in Ns]
        worst_drop = max(worst_drop, float(-np.diff(lams).min()))
        if name == "constant":
            worst_closed = max(abs(l - (1 - 4 * math.sin(math.pi / (4 * N)) ** 2)) for l, N in zip(lams, Ns))
    dt = time.perf_counter() - t0
    verdict(4, worst_drop <= 0.0 and worst_closed <= 1e-10,
            f"largest decrease {worst_drop:.1e}, constant closed-form error {worst_closed:.1e}", dt)


def test_criterion_05_ids_rotation(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for name, make in POTENTIALS.items():
        p = make()
        lam = edge_of(p)
        inf_c = float(p.sample(-5000, 10_000).min())
        for E in np.linspace(inf_c - 4.0, lam, 20):
            k = ids(p, float(E), 2000).k
            rho = rotation_number(float(E), p, 100_000).rho
            d = abs(k - (1 - 2 * rho)) % 1.0
            worst = max(worst, min(d, 1.0 - d))
    dt = time.perf_counter() - t0
    verdict(5, worst <= 0.02, f"max |k - (1 - 2 rho)| mod 1 = {worst:.4f} over 80 energies", dt)


def test_criterion_06_decay_equals_lyapunov(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("constant", "periodic", "amo_k2"):
        p = POTENTIALS[name]()
        lam = edge_of(p)
        for d in (0.5, 1.0, 2.0):
            sol = decaying_solution(lam + d, p, 1000)
            L = lyapunov(lam + d, p).value
            worst = max(worst, abs(decay_rate(sol) - L) / L)
    dt = time.perf_counter() - t0
    verdict(6, worst <= 0.02, f"max relative error {worst:.2e}", dt)


def test_criterion_07_speed_consistency(verdict):
    t0 = time.perf_counter()
    w_const, _ = golden_min_oracle(1.0)
    s_const = spreading_speed(constant(1.0), 200.0, 1200).fitted_speed
    per = periodic([0.5, 1.5])
    w_per = minimal_speed(per).w_star
    s_per = spreading_speed(per, 200.0, 1200).fitted_speed
    dt = time.perf_counter() - t0
    e1, e2 = abs(s_const - w_const) / w_const, abs(s_per - w_per) / w_per
    ok = e1 <= 0.05 and e2 <= 0.05 and s_const >= 0.95 * w_const and s_per >= 0.95 * w_per and dt < 120.0
    verdict(7, ok, f"constant {s_const:.4f} vs w* {w_const:.4f}; periodic {s_per:.4f} vs w* {w_per:.4f}", dt)


def test_criterion_08_pullback_front(verdict):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, E in (("constant", 1.4), ("periodic", 1.5), ("amo_k2", 8.5)):
        p = POTENTIALS[name]()
        pair = build_super_sub(E, p)
        # pullback_front raises SandwichViolation if u leaves [lower, upper]
        _, diag = pullback_front(pair, p)
        pred = diag.extra["predicted_speed"]
        err = abs(diag.fitted_speed - pred) / pred
        mono = diag.extra["min_time_increment"]
        ok &= err <= 0.05 and mono >= -1e-9
        parts.append(f"{name}: speed {diag.fitted_speed:.4f} vs E/L {pred:.4f}, min du {mono:.1e}")
    dt = time.perf_counter() - t0
    verdict(8, ok, "; ".join(parts), dt)


def test_criterion_09_critical_times(verdict):
    t0 = time.perf_counter()
    ok, parts = True, []
    for name in ("constant", "periodic"):
        p = POTENTIALS[name]()
        s = critical_front_times(p, 0.25, 20)
        gaps = np.diff(s)
        reval = max(abs(value_at(p, k, s[k - 1]) - 0.25) for k in range(1, 21))
        ok &= bool(np.all(gaps > 0)) and reval <= 1e-6
        parts.append(f"{name}: min gap {gaps.min():.3f}, re-evaluation error {reval:.1e}")
    dt = time.perf_counter() - t0
    verdict(9, ok, "; ".join(parts), dt)


def test_criterion_10_kam(verdict):
    t0 = time.perf_counter()
    p = almost_mathieu(1e-3, 0.0, strict=False)
    cert = reduce_at_edge(p)
    quad = all(s.epsilon_out <= max(4 * s.epsilon_in**2, 1e-14) for s in cert.steps)
    final_eps = cert.steps[-1].epsilon_out
    sol = positive_solution_from_conjugacy(cert, p)
    rot_drift = max(abs(r - cert.rotations[0]) for r in cert.rotations)
    dt = time.perf_counter() - t0
    ok = (quad and final_eps <= 1e-14 and cert.residual <= 1e-9 and sol.residual_max <= 1e-8
          and sol.inf_u >= math.sqrt(2) / 4 - 0.02 and rot_drift <= 1e-3)
    eps = ", ".join(f"{s.epsilon_in:.1e}" for s in cert.steps) + f", {final_eps:.1e}"
    verdict(10, ok, f"epsilon {eps}; residual {cert.residual:.1e}; eigen-residual {sol.residual_max:.1e}; "
                    f"inf u {sol.inf_u:.4f}; rotation drift {rot_drift:.1e}", dt)


def test_criterion_11_property_suites(verdict):
    t0 = time.perf_counter()
    res = {}
    # determinant of long products
    det_err = 0.0
    for make in POTENTIALS.values():
        p = make()
        for E in np.linspace(-6.0, 12.0, 10):
            ld, sign = product_log_det(float(E), p, 10_000)
            det_err = max(det_err, abs(sign * math.exp(ld) - 1.0))
    res["det"] = det_err <= 1e-10
    # comparison principle and equilibria
    rng = np.random.default_rng(2024)
    p = almost_mathieu(0.5, 3.0)
    worst = 0.0
    for _ in range(100):
        u1 = rng.uniform(0, 1, 41)
        u2 = u1 + (1 - u1) * rng.uniform(0, 1, 41)
        a = integrate(LatticeField(-20, 20, u1), p, 10.0, save_stride=10_000).states[-1]
        b = integrate(LatticeField(-20, 20, u2), p, 10.0, save_stride=10_000).states[-1]
        worst = max(worst, float((a - b).max()))
    res["comparison"] = worst <= 1e-9
    eq = 0.0
    for v in (0.0, 1.0):
        tr = integrate(LatticeField(-20, 20, np.full(41, v), left_value=v, right_value=v), p, 100.0, save_stride=1000)
        eq = max(eq, float(np.abs(tr.states - v).max()))
    res["equilibria"] = eq <= 1e-12
    # L-curve shape and bounds
    shape_ok = bounds_ok = True
    for make in POTENTIALS.values():
        q = make()
        lam = edge_of(q)
        E = lam + np.linspace(0.25, 10.0, 12)
        est = [lyapunov(float(e), q, 50_000, 8) for e in E]
        L = np.array([e.value for e in est])
        se = np.array([max(e.std_error, 1e-12) for e in est])
        shape_ok &= bool(np.all(np.diff(L) >= -2 * (se[1:] + se[:-1])))
        second = L[2:] - 2 * L[1:-1] + L[:-2]
        shape_ok &= bool(np.all(second <= 3 * (se[2:] + 2 * se[1:-1] + se[:-2])))
        inf_c = float(q.sample(-5000, 10_000).min())
        bounds_ok &= bool(L.min() > 0 and np.all(L <= np.sqrt(E - inf_c)))
    res["L_shape"] = shape_ok
    res["L_bounds"] = bounds_ok
    dt = time.perf_counter() - t0
    detail = (f"det error {det_err:.1e}; ordering violation {worst:.1e}; equilibria drift {eq:.1e}; "
              + ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in res.items()))
    verdict(11, all(res.values()), detail, dt)
