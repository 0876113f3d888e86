"""Lattice Fisher-KPP dynamics u_t = u(n+1) + u(n-1) - 2u(n) + c(n) u (1 - u).

The infinite lattice is replaced by a window [a, b] with frozen ghost values
(1 on the left, 0 on the right). Callers keep fronts at least MARGIN sites away
from the right edge; runs that violate this raise BoundaryContamination.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .cocycle import lyapunov
from .errors import (
    BoundaryContamination,
    LevelNeverReached,
    NoEpsilon,
    RangeViolation,
    SandwichViolation,
    WeightVerificationFailed,
)
from .frontspeed import DecaySolution, decaying_solution, edge_of
from .potentials import Potential

MARGIN = 50
THETA_LEVEL = 0.25
RANGE_TOL = 1e-9
EPS_GRID = (0.5, 0.35, 0.25, 0.15, 0.1, 0.05, 0.02, 0.01)


def dt_max(p: Potential) -> float:
    return 0.1 / (4.0 + max(p.sup_bound, 0.0))


@dataclass
class LatticeField:
    a: int
    b: int
    u: np.ndarray
    t: float = 0.0
    left_value: float = 1.0
    right_value: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.b < self.a or self.u.shape != (self.b - self.a + 1,):
            raise ValueError("u must have one entry per site of [a, b]")
        if not math.isfinite(self.t):
            raise ValueError("t must be finite")

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.a, self.b + 1)

    def at(self, n: int) -> float:
        return float(self.u[n - self.a])


def heaviside(a: int, b: int, k: int = 0, t: float = 0.0) -> LatticeField:
    """H_k: 1 for n <= -k, 0 otherwise."""
    n = np.arange(a, b + 1)
    return LatticeField(a, b, (n <= -k).astype(float), t)


def rhs(field: LatticeField, p: Potential) -> np.ndarray:
    u = field.u
    c = p.sample(field.a, u.size)
    ext = np.concatenate(([field.left_value], u, [field.right_value]))
    return ext[2:] + ext[:-2] - 2.0 * u + c * u * (1.0 - u)


@dataclass
class Trajectory:
    a: int
    b: int
    times: np.ndarray
    states: np.ndarray  # shape (len(times), b - a + 1)

    def field(self, i: int) -> LatticeField:
        return LatticeField(self.a, self.b, self.states[i].copy(), float(self.times[i]))

    def to_csv(self, save_stride: int = 1) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "n", "u"])
        sites = np.arange(self.a, self.b + 1)
        for i in range(0, len(self.times), save_stride):
            for n, v in zip(sites, self.states[i]):
                w.writerow([repr(float(self.times[i])), int(n), repr(float(v))])
        return buf.getvalue()


def _steps(field, c, dt, nsteps):
    u, bad, step = _kernels.kpp_rk4(
        field.u, c, field.left_value, field.right_value, dt, nsteps, -RANGE_TOL, 1.0 + RANGE_TOL
    )
    if bad >= 0:
        raise RangeViolation(
            f"u({field.a + bad}) = {u[bad]!r} left [0, 1] at t = {field.t + (step + 1) * dt:.6g}; reduce dt"
        )
    return u


def integrate(
    field: LatticeField,
    p: Potential,
    t_end: float,
    dt: float | None = None,
    save_stride: int = 1,
    callback=None,
) -> Trajectory:
    """Fixed-step RK4 from field.t to t_end; states stored every ``save_stride`` steps.

    The step is shrunk so that t_end is hit exactly. ``callback(field)`` is called at
    every stored state and may raise to abort the run.
    """
    if t_end <= field.t:
        raise ValueError("t_end must exceed field.t")
    limit = dt_max(p)
    dt = limit if dt is None else dt
    if dt > limit * (1.0 + 1e-12):
        raise ValueError(f"dt={dt} exceeds the stability limit {limit}")
    nsteps = int(math.ceil((t_end - field.t) / dt - 1e-9))
    h = (t_end - field.t) / nsteps
    c = p.sample(field.a, field.u.size)
    cur = replace(field, u=field.u.copy())
    times, states = [cur.t], [cur.u.copy()]
    if callback is not None:
        callback(cur)
    done = 0
    t0 = field.t
    while done < nsteps:
        m = min(save_stride, nsteps - done)
        cur.u = _steps(cur, c, h, m)
        done += m
        cur.t = t0 + done * h
        times.append(cur.t)
        states.append(cur.u.copy())
        if callback is not None:
            callback(cur)
    return Trajectory(field.a, field.b, np.array(times), np.array(states))


def front_position(field: LatticeField, theta_level: float = THETA_LEVEL) -> int | None:
    """N = sup{n : u(n) >= theta_level}, None when the set is empty."""
    idx = np.nonzero(field.u >= theta_level)[0]
    return None if idx.size == 0 else int(field.a + idx[-1])


@dataclass
class FrontDiagnostics:
    times: np.ndarray
    N_of_t: list
    theta_level: float
    fitted_speed: float
    fit_residual: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "theta_level": self.theta_level,
                "fitted_speed": self.fitted_speed,
                "fit_residual": self.fit_residual,
                "times": [float(t) for t in self.times],
                "N_of_t": [None if n is None else int(n) for n in self.N_of_t],
            },
            sort_keys=True,
        )


def fit_speed(times, N_of_t, theta_level=THETA_LEVEL) -> FrontDiagnostics:
    """Least-squares slope of N(t) over the last half of the time range."""
    times = np.asarray(times, dtype=float)
    t_mid = times[0] + 0.5 * (times[-1] - times[0])
    sel = [i for i, (t, n) in enumerate(zip(times, N_of_t)) if t >= t_mid and n is not None]
    if len(sel) < 2:
        return FrontDiagnostics(times, list(N_of_t), theta_level, math.nan, math.nan)
    t = times[sel]
    n = np.array([N_of_t[i] for i in sel], dtype=float)
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, n, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - n) ** 2)))
    return FrontDiagnostics(times, list(N_of_t), theta_level, float(coef[0]), resid)


def _window(window, left_default):
    if isinstance(window, (int, np.integer)):
        a = -int(left_default(int(window)))
        return a, a + int(window) - 1
    a, b = window
    return int(a), int(b)


def spreading_speed(
    p: Potential,
    T: float = 200.0,
    window=1200,
    theta_level: float = THETA_LEVEL,
    dt: float | None = None,
    record_every: float = 0.5,
) -> FrontDiagnostics:
    """Integrate from the Heaviside H_0 and fit the speed of N(t).

    An integer ``window`` of W sites means [-W/4, 3W/4).
    """
    a, b = _window(window, lambda W: W // 4)
    f0 = heaviside(a, b)
    h = dt_max(p) if dt is None else dt
    stride = max(1, int(round(record_every / h)))
    Ns = []

    def watch(f):
        N = front_position(f, theta_level)
        if N is not None and N > b - MARGIN:
            raise BoundaryContamination(f"front at {N} within {MARGIN} sites of the right edge {b} at t={f.t:.4g}")
        Ns.append(N)

    traj = integrate(f0, p, T, h, stride, watch)
    diag = fit_speed(traj.times, Ns, theta_level)
    diag.extra["final_state"] = traj.states[-1]
    diag.extra["window"] = (a, b)
    return diag


# super/sub-solutions


@dataclass
class SuperSubPair:
    E: float
    epsilon: float
    kappa: float
    amplitude_A: float
    theta_weight: np.ndarray  # on sites -N_w .. N_w
    phi: DecaySolution
    phi_shifted: DecaySolution = field(repr=False)
    delta: float = 0.0
    weight_residual: float = 0.0

    @property
    def N_w(self) -> int:
        return self.phi.N_w

    @property
    def sites(self) -> np.ndarray:
        return self.phi.sites

    def _log_zeta(self, t):
        return self.phi.log_phi + self.E * t

    def upper(self, t: float) -> np.ndarray:
        return np.exp(np.minimum(self._log_zeta(t), 0.0))

    def lower(self, t: float) -> np.ndarray:
        lz = np.minimum(self._log_zeta(t), 50.0)
        corr = np.log(self.amplitude_A) + np.log(self.theta_weight) + (1.0 + self.epsilon) * lz
        return np.maximum(0.0, np.exp(lz) - np.exp(np.minimum(corr, 700.0)))

    def upper_dt(self, t):
        z = np.exp(np.minimum(self._log_zeta(t), 0.0))
        return np.where(self._log_zeta(t) < 0.0, self.E * z, 0.0)

    def lower_dt(self, t):
        lz = np.minimum(self._log_zeta(t), 50.0)
        corr = np.exp(np.minimum(np.log(self.amplitude_A * self.theta_weight) + (1.0 + self.epsilon) * lz, 700.0))
        val = self.E * np.exp(lz) - (1.0 + self.epsilon) * self.E * corr
        return np.where(self.lower(t) > 0.0, val, 0.0)

    def _residual(self, w, w_t, c):
        # w_t - (w(n+1) + w(n-1) - 2w(n)) - c w (1 - w) on interior sites
        lap = w[2:] + w[:-2] - 2.0 * w[1:-1]
        return w_t[1:-1] - lap - c[1:-1] * w[1:-1] * (1.0 - w[1:-1])

    def super_residual(self, t: float) -> np.ndarray:
        c = self.phi.potential.sample(-self.N_w, 2 * self.N_w + 1)
        return self._residual(self.upper(t), self.upper_dt(t), c)

    def sub_residual(self, t: float) -> np.ndarray:
        """Residual on interior sites, NaN where the subsolution vanishes."""
        c = self.phi.potential.sample(-self.N_w, 2 * self.N_w + 1)
        lo = self.lower(t)
        r = self._residual(lo, self.lower_dt(t), c)
        return np.where(lo[1:-1] > 0.0, r, np.nan)


def weighted_operator(theta: np.ndarray, sig: np.ndarray, c: np.ndarray, s: float) -> np.ndarray:
    """(L^{s sigma} theta)(n) = e^{-s sigma(n)} theta(n+1) + e^{s sigma(n-1)} theta(n-1) + (c(n) - 2) theta(n).

    ``theta`` and ``c`` live on sites -N..N, ``sig`` on -N..N-1; interior sites only.
    """
    return (
        np.exp(-s * sig[1:]) * theta[2:]
        + np.exp(s * sig[:-1]) * theta[:-2]
        + (c[1:-1] - 2.0) * theta[1:-1]
    )


def find_epsilon(E: float, p: Potential, L_E: float, n_iters: int, n_phases: int, grid=EPS_GRID) -> float:
    """Largest grid epsilon with L((1+eps)E) > (1+eps) L(E)."""
    for eps in grid:
        if lyapunov((1.0 + eps) * E, p, n_iters, n_phases).value > (1.0 + eps) * L_E:
            return float(eps)
    raise NoEpsilon(f"no epsilon in {list(grid)} with E/L(E) > (1+eps)E/L((1+eps)E) at E={E}")


def solve_kappa(E: float, eps: float, p: Potential, L_E: float, n_iters: int, n_phases: int, tol: float = 1e-10) -> float:
    """Root in (0, eps E) of F(kappa) = 1/L(E) - (1+eps)/L(E+kappa), by bisection."""
    def F(k):
        return 1.0 / L_E - (1.0 + eps) / lyapunov(E + k, p, n_iters, n_phases).value

    lo, hi = 0.0, eps * E
    if F(hi) <= 0.0:
        raise NoEpsilon(f"F(eps E) <= 0 at E={E}, eps={eps}")
    while hi - lo > tol * max(1.0, E):
        mid = 0.5 * (lo + hi)
        if F(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def build_super_sub(
    E: float,
    p: Potential,
    N_w: int = 400,
    n_iters: int = 100_000,
    n_phases: int = 8,
    collar: int = 1,
    weight_tol: float = 1e-9,
) -> SuperSubPair:
    """Super/sub-solution pair phi e^{Et} and phi e^{Et} - A theta phi^{1+eps} e^{(1+eps)Et}.

    The weight is theta = phi_{E+kappa} / phi_E^{1+eps}, a positive eigenfunction of
    the weighted operator L^{(1+eps) sigma_E} with eigenvalue E + kappa, so the
    required inequality holds with delta = eps E - kappa.
    """
    lam = edge_of(p)
    L_E = lyapunov(E, p, n_iters, n_phases).value
    eps = find_epsilon(E, p, L_E, n_iters, n_phases)
    kappa = solve_kappa(E, eps, p, L_E, n_iters, n_phases)
    delta = eps * E - kappa
    phi = decaying_solution(E, p, N_w, lambda1=lam)
    phi_k = decaying_solution(E + kappa, p, N_w, lambda1=lam)
    log_theta = phi_k.log_phi - (1.0 + eps) * phi.log_phi
    theta = np.exp(log_theta)
    c = p.sample(-N_w, 2 * N_w + 1)
    sig = -np.diff(phi.log_phi)
    # -L theta >= (delta - (1+eps)E) theta, checked relative to theta
    gap = (-weighted_operator(theta, sig, c, 1.0 + eps) - (delta - (1.0 + eps) * E) * theta[1:-1]) / theta[1:-1]
    inner = slice(collar - 1, gap.size - collar + 1) if collar > 1 else slice(None)
    bad = np.nonzero(gap[inner] < -weight_tol)[0]
    if bad.size:
        off = (collar - 1 if collar > 1 else 0) - N_w + 1
        raise WeightVerificationFailed(
            f"weighted inequality fails at {bad.size} interior sites", [int(i + off) for i in bad]
        )
    c_sup = max(p.sup_bound, float(c.max()))
    A = max(c_sup**eps / (delta**eps * theta.min()), 1.0 / theta.min())
    return SuperSubPair(E, eps, kappa, A, theta, phi, phi_k, delta, float(-gap.min()))


# pullback front


def _crossing_times(times, values, level):
    """First time each column of ``values`` reaches ``level`` (linear interpolation)."""
    out = np.full(values.shape[1], np.nan)
    for j in range(values.shape[1]):
        col = values[:, j]
        idx = np.nonzero(col >= level)[0]
        if idx.size == 0 or idx[0] == 0:
            continue
        i = idx[0]
        w = (level - col[i - 1]) / (col[i] - col[i - 1])
        out[j] = times[i - 1] + w * (times[i] - times[i - 1])
    return out


def pullback_front(
    pair: SuperSubPair,
    p: Potential,
    i_max: int = 10,
    T: float = 30.0,
    theta_level: float = THETA_LEVEL,
    dt: float | None = None,
    save_every: float = 0.1,
    tol: float = 1e-9,
):
    """Solve from u(-i) = upper(-i) for i = 1..i_max, checking the sandwich.

    Returns (trajectory of the i_max run on t in [-1, T], FrontDiagnostics).
    """
    N_w = pair.N_w
    h = dt_max(p) if dt is None else dt
    stride = max(1, int(round(save_every / h)))
    if pair.upper(-float(i_max))[0] < 1.0 - 1e-12:
        raise BoundaryContamination("upper envelope is below 1 at the left edge; enlarge the window")
    if pair.upper(T)[-MARGIN] > 1e-6:
        raise BoundaryContamination("upper envelope is not small near the right edge at time T")

    def check(f):
        lo, up = pair.lower(f.t), pair.upper(f.t)
        bad = np.nonzero((f.u < lo - tol) | (f.u > up + tol))[0]
        if bad.size:
            n = int(bad[0]) - N_w
            raise SandwichViolation(
                f"u={f.u[bad[0]]!r} outside [{lo[bad[0]]!r}, {up[bad[0]]!r}] at n={n}, t={f.t:.6g}"
            )

    traj = None
    for i in range(1, i_max + 1):
        f0 = LatticeField(-N_w, N_w, pair.upper(-float(i)), -float(i))
        traj = integrate(f0, p, T, h, stride, check)
    keep = traj.times >= -1.0 - 1e-12
    traj = Trajectory(traj.a, traj.b, traj.times[keep], traj.states[keep])
    Ns = [front_position(traj.field(i), theta_level) for i in range(len(traj.times))]
    diag = fit_speed(traj.times, Ns, theta_level)
    diffs = np.diff(traj.states, axis=0)
    diag.extra["min_time_increment"] = float(diffs.min()) if diffs.size else 0.0
    diag.extra["predicted_speed"] = pair.E / lyapunov(pair.E, p).value
    # level times against t(n) = -(1/E) log phi_E(n): u(t, n) = theta at t = t(n) + const
    cross = _crossing_times(traj.times, traj.states, theta_level)
    t_pred = -pair.phi.log_phi / pair.E
    ok = np.isfinite(cross)
    offs = cross[ok] - t_pred[ok]
    diag.extra["level_time_offset_spread"] = float(offs.max() - offs.min()) if offs.size else math.nan
    return traj, diag


# critical fronts


def _first_crossing(f: LatticeField, c, h: float, nsteps_cap: int, site: int, theta: float, bisect_tol: float):
    j = site - f.a
    u = f.u.copy()
    t = f.t
    if u[j] >= theta:
        return t
    for _ in range(nsteps_cap):
        nxt, bad, _ = _kernels.kpp_rk4(u, c, f.left_value, f.right_value, h, 1, -RANGE_TOL, 1.0 + RANGE_TOL)
        if bad >= 0:
            raise RangeViolation(f"range violated at site {f.a + bad}, t={t:.6g}")
        if np.any(nxt[-MARGIN:] >= THETA_LEVEL):
            raise BoundaryContamination(f"front within {MARGIN} sites of the right edge at t={t:.6g}")
        if nxt[j] >= theta:
            lo, hi = 0.0, h
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                trial = _kernels.kpp_rk4(u, c, f.left_value, f.right_value, mid, 1, -1.0, 2.0)[0]
                if trial[j] >= theta:
                    hi = mid
                else:
                    lo = mid
            return t + 0.5 * (lo + hi)
        u = nxt
        t += h
    return None


def critical_front_times(
    p: Potential,
    theta: float = THETA_LEVEL,
    k_max: int = 20,
    dt: float | None = None,
    t_cap: float | None = None,
    right: int = 200,
    bisect_tol: float = 1e-10,
) -> np.ndarray:
    """s_k = min{s : u(s, 0; H_k) = theta} for k = 1..k_max."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    h = dt_max(p) if dt is None else dt
    a, b = -k_max - 200, right
    c = p.sample(a, b - a + 1)
    out = []
    for k in range(1, k_max + 1):
        cap = t_cap if t_cap is not None else 50.0 + 5.0 * k
        s = _first_crossing(heaviside(a, b, k), c, h, int(math.ceil(cap / h)), 0, theta, bisect_tol)
        if s is None:
            raise LevelNeverReached(f"u(., 0) stays below {theta} up to t={cap} for k={k}")
        out.append(s)
    return np.array(out)


def value_at(p: Potential, k: int, s: float, site: int = 0, k_max: int = 20, right: int = 200,
             dt: float | None = None) -> float:
    """Re-evaluate u(s, site; H_k) by a fresh run ending exactly at s."""
    a, b = -k_max - 200, right
    traj = integrate(heaviside(a, b, k), p, s, dt, save_stride=1 << 30)
    return float(traj.states[-1][site - a])
