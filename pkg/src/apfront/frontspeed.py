"""Decaying eigensolutions phi_E, the ratio sequence sigma_E, and the front speeds.

For E above the spectral edge lambda1 the equation
phi(n+1) + phi(n-1) - 2 phi(n) + c(n) phi(n) = E phi(n) has a unique positive
solution with phi(0) = 1 decaying to the right; it is computed through the ratio
r(n) = phi(n+1)/phi(n) by the backward continued fraction
r(n-1) = 1 / (E + 2 - c(n) - r(n)), which is stable in both directions because the
decaying branch dominates when iterating leftwards.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .cocycle import LyapunovCurve, lyapunov
from .errors import (
    EdgeFailure,
    MinimizerBracketFailure,
    NoConvergence,
    NotPositive,
    ResidualTooLarge,
)
from .potentials import Potential
from .spectrum import spectral_edge

DEFAULT_MARGIN = 1e-3
RESIDUAL_TOL = 1e-8
UNDERLINE_DELTAS = (0.2, 0.05, 0.0125)
L_FLOOR = 1e-3
RATIO_CAP = 1e4
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def edge_of(p: Potential, tol: float = 1e-8) -> float:
    """Cached spectral edge lambda1 of ``p``."""
    key = ("lambda1", tol)
    if key not in p._cache:
        try:
            p._cache[key] = spectral_edge(p, tol, cross_check=False).lambda1
        except NoConvergence as exc:
            raise EdgeFailure(str(exc)) from exc
    return p._cache[key]


@dataclass
class DecaySolution:
    E: float
    N_w: int
    log_phi: np.ndarray  # log phi(n) for n = -N_w .. N_w
    residual_max: float
    potential: Potential = field(repr=False)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.N_w, self.N_w + 1)

    def log_at(self, n) -> np.ndarray:
        return self.log_phi[np.asarray(n) + self.N_w]

    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)


def decaying_solution(
    E: float,
    p: Potential,
    N_w: int,
    margin: float = DEFAULT_MARGIN,
    lambda1: float | None = None,
    buffer: int | None = None,
) -> DecaySolution:
    """Positive solution with phi(0) = 1 and phi -> 0 to the right, on [-N_w, N_w]."""
    lam = edge_of(p) if lambda1 is None else lambda1
    if E < lam + margin:
        raise NotPositive(f"E={E} is within {margin} of the spectral edge {lam}")
    B = max(N_w, 400) if buffer is None else buffer
    a = E + 2.0 - p.sample(-N_w, 2 * N_w + B + 1)  # sites -N_w .. N_w + B
    a_far = E + 2.0 - float(p.sample(N_w + B + 1, 1)[0])
    # contracted direction of the frozen far-right matrix
    seed = a_far / 2.0 - math.sqrt(max(a_far * a_far / 4.0 - 1.0, 0.0))
    r = _kernels.ratio_recursion(a, seed)  # r(-N_w-1 .. N_w+B)
    if not np.all(np.isfinite(r)) or np.any(r <= 0.0):
        raise NotPositive(f"phi_E changes sign on the window at E={E}")
    sigma = -np.log(r[1 : 2 * N_w + 1])  # sigma(n) for n = -N_w .. N_w - 1
    log_phi = np.empty(2 * N_w + 1)
    log_phi[N_w] = 0.0
    log_phi[N_w + 1 :] = -np.cumsum(sigma[N_w:])
    log_phi[:N_w] = np.cumsum(sigma[:N_w][::-1])[::-1]
    # recurrence identity e^{-sigma(n)} + e^{sigma(n-1)} = E + 2 - c(n) at interior n
    an = a[1 : 2 * N_w]
    res = np.abs(np.exp(-sigma[1:]) + np.exp(sigma[:-1]) - an) / np.abs(an)
    residual = float(res.max()) if res.size else 0.0
    if residual > RESIDUAL_TOL:
        raise ResidualTooLarge(f"relative recurrence residual {residual:.3e}")
    return DecaySolution(E, N_w, log_phi, residual, p)


@dataclass
class SigmaSequence:
    values: np.ndarray  # sigma(n) for n = -N_w .. N_w - 1
    N_w: int

    def at(self, n):
        return self.values[np.asarray(n) + self.N_w]


def sigma(sol: DecaySolution) -> SigmaSequence:
    """sigma_E(n) = log phi(n) - log phi(n+1)."""
    return SigmaSequence(-np.diff(sol.log_phi), sol.N_w)


def _slope(n, y):
    A = np.vstack([n, np.ones_like(n)]).T
    return float(np.linalg.lstsq(A, y, rcond=None)[0][0])


def decay_rate(sol: DecaySolution, side: str = "right") -> float:
    """Least-squares exponential decay rate of phi over one half-window."""
    n = sol.sites.astype(float)
    sel = n >= 0 if side == "right" else n <= 0
    return -_slope(n[sel], sol.log_phi[sel])


def lyapunov_curve(p: Potential, E_grid, n_iters: int = 50_000, n_phases: int = 8, lambda1: float | None = None) -> LyapunovCurve:
    E_grid = np.asarray(E_grid, dtype=float)
    lam = edge_of(p) if lambda1 is None else lambda1
    if E_grid.size == 0 or np.any(E_grid <= lam):
        raise ValueError("grid energies must lie above the spectral edge")
    ests = [lyapunov(float(E), p, n_iters, n_phases) for E in E_grid]
    L = np.array([e.value for e in ests])
    se = np.array([e.std_error for e in ests])
    diag = {
        "min_first_difference": float(np.diff(L).min()) if len(L) > 1 else 0.0,
        "max_second_difference": float(_second_differences(E_grid, L).max()) if len(L) > 2 else 0.0,
        "lower_bound": float(L.min()),
    }
    return LyapunovCurve(E_grid, L, se, n_iters, ests[0].phases_averaged, diag)


def _second_differences(E, L):
    # divided second differences; nonpositive for concave L
    h1 = np.diff(E)[:-1]
    h2 = np.diff(E)[1:]
    return 2.0 * ((L[2:] - L[1:-1]) / h2 - (L[1:-1] - L[:-2]) / h1) / (h1 + h2)


def golden_section_min(f, a: float, b: float, tol: float = 1e-6):
    """Minimise a unimodal f on [a, b]; on ties keep the left point."""
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


@dataclass
class SpeedReport:
    lambda1: float
    E_star: float
    w_star: float
    underline_w: float  # math.inf when flagged
    underline_w_infinite: bool
    L_at_edge: float
    curve: LyapunovCurve
    flags: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "E_star": self.E_star,
            "w_star": self.w_star,
            "underline_w": None if self.underline_w_infinite else self.underline_w,
            "flags": dict(self.flags, underline_w_infinite=self.underline_w_infinite),
        }

    def curve_csv(self) -> str:
        lines = ["E,L,E_over_L"]
        for e, l in zip(self.curve.E, self.curve.L):
            lines.append(f"{float(e)!r},{float(l)!r},{float(e / l) if l > 0 else math.inf!r}")
        return "\n".join(lines) + "\n"


def edge_limit(lambda1: float, Ls, deltas=UNDERLINE_DELTAS) -> tuple[float, float]:
    """Extrapolate L(lambda1 + delta) to delta -> 0 from a geometric delta sequence.

    Fits L = L0 + a delta^beta through the last three points (Aitken step) and
    returns (L0, beta). Falls back to the smallest-delta value when the differences
    are not monotone.
    """
    L1, L2, L3 = (float(x) for x in Ls[-3:])
    q = deltas[-2] / deltas[-1]
    d1, d2 = L1 - L2, L2 - L3
    if d1 <= 0 or d2 <= 0 or d1 <= d2:
        return L3, math.nan
    beta = math.log(d1 / d2) / math.log(q)
    L0 = L3 - d2 / (q**beta - 1.0)
    return L0, beta


def underline_speed(p: Potential, lambda1: float, n_iters: int = 200_000, n_phases: int = 16,
                    deltas=UNDERLINE_DELTAS):
    """Estimate lim_{E -> lambda1} E / L(E); returns (value or inf, infinite_flag, L values)."""
    Ls = [lyapunov(lambda1 + d, p, n_iters, n_phases).value for d in deltas]
    L0, beta = edge_limit(lambda1, Ls, deltas)
    infinite = L0 <= L_FLOOR or lambda1 / L0 > RATIO_CAP
    return (math.inf if infinite else lambda1 / L0), infinite, Ls, L0, beta


def minimal_speed(
    p: Potential,
    n_iters: int = 20_000,
    n_phases: int = 8,
    grid_size: int = 48,
    delta_max: float | None = None,
    tol: float = 1e-7,
    edge_n_iters: int = 200_000,
    lambda1: float | None = None,
) -> SpeedReport:
    """w* = min_{E > lambda1} E / L(E) and the edge limit of E / L(E)."""
    lam = edge_of(p) if lambda1 is None else lambda1
    span = delta_max if delta_max is not None else max(20.0, 4.0 * (p.sup_bound + 4.0))
    deltas = np.geomspace(1e-3, span, grid_size)
    E_grid = lam + deltas

    def L_of(E):
        return lyapunov(float(E), p, n_iters, n_phases).value

    curve = lyapunov_curve(p, E_grid, n_iters, n_phases, lambda1=lam)
    ratio = E_grid / curve.L
    i = int(np.argmin(ratio))
    flags = {}
    if i == 0 or i == len(E_grid) - 1:
        warnings.warn(MinimizerBracketFailure(f"E/L has no interior minimum on [{E_grid[0]}, {E_grid[-1]}]"))
        flags["bracket_failure"] = True
        E_star, w_star = float(E_grid[i]), float(ratio[i])
    else:
        E_star, w_star = golden_section_min(lambda E: E / L_of(E), float(E_grid[i - 1]), float(E_grid[i + 1]), tol)
        if w_star > ratio[i]:
            E_star, w_star = float(E_grid[i]), float(ratio[i])
    uw, infinite, Ls, L0, beta = underline_speed(p, lam, edge_n_iters, max(n_phases, 16))
    flags.update(edge_L=Ls, edge_L_limit=L0, edge_exponent=beta)
    if not infinite and w_star >= uw:
        flags["w_star_not_below_underline_w"] = True
    return SpeedReport(lam, E_star, w_star, uw, infinite, L0, curve, flags)


def speed_json(report: SpeedReport) -> str:
    return json.dumps(report.summary(), sort_keys=True)
