"""SL(2,R) Schrodinger cocycle: transfer products, Lyapunov exponent, rotation number.

The one-step transfer matrix at site n is ``A(n) = [[E + 2 - c(n), -1], [1, 0]]``
and ``A_n = A(n-1) ... A(0)``. Long products are kept as ``exp(log_scale) * M``
with ``M`` renormalised every 16 steps.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import InconclusiveHyperbolicity
from .potentials import Potential, hull_samples, shift

CHUNK = 1 << 16
# projective lift: increments live in [-pi/2, 3pi/2) for Schrodinger matrices
LIFT_FLOOR = -0.5 * math.pi


def transfer_matrix(E: float, p: Potential, n: int) -> np.ndarray:
    return np.array([[E + 2.0 - float(p.at(np.array([n]))[0]), -1.0], [1.0, 0.0]])


@dataclass
class CocycleOrbit:
    E: float
    potential: Potential
    log_scale: float
    matrix: np.ndarray
    n: int

    def product(self) -> np.ndarray:
        return math.exp(self.log_scale) * self.matrix

    def log_norm(self) -> float:
        return self.log_scale + math.log(np.linalg.norm(self.matrix, 2))

    def det(self) -> float:
        # det(exp(s) M) = exp(2s) det M, evaluated in log form to avoid overflow
        dm = float(np.linalg.det(self.matrix))
        if dm == 0.0:
            return 0.0
        return math.copysign(math.exp(2.0 * self.log_scale + math.log(abs(dm))), dm)


def _advance(E, p, start, count, M, log_scale, counter=0):
    done = 0
    while done < count:
        m = min(CHUNK, count - done)
        c = p.sample(start + done, m)
        M, log_scale, counter = _kernels.schrodinger_product(E, c, M, log_scale, counter)
        done += m
    return M, log_scale, counter


def cocycle_product(E: float, p: Potential, n: int) -> CocycleOrbit:
    """A_n(g) in scaled form; negative n uses A_{-m}(g) = A_m(T^{-m} g)^{-1}."""
    if n >= 0:
        M, s, _ = _advance(E, p, 0, n, np.eye(2), 0.0)
        return CocycleOrbit(E, p, s, M, n)
    m = -n
    M, s, _ = _advance(E, shift(p, -m), 0, m, np.eye(2), 0.0)
    # (e^s M)^{-1} = e^s adj(M) because det(e^s M) = 1
    adj = np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]])
    return CocycleOrbit(E, p, s, adj, n)


def product_log_det(E: float, p: Potential, n: int) -> tuple[float, int]:
    """(log|det A_n|, sign) from a QR-tracked product, for n >= 0."""
    q = (1.0, 0.0, 0.0, 1.0)
    l1 = l2 = 0.0
    done = 0
    while done < n:
        m = min(CHUNK, n - done)
        *q, l1, l2 = _kernels.schrodinger_qr(E, p.sample(done, m), *q, l1, l2)
        done += m
    det_q = q[0] * q[3] - q[1] * q[2]
    return l1 + l2, 1 if det_q > 0 else -1


@dataclass
class LyapunovEstimate:
    E: float
    value: float
    iters: int
    phases_averaged: int
    std_error: float


def default_burn_in(n_iters: int) -> int:
    return int(min(4096, max(64, n_iters // 16)))


def _phase_growth(E, g, n_iters, burn):
    M, s, counter = _advance(E, g, 0, burn, np.eye(2), 0.0)
    start = s + math.log(np.linalg.norm(M, 2))
    M, s, _ = _advance(E, g, burn, n_iters, M, s, counter)
    return (s + math.log(np.linalg.norm(M, 2)) - start) / n_iters


def lyapunov(
    E: float, p: Potential, n_iters: int = 100_000, n_phases: int = 8, burn_in: int | None = None
) -> LyapunovEstimate:
    """(1/n) log ||A_n|| averaged over equispaced hull translates.

    The growth is measured between ``burn_in`` and ``burn_in + n_iters`` so that the
    transient alignment with the unstable direction does not bias the estimate.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    burn = default_burn_in(n_iters) if burn_in is None else burn_in
    vals = np.array([_phase_growth(E, g, n_iters, burn) for g in hull_samples(p, n_phases)])
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return LyapunovEstimate(E, float(max(vals.mean(), 0.0)), n_iters, len(vals), se)


@dataclass
class LyapunovCurve:
    E: np.ndarray
    L: np.ndarray
    std_error: np.ndarray
    n_iters: int
    phases: int
    diagnostics: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "L", "std_error", "n_iters", "phases"])
        for e, l, s in zip(self.E, self.L, self.std_error):
            w.writerow([repr(float(e)), repr(float(l)), repr(float(s)), self.n_iters, self.phases])
        return buf.getvalue()


@dataclass
class RotationEstimate:
    E: float
    rho: float
    iters: int


def rotation_number(E: float, p: Potential, n_iters: int = 100_000, n_phases: int = 1) -> RotationEstimate:
    """Fibered rotation number in [0, 1/2]; 0 right of the spectrum, 1/2 left of it."""
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    rhos = []
    for g in hull_samples(p, n_phases):
        v = np.array([1.0, 0.0])
        total = 0.0
        done = 0
        while done < n_iters:
            m = min(CHUNK, n_iters - done)
            t, v = _kernels.schrodinger_rotation(E, g.sample(done, m), v, LIFT_FLOOR)
            total += t
            done += m
        rhos.append(total / (2.0 * math.pi * n_iters))
    rho = float(np.clip(np.mean(rhos), 0.0, 0.5))
    return RotationEstimate(E, rho, n_iters)


def cocycle_rotation_number(
    matrix_fn: Callable[[np.ndarray], np.ndarray],
    alpha: Sequence[float],
    phase: Sequence[float],
    n_iters: int,
    floor: float = LIFT_FLOOR,
) -> float:
    """Rotation number of a quasi-periodic cocycle (alpha, M) with M given on phases.

    ``matrix_fn`` maps an (m, d) array of torus points to (m, 2, 2) matrices.
    The result is the averaged lifted increment / 2 pi (not folded).
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    phase = np.atleast_1d(np.asarray(phase, dtype=float))
    v = np.array([1.0, 0.0])
    total = 0.0
    done = 0
    while done < n_iters:
        m = min(CHUNK, n_iters - done)
        j = np.arange(done, done + m, dtype=float)
        pts = np.mod(np.outer(j, alpha) + phase, 1.0)
        mats = np.ascontiguousarray(np.asarray(matrix_fn(pts), dtype=float))
        t, v = _kernels.matrix_rotation(mats, v, floor)
        total += t
        done += m
    return total / (2.0 * math.pi * n_iters)


def _contracted_direction(M):
    # right singular vector of the smallest singular value
    _, _, vt = np.linalg.svd(M)
    return vt[1]


def _line_angle(u, v):
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.acos(min(1.0, c))


@dataclass
class HyperbolicityReport:
    hyperbolic: bool
    min_growth: float
    min_splitting_angle: float
    direction_drift: float


def hyperbolicity_report(E: float, p: Potential, n_test: int = 256, growth_floor: float | None = None,
                         angle_floor: float = 1e-6) -> HyperbolicityReport:
    """Cone-separation test for uniform hyperbolicity of (T, A) at energy E.

    For each sampled phase the stable direction is the most contracted direction of
    A_n and the unstable one the most contracted direction of A_{-n}; both are
    computed at lengths n/2 and n and must agree to within the geometric rate.
    """
    n = max(8, int(n_test))
    half = n // 2
    floor = growth_floor if growth_floor is not None else 4.0 / n
    min_growth = math.inf
    min_angle = math.pi
    drift = 0.0
    phases = hull_samples(p, max(1, min(n_test, 64)))
    for g in phases:
        fwd_h, fwd = cocycle_product(E, g, half), cocycle_product(E, g, n)
        bwd_h, bwd = cocycle_product(E, g, -half), cocycle_product(E, g, -n)
        gr = min(fwd.log_norm(), bwd.log_norm()) / n
        gr_half = min(fwd_h.log_norm(), bwd_h.log_norm()) / half
        min_growth = min(min_growth, gr, gr_half)
        if min_growth < floor:
            return HyperbolicityReport(False, min_growth, math.nan, math.nan)
        s_h, s = _contracted_direction(fwd_h.matrix), _contracted_direction(fwd.matrix)
        u_h, u = _contracted_direction(bwd_h.matrix), _contracted_direction(bwd.matrix)
        # the contracted direction converges like ||A_{n/2}||^{-2}; allow a generous constant
        tol = max(1e3 * math.exp(-2.0 * min(fwd_h.log_norm(), bwd_h.log_norm())), 1e-12)
        d = max(_line_angle(s_h, s), _line_angle(u_h, u))
        drift = max(drift, d / tol)
        min_angle = min(min_angle, _line_angle(s, u))
    ok = drift <= 1.0 and min_angle >= angle_floor
    return HyperbolicityReport(ok, min_growth, min_angle, drift)


def is_uniformly_hyperbolic(E: float, p: Potential, n_test: int = 256) -> bool:
    """True if E is certified in the resolvent set, False if no uniform growth.

    Raises InconclusiveHyperbolicity when growth is present but the splitting cannot
    be certified at this length (non-uniform hyperbolicity candidates).
    """
    rep = hyperbolicity_report(E, p, n_test)
    if rep.hyperbolic:
        return True
    if math.isnan(rep.min_splitting_angle):
        return False
    raise InconclusiveHyperbolicity(
        f"E={E}: growth {rep.min_growth:.3g} but splitting angle {rep.min_splitting_angle:.3g}, "
        f"drift ratio {rep.direction_drift:.3g}"
    )
