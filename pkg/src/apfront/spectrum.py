"""Truncated linearised operator, its top eigenvalue, the spectral edge and the IDS.

The operator is (L u)(n) = u(n+1) + u(n-1) - 2 u(n) + c(n) u(n); truncations to an
integer window carry zero (Dirichlet) boundary values, giving the symmetric
tridiagonal matrix tridiag(1, c(n) - 2, 1).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InconclusiveHyperbolicity, NoConvergence
from .potentials import Potential


@dataclass(frozen=True)
class TruncatedOperator:
    potential: Potential
    a: int
    b: int

    def __post_init__(self):
        if self.b < self.a:
            raise ValueError("empty window")

    @property
    def dim(self) -> int:
        return self.b - self.a + 1

    @property
    def diagonal(self) -> np.ndarray:
        return self.potential.sample(self.a, self.dim) - 2.0

    def dense(self) -> np.ndarray:
        m = np.diag(self.diagonal)
        i = np.arange(self.dim - 1)
        m[i, i + 1] = m[i + 1, i] = 1.0
        return m


def sturm_count(op: TruncatedOperator, E: float) -> int:
    """Number of eigenvalues strictly below E."""
    return int(_kernels.sturm_count(op.diagonal, float(E)))


def symmetric_window(p: Potential, N: int) -> TruncatedOperator:
    """Restriction to the open interval (-N, N), i.e. sites -N+1 .. N-1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return TruncatedOperator(p, -N + 1, N - 1)


def top_eigenvalue(op: TruncatedOperator, tol: float = 1e-12) -> float:
    diag = op.diagonal
    lo = float(diag.max())  # Rayleigh quotient at the largest diagonal entry
    hi = lo + 2.0  # Gershgorin
    return float(_kernels.bisect_top_eigenvalue(diag, lo, hi, tol))


def lambda1_truncated(p: Potential, N: int, tol: float = 1e-12) -> float:
    return top_eigenvalue(symmetric_window(p, N), tol)


@dataclass
class SpectralEdge:
    lambda1: float
    window_sizes: list[int]
    lambda1_per_N: list[float]
    extrapolation_error: float
    checks: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["N", "lambda1_N"])
        for n, lam in zip(self.window_sizes, self.lambda1_per_N):
            w.writerow([n, repr(float(lam))])
        return buf.getvalue()


def spectral_edge(
    p: Potential, tol: float = 1e-8, N0: int = 64, N_cap: int = 1 << 17, cross_check: bool = True
) -> SpectralEdge:
    """Double N until successive truncated top eigenvalues differ by less than ``tol``.

    The returned value applies one extrapolation step
    lambda1 = lam(N) + (lam(N) - lam(N/2)), which overshoots for algebraic
    convergence and so errs on the resolvent side of the edge.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    sizes, lams = [N0], [lambda1_truncated(p, N0)]
    while True:
        N = sizes[-1] * 2
        if N > N_cap:
            raise NoConvergence(
                f"lambda1_N still moving by {lams[-1] - lams[-2] if len(lams) > 1 else math.nan:.3e} at N={sizes[-1]}"
            )
        sizes.append(N)
        lams.append(lambda1_truncated(p, N))
        if abs(lams[-1] - lams[-2]) < tol:
            break
    corr = lams[-1] - lams[-2]
    edge = SpectralEdge(lams[-1] + corr, sizes, lams, abs(corr))
    if cross_check:
        edge.checks = edge_cross_checks(p, edge.lambda1 + 10 * tol)
    return edge


def edge_cross_checks(p: Potential, E: float, n_iters: int = 20_000) -> dict:
    from .cocycle import is_uniformly_hyperbolic, rotation_number

    rho = rotation_number(E, p, n_iters).rho
    try:
        uh = is_uniformly_hyperbolic(E, p, n_test=256)
    except InconclusiveHyperbolicity:
        uh = None
    return {"E": E, "rotation": rho, "rotation_zero": rho <= 2.0 / n_iters, "uniformly_hyperbolic": uh}


@dataclass
class IdsPoint:
    E: float
    k: float
    window_size: int


def ids(p: Potential, E: float, N: int) -> IdsPoint:
    """Fraction of eigenvalues of the (-N, N) truncation below E."""
    if N < 2:
        raise ValueError("N must be >= 2")
    op = symmetric_window(p, N)
    return IdsPoint(E, sturm_count(op, E) / op.dim, N)


def ids_curve_csv(points: list[IdsPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "k", "N"])
    for pt in points:
        w.writerow([repr(float(pt.E)), repr(float(pt.k)), pt.window_size])
    return buf.getvalue()
