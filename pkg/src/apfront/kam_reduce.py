"""KAM reduction of analytic quasi-periodic SL(2,R) Schrodinger cocycles at the edge.

Series live on the torus T^d = R^d / Z^d with modes e^{2 pi i <k, theta>}. The
cocycle over theta -> theta + alpha is written A e^{F(theta)} with A constant and F
small in sl(2,R); each step conjugates by e^{Y} so that the non-constant part of F
is removed to first order and the remainder is quadratically small.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur

from .cocycle import cocycle_rotation_number
from .errors import (
    ConjugacyTooFar,
    DivergedIteration,
    HyperbolicLimit,
    NotParabolic,
    ResidualTooLarge,
    ResonanceEncountered,
    SmallDivisor,
    SmallnessViolated,
)
from .potentials import Potential


@dataclass
class KamConfig:
    strip: float = 0.5  # initial analyticity strip r_0
    c_small: float = 1e9  # empirical constant of the smallness condition
    tau: float = 1.0  # Diophantine exponent
    delta: float = 0.5
    K_store: int = 128  # stored modes per axis: |k_i| <= K_store
    grid: int = 512  # phase grid points per axis for products and logs
    divisor_floor: float = 1e-8
    noise_floor: float = 1e-16  # coefficients below this are dropped
    eps_tol: float = 1e-14
    max_steps: int = 12
    parabolic_tol: float = 1e-6
    inconclusive_tol: float = 1e-4
    residual_tol: float = 1e-9
    rotation_iters: int = 20_000
    rotation_tol: float = 1e-3


# series


@dataclass
class FourierMatrixSeries:
    """sum_k F(k) e^{2 pi i <k, theta>} with 2x2 complex coefficients on the box |k_i| <= K."""

    coeffs: np.ndarray  # shape (2K+1,)*d + (2, 2)
    strip: float = 1.0

    @property
    def d(self) -> int:
        return self.coeffs.ndim - 2

    @property
    def K(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2

    @classmethod
    def zeros(cls, d: int, K: int, strip: float = 1.0) -> "FourierMatrixSeries":
        return cls(np.zeros((2 * K + 1,) * d + (2, 2), dtype=complex), strip)

    @classmethod
    def from_modes(cls, modes: dict, d: int, K: int, strip: float = 1.0) -> "FourierMatrixSeries":
        F = cls.zeros(d, K, strip)
        for k, m in modes.items():
            F.coeffs[tuple(int(x) + K for x in k)] = np.asarray(m, dtype=complex)
        return F

    def modes(self) -> np.ndarray:
        """Integer mode vectors, shape (2K+1,)*d + (d,)."""
        r = np.arange(-self.K, self.K + 1)
        return np.stack(np.meshgrid(*([r] * self.d), indexing="ij"), axis=-1)

    def l1(self) -> np.ndarray:
        return np.abs(self.modes()).sum(axis=-1)

    def zero_mode(self) -> np.ndarray:
        return self.coeffs[(self.K,) * self.d].copy()

    def with_coeffs(self, coeffs) -> "FourierMatrixSeries":
        return FourierMatrixSeries(coeffs, self.strip)

    def truncate(self, K: int) -> "FourierMatrixSeries":
        """T_K F: modes with |k|_1 < K."""
        return self.with_coeffs(np.where((self.l1() < K)[..., None, None], self.coeffs, 0.0))

    def tail(self, K: int) -> "FourierMatrixSeries":
        """R_K F = F - T_K F."""
        return self.with_coeffs(np.where((self.l1() >= K)[..., None, None], self.coeffs, 0.0))

    def nonzero(self):
        norms = np.abs(self.coeffs).reshape(self.coeffs.shape[:-2] + (4,)).max(axis=-1)
        idx = np.argwhere(norms > 0.0)
        return idx - self.K, self.coeffs[tuple(idx.T)]

    def __call__(self, theta) -> np.ndarray:
        """Evaluate at torus points theta (shape (m, d) or (m,) for d = 1); complex (m, 2, 2)."""
        theta = np.asarray(theta, dtype=float).reshape(-1, self.d)
        ks, cs = self.nonzero()
        if len(ks) == 0:
            return np.zeros((theta.shape[0], 2, 2), dtype=complex)
        ph = np.exp(2j * np.pi * (theta @ ks.T))
        return np.einsum("mk,kij->mij", ph, cs)

    def real_values(self, theta) -> np.ndarray:
        return self(theta).real

    def max_imag(self, theta) -> float:
        return float(np.abs(self(theta).imag).max())

    @classmethod
    def from_grid(cls, values: np.ndarray, K: int, strip: float, noise_floor: float = 0.0) -> "FourierMatrixSeries":
        """Coefficients |k_i| <= K from samples on the uniform grid (M,)*d + (2, 2)."""
        d = values.ndim - 2
        M = values.shape[0]
        hat = np.fft.fftn(values, axes=tuple(range(d))) / M**d
        idx = np.arange(-K, K + 1) % M
        sub = hat[np.ix_(*([idx] * d))] if d > 1 else hat[idx]
        if noise_floor > 0.0:
            small = np.abs(sub).reshape(sub.shape[:-2] + (4,)).max(axis=-1) <= noise_floor
            sub = np.where(small[..., None, None], 0.0, sub)
        return cls(np.ascontiguousarray(sub), strip)


def weighted_norm(F: FourierMatrixSeries, r: float) -> float:
    """sum_k e^{r |k|_1} ||F(k)|| with the spectral norm."""
    if r > F.strip + 1e-15:
        raise ValueError(f"r={r} exceeds the strip {F.strip}")
    norms = np.linalg.norm(F.coeffs, ord=2, axis=(-2, -1))
    return float((np.exp(r * F.l1()) * norms).sum())


def grid_points(d: int, M: int) -> np.ndarray:
    g = np.arange(M) / M
    return np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d)


# sl(2) exponential and logarithm


def sl2_exp(Y: np.ndarray) -> np.ndarray:
    """exp of traceless 2x2 matrices (..., 2, 2): cosh(s) I + sinh(s)/s Y with s^2 = -det Y."""
    s2 = -(Y[..., 0, 0] * Y[..., 1, 1] - Y[..., 0, 1] * Y[..., 1, 0])
    s = np.sqrt(s2.astype(complex))
    small = np.abs(s2) < 1e-8
    ch = np.where(small, 1.0 + s2 / 2.0 + s2 * s2 / 24.0, np.cosh(s))
    sh = np.where(small, 1.0 + s2 / 6.0 + s2 * s2 / 120.0, np.sinh(s) / np.where(small, 1.0, s))
    out = sh[..., None, None] * Y + ch[..., None, None] * np.eye(2)
    return out.real if np.isrealobj(Y) else out


def sl2_log(M: np.ndarray) -> np.ndarray:
    """log of SL(2) matrices near the identity: f(t) (M - t I), t = tr/2."""
    t = 0.5 * (M[..., 0, 0] + M[..., 1, 1])
    x = t - 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        hyp = np.arccosh(np.maximum(t, 1.0)) / np.sqrt(np.maximum(t * t - 1.0, 1e-300))
        ell = np.arccos(np.clip(t, -1.0, 1.0)) / np.sqrt(np.maximum(1.0 - t * t, 1e-300))
    series = 1.0 - x / 3.0 + 2.0 * x * x / 15.0
    f = np.where(np.abs(x) < 1e-6, series, np.where(t > 1.0, hyp, ell))
    return f[..., None, None] * (M - t[..., None, None] * np.eye(2))


def rotation_of_constant(A: np.ndarray) -> float:
    """Rotation number of the constant cocycle A in [0, 1/2]."""
    t = 0.5 * float(np.trace(A))
    if t >= 1.0:
        return 0.0
    if t <= -1.0:
        return 0.5
    return math.acos(t) / (2.0 * math.pi)


# homological equation


def homological_solve(
    A: np.ndarray,
    G: FourierMatrixSeries,
    alpha,
    K: int,
    rho_A: complex | None = None,
    divisor_floor: float = 1e-8,
) -> FourierMatrixSeries:
    """Solve A^{-1} Y(theta + alpha) A - Y(theta) = T_K G - G(0) for upper-triangular A.

    A = [[mu, a], [0, 1/mu]]; mu = e^{i rho_A} when rho_A is given (rho_A may be
    imaginary for hyperbolic A). Per mode, with z = e^{2 pi i <k, alpha>}:
    Y21 = G21 / (z mu^2 - 1), Y11 = (G11 + z a mu Y21) / (z - 1),
    Y12 = (G12 - z (2 a Y11 / mu - a^2 Y21)) / (z / mu^2 - 1).
    """
    A = np.asarray(A, dtype=complex)
    if abs(A[1, 0]) > 1e-12 * max(1.0, np.abs(A).max()):
        raise ValueError("A must be upper triangular")
    mu = complex(np.exp(1j * rho_A)) if rho_A is not None else complex(A[0, 0])
    a = complex(A[0, 1])
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    Y = FourierMatrixSeries.zeros(G.d, G.K, G.strip)
    ks = G.modes()
    l1 = G.l1()
    for idx in itertools.product(range(2 * G.K + 1), repeat=G.d):
        if l1[idx] == 0 or l1[idx] >= K:
            continue
        g = G.coeffs[idx]
        if not np.any(g):
            continue
        z = np.exp(2j * np.pi * float(ks[idx] @ alpha))
        dens = (z * mu * mu - 1.0, z - 1.0, z / (mu * mu) - 1.0)
        for den in dens:
            if abs(den) < divisor_floor:
                raise SmallDivisor(tuple(int(x) for x in ks[idx]), abs(den))
        y21 = g[1, 0] / dens[0]
        y11 = (g[0, 0] + z * a * mu * y21) / dens[1]
        y12 = (g[0, 1] - z * (2.0 * a * y11 / mu - a * a * y21)) / dens[2]
        Y.coeffs[idx] = [[y11, y12], [y21, -y11]]
    return Y


# KAM step


@dataclass
class KamStepReport:
    epsilon_in: float
    epsilon_out: float
    norm_Y: float
    A_before: np.ndarray
    A_after: np.ndarray
    K_used: int
    r: float = 0.0
    r_prime: float = 0.0
    rotation_condition: bool = True

    def bounds_hold(self, floor: float = 0.0) -> dict:
        nA = np.linalg.norm(self.A_before, 2)
        return {
            "norm_Y": self.norm_Y <= math.sqrt(self.epsilon_in),
            "epsilon_out": self.epsilon_out <= max(4.0 * self.epsilon_in**2, floor),
            "A_change": np.linalg.norm(self.A_after - self.A_before, 2) <= 2.0 * self.epsilon_in * nA,
        }

    def to_dict(self) -> dict:
        return {
            "epsilon_in": self.epsilon_in,
            "epsilon_out": self.epsilon_out,
            "norm_Y": self.norm_Y,
            "K_used": self.K_used,
            "rotation_condition": self.rotation_condition,
        }


def _conjugated_on_grid(A, F, Y, alpha, pts):
    """e^{-Y(theta + alpha)} A e^{F(theta)} e^{Y(theta)} at the points ``pts``."""
    shifted = np.mod(pts + alpha, 1.0)
    left = sl2_exp(-Y.real_values(shifted))
    mid = sl2_exp(F.real_values(pts))
    right = sl2_exp(Y.real_values(pts))
    return left @ A @ mid @ right


def kam_step(A: np.ndarray, F: FourierMatrixSeries, alpha, r: float, r_prime: float,
             config: KamConfig | None = None, enforce_rotation: bool = True):
    """One KAM step: returns (Y, A', F', report) with e^{-Y(.+alpha)} A e^{F} e^{Y} = A' e^{F'}.

    With ``enforce_rotation`` False a violated rotation condition is recorded in
    the report instead of raising.
    """
    cfg = config or KamConfig()
    A = np.asarray(A, dtype=float)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    if not 0.0 < r_prime < r:
        raise ValueError("need 0 < r' < r")
    eps = weighted_norm(F, r)
    nA = float(np.linalg.norm(A, 2))
    if eps == 0.0:
        Z = FourierMatrixSeries.zeros(F.d, F.K, r_prime)
        rep = KamStepReport(0.0, 0.0, 0.0, A, A.copy(), 0, r, r_prime)
        return Z, A.copy(), Z, rep
    bound = cfg.c_small * (r - r_prime) ** (6.0 * (1.0 + cfg.delta) * cfg.tau) / nA**6
    if eps >= bound:
        raise SmallnessViolated(f"|F|_r = {eps:.3e} >= {bound:.3e}")
    rot = rotation_of_constant(A)
    rot_ok = rot <= 2.0 * nA * math.sqrt(eps)
    if not rot_ok and enforce_rotation:
        raise SmallnessViolated(f"rotation {rot:.3e} of A exceeds 2||A|| eps^(1/2)")
    K = min(int(math.ceil(2.0 / (r - r_prime) * abs(math.log(eps)))), cfg.K_store)
    F0 = F.zero_mode()
    G = F.truncate(K)
    G.coeffs[(G.K,) * G.d] = 0.0
    # complex Schur form A = Z T Z^H handles elliptic, parabolic and hyperbolic A alike
    T, Zs = schur(A.astype(complex), output="complex")
    Gt = G.with_coeffs(np.einsum("ji,...jk,kl->...il", Zs.conj(), G.coeffs, Zs))
    Yt = homological_solve(T, Gt, alpha, K, divisor_floor=cfg.divisor_floor)
    Y = FourierMatrixSeries(np.einsum("ij,...jk,lk->...il", Zs, Yt.coeffs, Zs.conj()), r_prime)
    A_new = (A @ sl2_exp(F0)).real
    pts = grid_points(F.d, cfg.grid if F.d == 1 else max(16, cfg.grid // 8))
    P = _conjugated_on_grid(A, F, Y, alpha, pts)
    M = int(round(len(pts) ** (1.0 / F.d)))
    logs = sl2_log(np.linalg.solve(A_new, P)).reshape((M,) * F.d + (2, 2))
    F_new = FourierMatrixSeries.from_grid(logs.astype(complex), min(cfg.K_store, M // 4), r_prime, cfg.noise_floor)
    rep = KamStepReport(eps, weighted_norm(F_new, r_prime), weighted_norm(Y, r_prime), A, A_new, K, r, r_prime, rot_ok)
    return Y, A_new, F_new, rep


# reduction at the edge


def schrodinger_split(p: Potential, E: float, K_store: int, strip: float):
    """S_E = A e^F with A = [[E + 2 - c0, -1], [1, 0]] and F = [[0, 0], [V, 0]], V zero-mean."""
    if p.kind != "quasiperiodic":
        raise TypeError("reduction needs a quasi-periodic potential")
    c0 = p.c0 + sum(c.real for k, c in zip(p.modes, p.coeffs) if not any(k))
    modes = {}
    for k, c in zip(p.modes, p.coeffs):
        if any(k):
            # V on the torus point theta = n alpha + phase
            modes[k] = np.array([[0.0, 0.0], [c, 0.0]])
    A = np.array([[E + 2.0 - c0, -1.0], [1.0, 0.0]])
    return A, FourierMatrixSeries.from_modes(modes, p.torus_dim, K_store, strip)


def classify_trace(tr: float, cfg: KamConfig) -> str:
    gap = abs(tr - 2.0)
    if gap <= cfg.parabolic_tol:
        return "parabolic"
    if gap <= cfg.inconclusive_tol:
        return "inconclusive"
    return "hyperbolic" if tr > 2.0 else "elliptic"


@dataclass
class Conjugacy:
    """B(theta) = e^{Y_1(theta)} ... e^{Y_m(theta)}."""

    factors: list

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.ndim == 1:
            theta = theta[:, None]
        out = np.broadcast_to(np.eye(2), (theta.shape[0], 2, 2)).copy()
        for Y in self.factors:
            out = out @ sl2_exp(Y.real_values(theta))
        return out


@dataclass
class ReducibilityCertificate:
    E: float
    alpha: np.ndarray
    B: Conjugacy
    A_tilde: np.ndarray
    residual: float
    parabolic: bool
    classification: str
    conjugacy_distance_to_identity: float
    steps: list = field(default_factory=list)
    rotations: list = field(default_factory=list)
    E_input: float = math.nan

    @property
    def trace(self) -> float:
        return float(np.trace(self.A_tilde))

    def to_json(self) -> str:
        return json.dumps(
            {
                "steps": [s.to_dict() for s in self.steps],
                "final": {
                    "E": self.E,
                    "E_input": self.E_input,
                    "trace": self.trace,
                    "residual": self.residual,
                    "distance_to_identity": self.conjugacy_distance_to_identity,
                    "classification": self.classification,
                },
                "rotations": self.rotations,
            },
            sort_keys=True,
        )


def _schrodinger_on(p: Potential, E: float, theta: np.ndarray) -> np.ndarray:
    c = p.on_torus(theta)
    S = np.zeros((len(c), 2, 2))
    S[:, 0, 0] = E + 2.0 - c
    S[:, 0, 1] = -1.0
    S[:, 1, 0] = 1.0
    return S


def _iterate(p: Potential, E: float, cfg: KamConfig):
    alpha = np.asarray(p.alpha)
    A, F = schrodinger_split(p, E, cfg.K_store, cfg.strip)
    r0 = cfg.strip
    r = r0
    factors, reports, states = [], [], [(A, F)]
    for k in range(cfg.max_steps):
        eps = weighted_norm(F, r)
        if eps <= cfg.eps_tol:
            break
        r_next = r - r0 / 2.0 ** (k + 2)
        try:
            # the rotation condition certifies the initial data; later steps record it
            Y, A, F_next, rep = kam_step(A, F, alpha, r, r_next, cfg, enforce_rotation=(k == 0))
        except SmallDivisor as exc:
            raise ResonanceEncountered(f"small divisor at mode {exc.k} in step {k}") from exc
        if rep.epsilon_out >= rep.epsilon_in:
            raise DivergedIteration(f"step {k}: epsilon {rep.epsilon_in:.3e} -> {rep.epsilon_out:.3e}")
        factors.append(Y)
        reports.append(rep)
        F, r = F_next, r_next
        F.strip = r
        states.append((A, F))
    else:
        if weighted_norm(F, r) > cfg.eps_tol:
            raise DivergedIteration(f"epsilon still {weighted_norm(F, r):.3e} after {cfg.max_steps} steps")
    return A, factors, reports, states


def refine_edge(p: Potential, E0: float, cfg: KamConfig, h: float = 1e-7, max_iter: int = 30) -> float:
    """Secant iteration on trace(A_tilde(E)) = 2 starting from E0."""
    def f(E):
        return float(np.trace(_iterate(p, E, cfg)[0])) - 2.0

    e0, e1 = E0, E0 + h
    f0, f1 = f(e0), f(e1)
    for _ in range(max_iter):
        if f1 == f0 or abs(f1) < 1e-15:
            break
        e0, e1, f0 = e1, e1 - f1 * (e1 - e0) / (f1 - f0), f1
        f1 = f(e1)
    return e1


def reduce_at_edge(
    p: Potential,
    E: float | None = None,
    config: KamConfig | None = None,
    refine: bool = True,
    check_rotation: bool = True,
) -> ReducibilityCertificate:
    """Conjugate S_E to a constant matrix by iterated KAM steps and classify it.

    With ``refine`` the energy is adjusted by a secant search on trace = 2 so that
    the limit is parabolic to rounding accuracy.
    """
    cfg = config or KamConfig()
    if E is None:
        from .frontspeed import edge_of

        E = edge_of(p)
    E_in = E
    alpha = np.asarray(p.alpha)
    if check_rotation:
        from .cocycle import rotation_number

        rho = rotation_number(E, p, cfg.rotation_iters).rho
        if rho > cfg.rotation_tol:
            raise ResonanceEncountered(f"rotation number {rho:.3e} at E={E} is not zero")
    if refine:
        E = refine_edge(p, E, cfg)
    A, factors, reports, states = _iterate(p, E, cfg)
    B = Conjugacy(factors)
    pts = grid_points(p.torus_dim, 512 if p.torus_dim == 1 else 16)
    Bt = B(pts)
    Bs = B(np.mod(pts + alpha, 1.0))
    conj = np.linalg.solve(Bs, _schrodinger_on(p, E, pts) @ Bt)
    residual = float(np.linalg.norm(conj - A, 2, axis=(-2, -1)).max())
    dist = float(np.linalg.norm(Bt - np.eye(2), 2, axis=(-2, -1)).max())
    rotations = []
    if check_rotation:
        for A_k, F_k in states:
            def mats(th, A_k=A_k, F_k=F_k):
                return A_k @ sl2_exp(F_k.real_values(th))

            rotations.append(cocycle_rotation_number(mats, alpha, p.phase, cfg.rotation_iters))
    cls = classify_trace(float(np.trace(A)), cfg)
    if cls == "hyperbolic" and refine:
        raise HyperbolicLimit(f"trace {np.trace(A):.12g} > 2 at the refined edge E={E}")
    cert = ReducibilityCertificate(
        E, alpha, B, A, residual, cls == "parabolic", cls, dist, reports, rotations, E_in
    )
    if residual > cfg.residual_tol:
        raise ResidualTooLarge(f"conjugated cocycle differs from A_tilde by {residual:.3e}")
    return cert


# positive solution


@dataclass
class PositiveSolution:
    n: np.ndarray
    u: np.ndarray
    residual_max: float
    inf_u: float
    case: int
    eta: float

    def to_csv(self) -> str:
        return "n,u\n" + "".join(f"{int(k)},{float(v)!r}\n" for k, v in zip(self.n, self.u))


def _rot(eta):
    c, s = math.cos(eta), math.sin(eta)
    return np.array([[c, -s], [s, c]])


def parabolic_angle(A: np.ndarray) -> float:
    """eta with R_{-eta} A R_eta = [[t, p], [q, t]], t = tr/2 and |q| minimal."""
    a = 0.5 * (A[0, 0] - A[1, 1])
    b = 0.5 * (A[0, 1] + A[1, 0])
    base = 0.5 * math.atan2(-a, b)
    best = None
    for eta in (base, base + 0.5 * math.pi):
        q = abs((_rot(-eta) @ A @ _rot(eta))[1, 0])
        if best is None or q < best[0]:
            best = (q, eta)
    return best[1]


def positive_solution_from_conjugacy(
    cert: ReducibilityCertificate, p: Potential, E: float | None = None, n_sites: int = 10_000,
    max_distance: float = 0.01,
) -> PositiveSolution:
    """u(n) = C11(n alpha + phase) with C = B R_eta (or C21 when cos^2 eta <= 1/2)."""
    if not cert.parabolic:
        raise NotParabolic(f"A_tilde is {cert.classification} (trace {cert.trace:.12g})")
    if cert.conjugacy_distance_to_identity > max_distance:
        raise ConjugacyTooFar(f"||B - id|| = {cert.conjugacy_distance_to_identity:.4g} > {max_distance}")
    E = cert.E if E is None else E
    eta = parabolic_angle(cert.A_tilde)
    n = np.arange(-1, n_sites + 1)
    theta = np.mod(np.outer(n, cert.alpha) + np.asarray(p.phase), 1.0)
    C = cert.B(theta) @ _rot(eta)
    case = 1 if math.cos(eta) ** 2 > 0.5 else 2
    u = C[:, 0, 0] if case == 1 else C[:, 1, 0]
    if np.mean(u) < 0:
        u = -u
    c = p.sample(0, n_sites)
    res = u[2:] + u[:-2] - 2.0 * u[1:-1] + c * u[1:-1] - E * u[1:-1]
    return PositiveSolution(n[1:-1], u[1:-1], float(np.abs(res).max()), float(u[1:-1].min()), case, eta)
