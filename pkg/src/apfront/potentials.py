"""Almost-periodic coefficient sequences c(n) and their hull translates.

Three presentations are supported:

* ``constant``      c(n) = c0
* ``periodic``      c(n) = values[n mod p]
* ``quasiperiodic`` c(n) = c0 + sum_k V(k) exp(2 pi i <k, n alpha + phase>)

The hull of a periodic sequence is the set of its cyclic shifts, the hull of a
quasi-periodic one is the phase torus; a translate by ``k`` sites is a phase
advance by ``k alpha``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, EmptyPeriod, NonPositiveInfimum

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

KINDS = ("constant", "periodic", "quasiperiodic")


@dataclass(frozen=True)
class Potential:
    kind: str
    c0: float = 0.0
    values: tuple[float, ...] = ()
    modes: tuple[tuple[int, ...], ...] = ()
    coeffs: tuple[complex, ...] = ()
    alpha: tuple[float, ...] = ()
    phase: tuple[float, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False, hash=False)

    @property
    def period(self) -> int | None:
        if self.kind == "constant":
            return 1
        if self.kind == "periodic":
            return len(self.values)
        return None

    @property
    def torus_dim(self) -> int:
        return len(self.alpha) if self.kind == "quasiperiodic" else 0

    @property
    def inf_bound(self) -> float:
        """Analytic lower bound for inf_n c(n)."""
        if self.kind == "constant":
            return self.c0
        if self.kind == "periodic":
            return min(self.values)
        const = self.c0 + sum(c.real for k, c in zip(self.modes, self.coeffs) if not any(k))
        return const - sum(abs(c) for k, c in zip(self.modes, self.coeffs) if any(k))

    @property
    def sup_bound(self) -> float:
        """Analytic upper bound for sup_n c(n)."""
        if self.kind == "constant":
            return self.c0
        if self.kind == "periodic":
            return max(self.values)
        const = self.c0 + sum(c.real for k, c in zip(self.modes, self.coeffs) if not any(k))
        return const + sum(abs(c) for k, c in zip(self.modes, self.coeffs) if any(k))

    def _qp_arrays(self):
        arr = self._cache.get("qp")
        if arr is None:
            K = np.array(self.modes, dtype=float).reshape(len(self.modes), -1)
            arr = (
                K,
                np.array(self.coeffs, dtype=complex),
                K @ np.array(self.alpha),
                K @ np.array(self.phase),
            )
            self._cache["qp"] = arr
        return arr

    def sample(self, start: int, count: int) -> np.ndarray:
        """Return c(start), ..., c(start + count - 1) as a float array."""
        n = np.arange(start, start + count)
        return self.at(n)

    def at(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.kind == "constant":
            return np.full(n.shape, float(self.c0))
        if self.kind == "periodic":
            return np.asarray(self.values, dtype=float)[np.mod(n, len(self.values))]
        _, cf, ka, kp = self._qp_arrays()
        # reduce the phase mod 1 per mode before the exponential to keep accuracy for large n
        arg = np.mod(np.multiply.outer(n.astype(float), ka) + kp, 1.0)
        vals = (np.exp(2j * np.pi * arg) * cf).sum(axis=-1).real
        return self.c0 + vals

    def on_torus(self, theta) -> np.ndarray:
        """Evaluate the hull function V at torus points ``theta`` (shape (..., d))."""
        if self.kind != "quasiperiodic":
            raise TypeError("on_torus is defined for quasi-periodic potentials only")
        K, cf, _, _ = self._qp_arrays()
        theta = np.asarray(theta, dtype=float).reshape(-1, self.torus_dim) if np.ndim(theta) < 2 else np.asarray(theta)
        vals = (np.exp(2j * np.pi * (theta @ K.T)) * cf).sum(axis=-1).real
        return self.c0 + vals


def eval(p: Potential, n: int) -> float:  # noqa: A001 - mirrors the operation name
    return float(p.at(np.array([n]))[0])


def shift(p: Potential, k: int) -> Potential:
    """Hull translate g.k = g(. + k)."""
    if p.kind == "constant":
        return p
    if p.kind == "periodic":
        m = k % len(p.values)
        return Potential("periodic", values=p.values[m:] + p.values[:m])
    phase = tuple((ph + k * a) % 1.0 for ph, a in zip(p.phase, p.alpha))
    return Potential(
        "quasiperiodic", c0=p.c0, modes=p.modes, coeffs=p.coeffs, alpha=p.alpha, phase=phase
    )


def with_phase(p: Potential, phase) -> Potential:
    if p.kind != "quasiperiodic":
        raise TypeError("only quasi-periodic potentials carry a phase")
    phase = tuple(float(x) % 1.0 for x in np.atleast_1d(phase))
    return Potential(
        "quasiperiodic", c0=p.c0, modes=p.modes, coeffs=p.coeffs, alpha=p.alpha, phase=phase
    )


def hull_samples(p: Potential, count: int) -> list[Potential]:
    """Equispaced hull translates: phases on a lattice of T^d, or the cyclic shifts."""
    if p.kind == "constant":
        return [p]
    if p.kind == "periodic":
        return [shift(p, j) for j in range(min(count, len(p.values)))]
    d = p.torus_dim
    # Kronecker lattice with irrational generators keeps the points spread in every d
    gen = np.array([math.sqrt(q) % 1.0 for q in (2, 3, 5, 7, 11, 13)[:d]])
    if d == 1:
        pts = [(j / count,) for j in range(count)]
    else:
        pts = [tuple(((j + 0.5) / count * np.ones(d) + j * gen) % 1.0) for j in range(count)]
    return [with_phase(p, np.add(p.phase, pt)) for pt in pts]


def constant(c0: float, strict: bool = True) -> Potential:
    return build_potential({"kind": "constant", "c0": c0}, strict=strict)


def periodic(values, strict: bool = True) -> Potential:
    return build_potential({"kind": "periodic", "values": list(values)}, strict=strict)


def almost_mathieu(
    kappa: float, C: float, alpha: float = GOLDEN, phase: float = 0.0, strict: bool = True
) -> Potential:
    """c(n) = 2 kappa cos(2 pi (n alpha + phase)) + C."""
    return build_potential(
        {"kind": "quasiperiodic", "c0": C, "coeffs": {(1,): kappa, (-1,): kappa},
         "alpha": [alpha], "phase": [phase]},
        strict=strict,
    )


def _parse_coeffs(raw) -> dict[tuple[int, ...], complex]:
    out: dict[tuple[int, ...], complex] = {}
    items = raw.items() if isinstance(raw, Mapping) else raw
    for k, v in items:
        if isinstance(k, str):
            k = tuple(int(x) for x in k.replace("(", "").replace(")", "").split(",") if x.strip())
        elif isinstance(k, (int, np.integer)):
            k = (int(k),)
        out[tuple(int(x) for x in k)] = complex(v)
    return out


def build_potential(spec: Mapping[str, Any] | Potential, strict: bool = True) -> Potential:
    """Validate a potential description (as found in the ``potential`` config table).

    ``strict=False`` skips the positivity check; spectral and cocycle quantities are
    meaningful for any bounded potential, only the KPP model needs inf c > 0.
    """
    if isinstance(spec, Potential):
        return spec
    kind = spec.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown potential kind {kind!r}; expected one of {KINDS}")
    if kind == "constant":
        p = Potential("constant", c0=float(spec.get("c0", 0.0)))
    elif kind == "periodic":
        values = tuple(float(v) for v in spec.get("values", ()))
        if not values:
            raise EmptyPeriod("periodic potential needs at least one value")
        if "period" in spec and int(spec["period"]) != len(values):
            raise ConfigError(f"period {spec['period']} does not match {len(values)} values")
        p = Potential("periodic", values=values)
    else:
        coeffs = _parse_coeffs(spec.get("coeffs", {}))
        alpha = tuple(float(a) % 1.0 for a in np.atleast_1d(spec.get("alpha", GOLDEN)))
        d = len(alpha)
        phase = tuple(float(x) % 1.0 for x in np.atleast_1d(spec.get("phase", [0.0] * d)))
        if len(phase) != d or any(len(k) != d for k in coeffs):
            raise ConfigError("mode vectors, alpha and phase must share the torus dimension")
        for k, v in coeffs.items():
            mk = tuple(-x for x in k)
            if abs(coeffs.get(mk, 0.0) - v.conjugate()) > 1e-12 * max(1.0, abs(v)):
                raise ConfigError(f"coefficients are not conjugate-symmetric at k={k}")
        modes = tuple(sorted(coeffs))
        p = Potential(
            "quasiperiodic", c0=float(spec.get("c0", 0.0)), modes=modes,
            coeffs=tuple(coeffs[k] for k in modes), alpha=alpha, phase=phase,
        )
    if not strict:
        return p
    if p.inf_bound <= 0.0:
        raise NonPositiveInfimum(f"lower bound for inf c is {p.inf_bound:.6g} <= 0")
    sample = p.sample(-512, 1024)
    if sample.min() <= 0.0:
        raise NonPositiveInfimum(f"sampled inf c = {sample.min():.6g} <= 0")
    return p


def parse_potential_flag(text: str, strict: bool = True) -> Potential:
    """Parse the CLI shorthand ``constant:1``, ``periodic:0.5,1.5`` or ``amo:kappa,C[,alpha]``."""
    kind, _, rest = text.partition(":")
    try:
        nums = [float(x) for x in rest.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad potential shorthand {text!r}") from exc
    if kind == "constant" and len(nums) == 1:
        return constant(nums[0], strict=strict)
    if kind == "periodic" and nums:
        return periodic(nums, strict=strict)
    if kind == "amo" and len(nums) in (2, 3):
        return almost_mathieu(*nums, strict=strict)
    raise ConfigError(f"bad potential shorthand {text!r}")
