"""Spectral edges, Lyapunov exponents and front speeds for lattice KPP in almost-periodic media."""

__version__ = "0.1.0"

from .potentials import Potential, almost_mathieu, build_potential, constant, periodic  # noqa: E402,F401
