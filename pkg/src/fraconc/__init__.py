"""Numerics for concentrating solutions of ``eps^(2s) (-Delta)^s U + U = U^p`` on a bounded domain.

Modules
-------
kernels      lattice fractional Laplacian, fundamental solution, fields with exterior rules
groundstate  whole-space ground state ``w`` and its derivative fields
green        Dirichlet solves, Robin function, barrier and the corrected approximation
energy       energies, the reduced energy and the expansion study
reduction    projected linear and nonlinear solves, reduced minimisation, final assembly
experiments  configured studies used by the command line
"""
from .kernels import Domain, Field, Params, PowerTail, build_grid, fundamental_solution
from .groundstate import GroundState, solve_ground_state
from .green import Problem, robin, ubar
from .energy import energy_report, hcal
from .reduction import Reduction, assemble_and_verify, minimize_reduced

__version__ = "0.1.0"

__all__ = [
    "Domain", "Field", "Params", "PowerTail", "build_grid", "fundamental_solution",
    "GroundState", "solve_ground_state", "Problem", "robin", "ubar", "energy_report", "hcal",
    "Reduction", "assemble_and_verify", "minimize_reduced",
]
