"""Dirichlet problems on ``Omega_eps`` and the Robin function.

The discrete Dirichlet operator is the restriction of the lattice stencil of
``(-Delta)^s + 1`` to the nodes of ``Omega_eps``.  Because the stencil's
diagonal carries the full lattice sum, the restricted matrix is exactly the
whole-lattice operator applied to fields that vanish outside the domain.
Exterior data enter through a boundary fold: the stencil applied to the datum
(zero inside), moved to the right-hand side.

Two Gamma kernels are used.  The lattice kernel ``Gamma_h`` is the exact
inverse of the stencil and makes ``H = Gamma_h - G`` a true discrete Robin
function.  The quadrature kernel ``Gamma_Q`` (sampled from a four times finer
lattice) approximates the continuum kernel and serves the exterior quadratures
``Lambda_xi`` and ``beta_xi``, which keeps their discretisation independent.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, toeplitz

from .groundstate import GroundState, _shift, solve_ground_state
from .kernels import (
    Field,
    FracOperator,
    Grid,
    Params,
    PowerTail,
    Prescribed,
    Zero,
    apply_extended,
    build_grid,
    green_convolve_extended,
    lattice_green,
    quadrature_green,
)

__all__ = [
    "DirichletOperator",
    "RobinData",
    "RobinCache",
    "Problem",
    "solve_dirichlet",
    "robin",
    "barrier_beta",
    "lambda_pi",
    "ubar",
    "ubar_decomposition",
    "pi_single_solve",
    "DomainError",
    "SingularSystemError",
]


class DomainError(ValueError):
    """A point violates a distance-to-boundary precondition."""


class SingularSystemError(RuntimeError):
    """A linear system could not be factorised."""


class DirichletOperator:
    """``(-Delta)^s + 1`` on the nodes of ``Omega_eps`` with exterior folding.

    Parameters
    ----------
    params : Params
    grid : Grid
        Its mask selects the interior nodes (a contiguous run for n = 1).
    """

    def __init__(self, params: Params, grid: Grid):
        if grid.n != 1:
            raise NotImplementedError("Dirichlet problems are implemented for n = 1")
        idx = np.flatnonzero(grid.mask)
        if idx.size == 0:
            raise SingularSystemError("the domain contains no grid nodes")
        if np.any(np.diff(idx) != 1):
            raise ValueError("interior nodes must be contiguous")
        self.params = params
        self.grid = grid
        self.interior = idx
        self.stencil = FracOperator(1, params.s, grid.spacing, 1.0)
        self.matrix = toeplitz(self.stencil.toeplitz_column(idx.size - 1))
        try:
            self.factorization = cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError as err:
            raise SingularSystemError("Dirichlet matrix is not positive definite") from err

    @property
    def size(self) -> int:
        return self.interior.size

    @property
    def ext_interior(self) -> np.ndarray:
        """Interior indices on the extended lattice."""
        return self.interior + (self.grid.M_ext - self.grid.M)

    @property
    def x(self) -> np.ndarray:
        return self.grid.axis[self.interior]

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self.factorization, rhs)

    def boundary_fold(self, exterior: Field) -> np.ndarray:
        """Right-hand-side contribution ``-A[datum]`` at interior nodes (datum zero inside)."""
        ext = np.array(exterior.extended(), dtype=float)
        ext[self.ext_interior] = 0.0
        out = apply_extended(FracOperator(1, self.params.s, self.grid.spacing, 0.0),
                             ext, self.grid, exterior.far_tail)
        return -out[self.interior]

    @cached_property
    def inverse(self) -> np.ndarray:
        """``M^{-1}``; the discrete Green function is ``M^{-1} / h``."""
        return self.solve(np.eye(self.size))

    def green_matrix(self) -> np.ndarray:
        return self.inverse / self.grid.spacing


@dataclass(eq=False)
class RobinData:
    """Robin function ``H(., y)`` and Green function ``G = Gamma(. - y) - H``."""

    source: float
    H: Field
    G: Field
    residual: float = 0.0


def solve_dirichlet(op: DirichletOperator, rhs: Optional[Field], exterior: Optional[Field] = None) -> Field:
    """Solve ``((-Delta)^s + 1) u = rhs`` in ``Omega_eps`` with ``u = exterior`` outside.

    The returned field carries the exterior data on the extended lattice and
    ``meta["residual"]``, the relative residual recomputed with the FFT stencil.
    """
    g = op.grid
    b = np.zeros(op.size) if rhs is None else np.asarray(rhs.values, dtype=float)[op.interior]
    if exterior is not None:
        b = b + op.boundary_fold(exterior)
        ext = np.array(exterior.extended(), dtype=float)
        rule = exterior.exterior
        tail = exterior.far_tail
    else:
        ext = np.zeros(2 * g.M_ext + 1)
        rule = Zero()
        tail = None
    u = op.solve(b)
    ext[op.ext_interior] = u
    Me, M = g.M_ext, g.M
    vals = ext[Me - M: Me + M + 1].copy()
    Au = apply_extended(op.stencil, ext, g, tail)[op.interior]
    target = np.zeros(op.size) if rhs is None else rhs.values[op.interior]
    scale = max(np.max(np.abs(target)), np.max(np.abs(op.stencil.scale * u)), 1e-300)
    res = float(np.max(np.abs(Au - target)) / scale)
    return Field(vals, g, rule, ext, meta={"residual": res})


def _gamma_datum(lg, grid: Grid, y: float) -> Field:
    """``Gamma(. - y)`` as an exterior datum on the extended lattice."""
    x = grid.ext_axis
    ext = lg.at(np.rint((x - y) / grid.spacing).astype(int))
    Me, M = grid.M_ext, grid.M
    rule = Prescribed(func=lambda z: lg(np.asarray(z) - y), tail=lg.tail.shifted(y))
    return Field(ext[Me - M: Me + M + 1].copy(), grid, rule, ext, meta={"xi": y})


def robin(op: DirichletOperator, y: float) -> RobinData:
    """Robin function at source node ``y`` by a solve with exterior datum ``Gamma_h(. - y)``."""
    g = op.grid
    j = g.index_of(y)
    if not g.mask[j]:
        raise DomainError("source must lie strictly inside Omega_eps")
    lg = lattice_green(op.params.s, g.spacing)
    datum = _gamma_datum(lg, g, y)
    H = solve_dirichlet(op, None, datum)
    Gv = datum.extension - H.extension
    Me, M = g.M_ext, g.M
    G = Field(Gv[Me - M: Me + M + 1].copy(), g, Zero(), Gv, meta={"xi": y})
    return RobinData(y, H, G, H.meta["residual"])


class RobinCache:
    """All Robin columns ``H(x, y)`` for interior ``x, y`` from one factorisation.

    Uses ``H = Gamma_h(x - y) - M^{-1}/h`` which equals the column-by-column
    solves of :func:`robin` because ``Gamma_h`` inverts the stencil.
    ``dropped_mass`` is zero since every column is retained.
    """

    def __init__(self, op: DirichletOperator):
        self.op = op
        lg = lattice_green(op.params.s, op.grid.spacing)
        n = op.size
        gamma = toeplitz(lg.at(np.arange(n)))
        self.matrix = gamma - op.green_matrix()
        self.dropped_mass = 0.0

    def column(self, y: float) -> np.ndarray:
        j = self.op.grid.index_of(y) - self.op.interior[0]
        if not 0 <= j < self.op.size:
            raise DomainError("source outside Omega_eps")
        return self.matrix[:, j]

    def value(self, x: float, y: float) -> float:
        i = self.op.grid.index_of(x) - self.op.interior[0]
        return float(self.column(y)[i])

    def apply(self, f: np.ndarray) -> np.ndarray:
        """``int_Omega H(x, y) f(y) dy`` at interior nodes."""
        return self.op.grid.spacing * (self.matrix @ f)


# ---------------------------------------------------------------------------
# the shared context


class Problem:
    """Problem data, grid, ground state and lazily built operators for one ``eps``.

    Parameters
    ----------
    params : Params
    L, h : float
        Box half width and spacing.
    ground : GroundState, optional
        Reused across ``eps`` (it depends on ``(n, s, p, h, L)`` only).
    """

    def __init__(self, params: Params, L: float = 40.0, h: float = 0.05,
                 ground: Optional[GroundState] = None, gs_tol: float = 1e-10):
        self.params = params
        self.grid = build_grid(params, L, h)
        if ground is None:
            ground = solve_ground_state(params, self.grid, gs_tol)
        self.ground = ground
        self._ubar = {}

    @property
    def eps(self) -> float:
        return self.params.eps

    @cached_property
    def op(self) -> DirichletOperator:
        return DirichletOperator(self.params, self.grid)

    @cached_property
    def robin_cache(self) -> RobinCache:
        return RobinCache(self.op)

    @property
    def lattice_kernel(self):
        return lattice_green(self.params.s, self.grid.spacing)

    @property
    def quadrature_kernel(self):
        return quadrature_green(self.params.s, self.grid.spacing)

    def distance(self, xi: float) -> float:
        """Distance from ``xi`` to the boundary of ``Omega_eps``."""
        return self.params.domain.radius / self.eps - abs(xi)

    def require_distance(self, xi: float, dmin: float):
        self.grid.index_of(xi)
        if self.distance(xi) < dmin:
            raise DomainError(f"dist(xi, boundary) = {self.distance(xi):.4g} < {dmin}")

    def w(self, xi: float = 0.0) -> Field:
        return self.ground.translated(xi, self.grid)

    def wp(self, xi: float = 0.0) -> Field:
        return self.ground.translated_power(self.params.p, xi, self.grid)

    def Z(self, xi: float = 0.0):
        return self.ground.derivative_fields(xi, self.grid)

    def ubar(self, xi: float = 0.0) -> Field:
        key = round(xi / self.grid.spacing)
        if key not in self._ubar:
            self._ubar[key] = solve_dirichlet(self.op, self.wp(xi))
        return self._ubar[key]


def ubar(problem: Problem, xi: float = 0.0) -> Field:
    """``u_bar_xi``: the Dirichlet solve with right-hand side ``w_xi^p``."""
    return problem.ubar(xi)


def barrier_beta(xi: float, grid: Grid, gamma) -> Field:
    """``beta_xi(x) = int_{R \\ Omega_eps} Gamma(z - xi) Gamma(x - z) dz``.

    ``gamma`` is a :class:`~fraconc.kernels.LatticeGreen` kernel (the
    quadrature kernel by default in :class:`Problem`).  Complement nodes of the
    extended lattice are summed exactly; beyond it Gamma's power tail is used.
    """
    j = grid.index_of(xi)
    dom = grid.domain
    dist = dom.radius / grid.eps - abs(xi)
    if not grid.mask[j] or dist < 1.0:
        raise DomainError("barrier requires dist(xi, boundary) >= 1")
    Me, M = grid.M_ext, grid.M
    x = grid.ext_axis
    f = gamma.at(np.rint((x - xi) / grid.spacing).astype(int))
    inside = np.zeros(x.size, dtype=bool)
    inside[Me - M: Me + M + 1] = grid.mask
    f = np.where(inside, 0.0, f)
    beta = green_convolve_extended(gamma, f, grid, gamma.tail.shifted(xi))
    return Field(beta[Me - M: Me + M + 1].copy(), grid, Zero(), beta, meta={"xi": xi})


def lambda_pi(problem: Problem, xi: float = 0.0, kernel: str = "quadrature"):
    """``Lambda_xi`` by exterior quadrature and ``Pi_eps(., xi)`` from the Robin columns.

    Returns two fields whose values are meaningful at interior nodes (zero
    elsewhere).  ``kernel`` selects the Gamma used for ``Lambda``.
    """
    problem.require_distance(xi, 2.0)
    g = problem.grid
    lg = problem.quadrature_kernel if kernel == "quadrature" else problem.lattice_kernel
    wp = problem.wp(xi)
    Me, M = g.M_ext, g.M
    f = np.array(wp.extension)
    op = problem.op
    f[op.ext_interior] = 0.0
    lam_ext = green_convolve_extended(lg, f, g, wp.exterior)
    lam = np.zeros(g.shape)
    lam[op.interior] = lam_ext[op.ext_interior]
    pi = np.zeros(g.shape)
    pi[op.interior] = problem.robin_cache.apply(wp.values[op.interior])
    return (Field(lam, g, Zero(), meta={"xi": xi}), Field(pi, g, Zero(), meta={"xi": xi}))


def pi_single_solve(problem: Problem, xi: float = 0.0) -> Field:
    """``Pi_eps(., xi)`` by one exterior-datum solve.

    By linearity ``Pi`` solves the homogeneous problem with exterior datum
    ``(Gamma_h * (w_xi^p 1_Omega))``; this route never forms Robin columns.
    """
    g = problem.grid
    lg = problem.lattice_kernel
    wp = problem.wp(xi)
    f = np.zeros(2 * g.M_ext + 1)
    f[problem.op.ext_interior] = wp.values[problem.op.interior]
    datum = green_convolve_extended(lg, f, g)
    Me, M = g.M_ext, g.M
    # beyond the extended lattice the datum is Gamma's tail times the interior mass
    mass = float(f.sum() * g.spacing)
    tail = PowerTail(tuple((a * mass, q) for a, q in lg.tail.terms), center=xi)
    ext_field = Field(datum[Me - M: Me + M + 1].copy(), g, tail, datum)
    return solve_dirichlet(problem.op, None, ext_field)


def ubar_decomposition(problem: Problem, xi: float = 0.0) -> float:
    """``max |u_bar - (w - Lambda - Pi)| / max |w|`` over interior nodes."""
    u = problem.ubar(xi)
    w = problem.w(xi)
    lam, pi = lambda_pi(problem, xi)
    I = problem.op.interior
    diff = u.values[I] - (w.values[I] - lam.values[I] - pi.values[I])
    return float(np.max(np.abs(diff)) / np.max(np.abs(w.values)))
