"""Lyapunov-Schmidt reduction: projected solves, the fixed point Psi, J_eps and verification.

With ``L = (-Delta)^s + 1 - p w_xi^(p-1)`` restricted to ``Omega_eps`` the
projected linear problem

    L psi + g = sum_i c_i Z_i  in Omega_eps,   int_Omega psi Z_i = 0,

is solved as one saddle-point system with exact Lagrange multipliers.  The
nonlinear correction ``Psi(xi)`` is the fixed point of
``psi -> T_xi[-(E(psi) + N(psi))]`` with

    E(psi) = (u_bar + psi)_+^p - (w_xi + psi)_+^p,
    N(psi) = (w_xi + psi)_+^p - w_xi^p - p w_xi^(p-1) psi .

The reduced functional is ``J_eps(xi) = I_eps(u_bar_xi + Psi(xi))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .energy import energy_domain, hcal_scan
from .green import DomainError, Problem, SingularSystemError
from .kernels import ConvergenceError, Field, Zero

__all__ = [
    "default_mu",
    "star_norm",
    "ProjectedSolve",
    "ReductionState",
    "Reduction",
    "projected_linear_solve",
    "error_terms",
    "nonlinear_projected_solve",
    "reduced_functional",
    "minimize_reduced",
    "assemble_and_verify",
    "MinimizerResult",
    "FinalReport",
]


def default_mu(n: int, s: float) -> float:
    """Midpoint of the admissible range ``n/2 < mu < n + 2s``."""
    return 0.5 * (0.5 * n + n + 2 * s)


def star_norm(psi, xi: float, mu: float, grid=None) -> float:
    """``max (1 + |x - xi|)^mu |psi(x)|`` over the box nodes.

    ``psi`` is a :class:`Field` or an array aligned with ``grid.axis``.
    """
    if isinstance(psi, Field):
        grid = psi.grid
        vals = psi.values
    else:
        vals = np.asarray(psi, dtype=float)
    if grid is None:
        raise ValueError("grid required for a bare array")
    n = grid.n
    if not mu > n / 2:
        raise ValueError("mu must exceed n/2")
    r = np.abs(grid.axis - xi) if n == 1 else grid.radius
    return float(np.max((1.0 + r) ** mu * np.abs(vals)))


def rho(grid, xi: float, mu: float) -> np.ndarray:
    """The weight ``(1 + |x - xi|)^(-mu)`` on the box nodes."""
    return (1.0 + np.abs(grid.axis - xi)) ** (-mu)


@dataclass
class ProjectedSolve:
    psi: Field
    c: np.ndarray
    ortho_residual: np.ndarray
    lin_residual: float


@dataclass
class ReductionState:
    xi: float
    Psi: Field
    c: np.ndarray
    J: float
    I_ubar: float
    star_norm: float
    iterations: int
    contraction_factor: float
    increments: list = dc_field(default_factory=list)
    pde_residual: float = 0.0
    ortho_residual: float = 0.0

    @property
    def J_minus_I(self) -> float:
        return self.J - self.I_ubar


class _Saddle:
    """LU-factored saddle system for one concentration point."""

    def __init__(self, problem: Problem, xi: float):
        op = problem.op
        I = op.interior
        p = problem.params.p
        self.problem, self.xi = problem, xi
        self.w = problem.w(xi).values[I]
        self.Z = np.stack([z.values[I] for z in problem.Z(xi).Z], axis=1)
        self.h = problem.grid.spacing
        self.L = op.matrix - np.diag(p * self.w ** (p - 1))
        n, k = op.size, self.Z.shape[1]
        K = np.zeros((n + k, n + k))
        K[:n, :n] = self.L
        K[:n, n:] = -self.Z
        K[n:, :n] = -self.h * self.Z.T
        self.K = K
        with np.errstate(all="raise"):
            try:
                self.lu = lu_factor(K, check_finite=True)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError) as err:
                raise SingularSystemError("saddle system is singular") from err
        if np.any(np.abs(np.diag(self.lu[0])) < 1e-14 * np.abs(K).max()):
            raise SingularSystemError("saddle system is numerically singular")

    def solve(self, g: np.ndarray):
        n = self.L.shape[0]
        rhs = np.concatenate([-g, np.zeros(self.Z.shape[1])])
        sol = lu_solve(self.lu, rhs)
        return sol[:n], sol[n:]


class Reduction:
    """Reduction machinery bound to a :class:`~fraconc.green.Problem`.

    Caches the saddle factorisation per concentration point.
    """

    def __init__(self, problem: Problem, mu: Optional[float] = None, tol: float = 1e-12,
                 maxiter: int = 200):
        self.problem = problem
        self.mu = default_mu(problem.params.n, problem.params.s) if mu is None else mu
        n, s = problem.params.n, problem.params.s
        if not n / 2 < self.mu < n + 2 * s:
            raise ValueError("mu must satisfy n/2 < mu < n + 2s")
        self.tol = tol
        self.maxiter = maxiter
        self._saddles = {}
        self._states = {}

    @property
    def grid(self):
        return self.problem.grid

    @property
    def interior(self):
        return self.problem.op.interior

    def saddle(self, xi: float) -> _Saddle:
        key = self.grid.index_of(xi)
        if key not in self._saddles:
            self._saddles[key] = _Saddle(self.problem, xi)
        return self._saddles[key]

    def embed(self, v: np.ndarray, **meta) -> Field:
        out = np.zeros(self.grid.shape)
        out[self.interior] = v
        return Field(out, self.grid, Zero(), meta=meta)

    def norm(self, v: np.ndarray, xi: float) -> float:
        r = np.abs(self.grid.axis[self.interior] - xi)
        return float(np.max((1.0 + r) ** self.mu * np.abs(v)))

    # -- linear theory ------------------------------------------------------
    def linear(self, xi: float, g: np.ndarray) -> ProjectedSolve:
        S = self.saddle(xi)
        psi, c = S.solve(g)
        ortho = S.h * (S.Z.T @ psi)
        r = S.L @ psi + g - S.Z @ c
        lin = float(np.max(np.abs(r)) / max(np.max(np.abs(g)), 1e-300))
        return ProjectedSolve(self.embed(psi, xi=xi), c, ortho, lin)

    def error_terms(self, xi: float, psi: np.ndarray):
        p = self.problem.params.p
        I = self.interior
        u = self.problem.ubar(xi).values[I]
        w = self.problem.w(xi).values[I]
        wpsi = np.maximum(w + psi, 0.0) ** p
        E = np.maximum(u + psi, 0.0) ** p - wpsi
        N = wpsi - w**p - p * w ** (p - 1) * psi
        return E, N

    # -- nonlinear fixed point ---------------------------------------------
    def fixed_point(self, xi: float, psi0: Optional[np.ndarray] = None) -> ReductionState:
        key = self.grid.index_of(xi)
        if psi0 is None and key in self._states:
            return self._states[key]
        S = self.saddle(xi)
        psi = np.zeros(self.problem.op.size) if psi0 is None else np.asarray(psi0, float).copy()
        incs, factors = [], []
        bad = 0
        c = np.zeros(S.Z.shape[1])
        for it in range(1, self.maxiter + 1):
            E, N = self.error_terms(xi, psi)
            new, c = S.solve(-(E + N))
            inc = self.norm(new - psi, xi)
            psi = new
            if incs:
                factors.append(inc / incs[-1] if incs[-1] > 0 else 0.0)
                bad = bad + 1 if factors[-1] >= 1.0 else 0
                if bad >= 5:
                    raise ConvergenceError(f"fixed point not contracting at eps={self.problem.eps}")
            incs.append(inc)
            if inc < self.tol:
                break
        else:
            raise ConvergenceError("fixed point did not converge")
        # contraction estimate from the increments before round-off dominates
        useful = [f for f, a in zip(factors, incs[1:]) if a > 1e3 * self.tol]
        kappa = max(useful) if useful else (max(factors) if factors else 0.0)
        u = self.problem.ubar(xi).values[self.interior] + psi
        J = energy_domain(self.embed(u), self.problem)
        I_ubar = energy_domain(self.embed(self.problem.ubar(xi).values[self.interior]), self.problem)
        E, N = self.error_terms(xi, psi)
        pde = S.L @ psi - (E + N) - S.Z @ c
        st = ReductionState(xi, self.embed(psi, xi=xi), c, J, I_ubar, self.norm(psi, xi), it, kappa, incs,
                            self.norm(pde, xi), float(np.max(np.abs(S.h * S.Z.T @ psi))))
        if psi0 is None:
            self._states[key] = st
        return st


# ---------------------------------------------------------------------------
# functional interface


def projected_linear_solve(red: Reduction, xi: float, g) -> ProjectedSolve:
    """Solve the projected linear problem for ``g`` (a Field or interior array)."""
    gv = g.values[red.interior] if isinstance(g, Field) else np.asarray(g, dtype=float)
    return red.linear(xi, gv)


def error_terms(red: Reduction, xi: float, psi) -> tuple:
    """``(E(psi), N(psi))`` as fields supported in ``Omega_eps``."""
    pv = psi.values[red.interior] if isinstance(psi, Field) else np.asarray(psi, dtype=float)
    E, N = red.error_terms(xi, pv)
    return red.embed(E, xi=xi), red.embed(N, xi=xi)


def nonlinear_projected_solve(red: Reduction, xi: float, psi0=None) -> ReductionState:
    """Fixed point ``Psi(xi)`` with multipliers and the empirical contraction factor."""
    if isinstance(psi0, Field):
        psi0 = psi0.values[red.interior]
    return red.fixed_point(xi, psi0)


def reduced_functional(red: Reduction, xi: float) -> float:
    """``J_eps(xi) = I_eps(u_bar_xi + Psi(xi))``."""
    return red.fixed_point(xi).J


@dataclass
class MinimizerResult:
    xi_bar: float
    c: np.ndarray
    J_min: float
    scan_nodes: np.ndarray
    scan_values: np.ndarray
    ring: tuple
    c_ring: np.ndarray
    minimizer_set_diameter: float
    evaluations: int


def minimize_reduced(red: Reduction, delta: float, coarse: int = 17) -> MinimizerResult:
    """Minimise ``J_eps`` over the nodes of ``Omega_{eps,delta}``.

    A coarse scan of about ``coarse`` equally spaced nodes is followed by a
    golden-section search on node indices within the bracketing coarse cells.
    Ties go to the smallest node index.  A minimiser on the ring (outermost
    nodes) raises :class:`DomainError`.
    """
    pr = red.problem
    g = pr.grid
    dist = pr.params.domain.radius / pr.eps - np.abs(g.axis)
    sel = np.flatnonzero(g.mask & (dist > delta / pr.eps + 1e-12))
    if sel.size < 3:
        raise DomainError("Omega_{eps,delta} has no interior nodes")
    cache = {}

    def J(i):
        if i not in cache:
            cache[i] = reduced_functional(red, float(g.axis[i]))
        return cache[i]

    # symmetric coarse lattice of indices including both ends
    pos = np.unique(np.rint(np.linspace(0, sel.size - 1, coarse)).astype(int))
    idx = sel[pos]
    vals = np.array([J(i) for i in idx])
    k = int(np.argmin(vals))
    lo = idx[max(k - 1, 0)]
    hi = idx[min(k + 1, idx.size - 1)]
    # golden section on integers
    invphi = (np.sqrt(5) - 1) / 2
    a, b = int(lo), int(hi)
    while b - a > 3:
        c1 = int(round(b - invphi * (b - a)))
        c2 = int(round(a + invphi * (b - a)))
        if c1 == c2:
            c2 = c1 + 1
        if J(c1) <= J(c2):
            b = c2
        else:
            a = c1
    best = min(range(a, b + 1), key=lambda i: (J(i), i))
    if best in (sel[0], sel[-1]):
        raise DomainError("minimiser lies on the ring of Omega_{eps,delta}")
    Jmin = J(best)
    tol = 1e-12 * max(1.0, abs(Jmin))
    ties = [i for i, v in cache.items() if abs(v - Jmin) <= tol]
    diam = (max(ties) - min(ties)) * g.spacing
    st = red.fixed_point(float(g.axis[best]))
    ring = (float(g.axis[sel[0]]), float(g.axis[sel[-1]]))
    st_ring = red.fixed_point(ring[1])
    nodes = np.array(sorted(cache))
    return MinimizerResult(float(g.axis[best]), st.c, Jmin, g.axis[nodes], np.array([cache[i] for i in nodes]),
                           ring, st_ring.c, diam, len(cache))


@dataclass
class FinalReport:
    eps: float
    xi_bar: float
    dist_to_boundary: float
    c_vector: list
    star_norm_Psi: float
    newton_correction: float
    newton_iterations: int
    error_vs_ground_state: float
    positive: bool
    U_profile: np.ndarray = dc_field(repr=False, default=None)
    W_profile: np.ndarray = dc_field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "xi_bar": self.xi_bar, "dist_to_boundary": self.dist_to_boundary,
                "c_vector": [float(c) for c in self.c_vector], "star_norm_Psi": self.star_norm_Psi,
                "newton_correction": self.newton_correction, "newton_iterations": self.newton_iterations,
                "error_vs_ground_state": self.error_vs_ground_state, "positive": self.positive}


def newton_verify(problem: Problem, u0: np.ndarray, tol: float = 1e-13, maxiter: int = 30):
    """Damped Newton on ``M u - u_+^p = 0`` in ``Omega_eps`` (no projection).

    Returns ``(u, iterations, relative correction)``.
    """
    op = problem.op
    p = problem.params.p
    u = np.array(u0, dtype=float)

    def F(v):
        return op.apply(v) - np.maximum(v, 0.0) ** p

    f = F(u)
    floor = 64 * np.finfo(float).eps * np.max(np.abs(op.apply(u)))
    it = 0
    for it in range(1, maxiter + 1):
        fn = np.max(np.abs(f))
        if fn <= floor:
            it -= 1
            break
        Jm = op.matrix - np.diag(p * np.maximum(u, 0.0) ** (p - 1))
        du = np.linalg.solve(Jm, -f)
        t = 1.0
        while True:
            cand = u + t * du
            fc = F(cand)
            fcn = np.max(np.abs(fc))
            if fcn <= (1 - 1e-4 * t) * fn or fcn <= floor:
                break
            t *= 0.5
            if t < 1e-4:
                raise ConvergenceError(f"Newton line search failed at eps={problem.eps}")
        u, f = cand, fc
        if np.max(np.abs(t * du)) <= tol * np.max(np.abs(u)):
            break
    else:
        raise ConvergenceError(f"Newton did not converge at eps={problem.eps}")
    corr = float(np.max(np.abs(u - u0)) / np.max(np.abs(u)))
    return u, it, corr


def assemble_and_verify(red: Reduction, xi_bar: float) -> FinalReport:
    """Assemble ``u = u_bar + Psi`` at ``xi_bar``, verify it by Newton and compare to ``w_xi``."""
    pr = red.problem
    g = pr.grid
    I = red.interior
    st = red.fixed_point(xi_bar)
    u0 = pr.ubar(xi_bar).values[I] + st.Psi.values[I]
    u, its, corr = newton_verify(pr, u0)
    positive = bool(np.all(u > 0))
    if not positive:
        raise ConvergenceError("assembled solution lost positivity")
    wx = pr.w(xi_bar)
    full = np.zeros(2 * g.M_ext + 1)
    full[pr.op.ext_interior] = u
    err = float(np.max(np.abs(full - wx.extension)))
    eps = pr.eps
    xs = g.axis[I]
    U = np.stack([eps * xs, u])            # U_eps(x) = u(x / eps)
    W = np.stack([eps * xs, wx.values[I]])  # w((x - xi_tilde)/eps), xi_tilde = eps * xi_bar
    dist = pr.params.domain.radius - abs(eps * xi_bar)
    return FinalReport(eps, xi_bar, dist, list(st.c), st.star_norm, corr, its, err, positive, U, W)
