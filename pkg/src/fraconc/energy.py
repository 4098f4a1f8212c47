"""Energies, the reduced energy ``H_eps(xi)`` and the expansion of ``I_eps(u_bar)``.

``I(u) = 1/2 int (((-Delta)^s u) u + u^2) - 1/(p+1) int u_+^(p+1)`` on the
whole line and ``I_eps`` is the same functional for fields vanishing outside
``Omega_eps``.  The reduced energy is

    H_eps(xi) = int_Omega int_Omega H_eps(x, y) w_xi^p(x) w_xi^p(y) dx dy .
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Iterable, List, Optional

import numpy as np

from .green import DomainError, Problem, lambda_pi, pi_single_solve
from .groundstate import GroundState, power_tail_of, whole_integral
from .kernels import Field, Params

__all__ = [
    "EnergyReport",
    "WholeEnergy",
    "HcalResult",
    "energy_whole",
    "energy_domain",
    "hcal",
    "hcal_scan",
    "expansion_study",
    "min_boundary_gap",
    "loglog_slope",
]


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


@dataclass
class WholeEnergy:
    lattice: float
    spectral: float
    agreement: float
    identity_residual: float

    @property
    def value(self) -> float:
        return self.lattice


def energy_whole(gs: GroundState) -> WholeEnergy:
    """``I(w)`` by the lattice quadratic form and by the continuum Fourier symbol.

    ``identity_residual`` is ``|I(w) - (1/2 - 1/(p+1)) int w^(p+1)| / I(w)``.
    """
    grid, p = gs.grid, gs.p
    if grid.n != 1:
        raise NotImplementedError("energy_whole is implemented for n = 1")
    w = gs.w.extension
    tail = gs.w.exterior
    h = grid.spacing
    pad = np.zeros(2 * w.size)
    pad[: w.size] = w
    W = np.fft.rfft(pad)
    k = 2 * np.pi * np.fft.rfftfreq(pad.size, h)
    sym = np.abs(k) ** (2 * gs.s) + 1.0
    wts = np.full(W.size, 2.0)
    wts[0] = 1.0
    if pad.size % 2 == 0:
        wts[-1] = 1.0
    quad = float(np.sum(wts * sym * np.abs(W) ** 2)) * h / pad.size
    quad += whole_integral(np.zeros(1), grid, lambda z: tail(z) * power_tail_of(tail, p)(z))
    pot = whole_integral(w ** (p + 1), grid, power_tail_of(tail, p + 1))
    spectral = 0.5 * quad - pot / (p + 1)
    ident = abs(gs.energy - (0.5 - 1 / (p + 1)) * pot) / abs(gs.energy)
    return WholeEnergy(gs.energy, spectral, abs(spectral - gs.energy) / abs(gs.energy), ident)


def energy_domain(u: Field, problem: Problem, tol: float = 1e-12) -> float:
    """``I_eps(u)`` from the restricted quadratic form; ``u`` must vanish outside.

    Raises
    ------
    ValueError
        If ``u`` is not zero outside ``Omega_eps`` to ``tol`` relative.
    """
    op = problem.op
    g = problem.grid
    vals = np.asarray(u.values, dtype=float)
    scale = max(np.max(np.abs(vals)), 1e-300)
    outside = np.ones(g.shape, dtype=bool)
    outside[op.interior] = False
    if np.any(np.abs(vals[outside]) > tol * scale):
        raise ValueError("field does not satisfy the exterior condition")
    if u.extension is not None:
        e = np.array(u.extension)
        e[op.ext_interior] = 0.0
        if np.any(np.abs(e) > tol * scale):
            raise ValueError("field does not satisfy the exterior condition")
    ui = vals[op.interior]
    h = g.spacing
    p = problem.params.p
    return float(0.5 * h * ui @ op.apply(ui) - h * np.sum(np.maximum(ui, 0.0) ** (p + 1)) / (p + 1))


@dataclass
class HcalResult:
    value: float
    value_pi: float
    agreement: float
    dropped_mass: float


def hcal(problem: Problem, xi: float = 0.0) -> HcalResult:
    """Reduced energy by the double sum over Robin columns and by ``int Pi w^p``.

    The ``Pi`` route uses a single exterior-datum solve and never forms the
    Robin matrix, so the two values are computed independently.
    """
    problem.grid.index_of(xi)
    op = problem.op
    if not problem.grid.mask[problem.grid.index_of(xi)]:
        raise DomainError("xi must lie in Omega_eps")
    wp = problem.wp(xi).values[op.interior]
    h = problem.grid.spacing
    cache = problem.robin_cache
    v1 = float(h * wp @ cache.apply(wp))
    pi = pi_single_solve(problem, xi).values[op.interior]
    v2 = float(h * pi @ wp)
    return HcalResult(v1, v2, abs(v1 - v2) / abs(v1), cache.dropped_mass)


def hcal_scan(problem: Problem, nodes: np.ndarray) -> np.ndarray:
    """``H_eps(xi)`` (double-sum route) for each node in ``nodes``."""
    op = problem.op
    h = problem.grid.spacing
    H = problem.robin_cache.matrix
    out = np.empty(len(nodes))
    for k, xi in enumerate(nodes):
        wp = problem.wp(float(xi)).values[op.interior]
        out[k] = h * h * wp @ (H @ wp)
    return out


@dataclass
class EnergyReport:
    """One row of the expansion study."""

    eps: float
    d: float
    Hcal: float
    I_eps: float
    I_whole: float
    residual: float
    eps_power: float
    J1: float
    J21: float
    J22: float
    J3: float
    decomposition_gap: float = 0.0

    CSV_COLUMNS = ("eps", "d", "Hcal", "I_eps", "residual", "eps_power", "J1", "J21", "J22", "J3")

    def row(self) -> list:
        return [getattr(self, c) for c in self.CSV_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def _max_distance_node(problem: Problem) -> float:
    g = problem.grid
    idx = np.flatnonzero(g.mask)
    d = problem.params.domain.radius / problem.eps - np.abs(g.axis[idx])
    # smallest index among maximisers
    return float(g.axis[idx[int(np.argmax(d))]])


def energy_report(problem: Problem, xi: Optional[float] = None) -> EnergyReport:
    """All terms of the expansion of ``I_eps(u_bar_xi)`` at one ``eps``."""
    if xi is None:
        xi = _max_distance_node(problem)
    gs = problem.ground
    p = problem.params.p
    g = problem.grid
    op = problem.op
    I = op.interior
    h = g.spacing
    u = problem.ubar(xi)
    I_eps = energy_domain(u, problem)
    I_w = gs.energy
    H = hcal(problem, xi).value
    resid = abs(I_eps - I_w - 0.5 * H)
    n4s = problem.params.robin_decay
    wx = problem.w(xi)
    wp = problem.wp(xi)
    comp = wx.extension ** (p + 1)
    comp[op.ext_interior] = 0.0
    J1 = whole_integral(comp, g, power_tail_of(wx.exterior, p + 1))
    lam, pi = lambda_pi(problem, xi)
    J21 = float(h * np.sum(wp.values[I] * lam.values[I]))
    J22 = float(h * np.sum(wp.values[I] * pi.values[I]))
    approx = wx.values[I] - lam.values[I] - pi.values[I]
    J3 = float(h * np.sum(wx.values[I] ** (p + 1) - np.maximum(approx, 0.0) ** (p + 1)))
    recon = I_w - (0.5 - 1 / (p + 1)) * J1 - 0.5 * (J21 + J22) + J3 / (p + 1)
    return EnergyReport(problem.eps, problem.distance(xi), H, I_eps, I_w, resid,
                        resid / problem.eps**n4s, J1, J21, J22, J3, abs(recon - I_eps))


def expansion_study(params: Params, eps_list: Iterable[float], L: float = 40.0, h: float = 0.05,
                    ground: Optional[GroundState] = None) -> List[EnergyReport]:
    """Expansion terms along a decreasing ``eps`` sweep at the max-distance point."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    out = []
    for eps in eps_list:
        pr = Problem(params.with_eps(eps), L, h, ground)
        ground = pr.ground
        out.append(energy_report(pr))
    return out


@dataclass
class BoundaryGap:
    interior_min: float
    boundary_min: float
    argmin: float
    ring: tuple
    c1: float
    c2: float

    @property
    def ordered(self) -> bool:
        return self.interior_min < self.boundary_min


def min_boundary_gap(problem: Problem, delta: float) -> BoundaryGap:
    """Minimum of ``H_eps`` over ``Omega_{eps,delta}`` against its boundary ring.

    ``Omega_{eps,delta}`` holds the nodes with ``dist(x, boundary) > delta/eps``;
    the ring is its outermost node on each side.  ``c1 = interior_min / eps^(n+4s)``
    and ``c2 = boundary_min * (delta/eps)^(n+4s)`` are logged.
    """
    g = problem.grid
    dist = problem.params.domain.radius / problem.eps - np.abs(g.axis)
    sel = np.flatnonzero(g.mask & (dist > delta / problem.eps + 1e-12))
    if sel.size < 3:
        raise DomainError("Omega_{eps,delta} has no interior nodes")
    ring_idx = np.array([sel[0], sel[-1]])
    inner = sel[1:-1]
    vals_in = hcal_scan(problem, g.axis[inner])
    vals_ring = hcal_scan(problem, g.axis[ring_idx])
    k = int(np.argmin(vals_in))  # first minimiser: lexicographic tie-break
    q = problem.params.robin_decay
    imin, bmin = float(vals_in[k]), float(vals_ring.min())
    return BoundaryGap(imin, bmin, float(g.axis[inner[k]]), tuple(g.axis[ring_idx]),
                       imin / problem.eps**q, bmin * (delta / problem.eps) ** q)
