"""Ground state of ``(-Delta)^s w + w = w^p`` on the whole line and derived fields.

The ground state is computed by Petviashvili's iteration in convolution form,

    w <- M^gamma * Gamma * (w^p),   M = <w, w> / <Gamma * w^p, w>,   gamma = p / (p - 1),

run directly on the extended lattice with the lattice fundamental solution, so
the converged field solves the discrete equation to round-off on the box.
Translates ``w_xi`` and their derivative fields ``Z_i = d w_xi / d x_i`` are
produced from the same lattice values.

For ``n = 2`` a periodic spectral version with the continuum symbol
``|k|^(2s) + 1`` is provided; it supports the ground state, the derivative
fields and their Gram matrix only.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Optional, Sequence, Union

import numpy as np

from .kernels import (
    ConvergenceError,
    Field,
    FracOperator,
    Grid,
    Params,
    PowerTail,
    Zero,
    _half_line,
    apply_extended,
    cns_constant,
    fit_power_tail,
    green_convolve_extended,
    lattice_green,
)

__all__ = [
    "GroundState",
    "DerivativeFields",
    "solve_ground_state",
    "decay_fit",
    "gram",
    "tail_integral_check",
    "whole_integral",
    "power_tail_of",
]

RESIDUAL_RADIUS = 20.0


def power_tail_of(tail: PowerTail, p: float) -> PowerTail:
    """Leading two terms of ``tail^p`` (``tail`` with at least one term)."""
    (a1, q1), rest = tail.terms[0], tail.terms[1:]
    terms = [(np.sign(a1) * abs(a1) ** p, p * q1)]
    if rest:
        a2, q2 = rest[0]
        terms.append((p * np.sign(a1) * abs(a1) ** (p - 1) * a2, (p - 1) * q1 + q2))
    return PowerTail(tuple(terms), parity=1, center=tail.center)


def _tail_derivative(tail: PowerTail) -> PowerTail:
    """Exact derivative of an even power tail; the result is odd about the centre."""
    if tail.parity != 1:
        raise ValueError("derivative implemented for even tails")
    return PowerTail(tuple((-q * a, q + 1) for a, q in tail.terms), parity=-1, center=tail.center)


def whole_integral(ext: np.ndarray, grid: Grid, tail=None) -> float:
    """``h * sum`` over the extended lattice plus the integral of ``tail`` beyond it.

    ``tail`` is any vectorised callable valid for ``|x| > R_ext``.
    """
    total = float(np.sum(ext)) * grid.spacing
    if tail is not None:
        R = np.array([grid.R_ext + 0.5 * grid.spacing])
        total += float(_half_line(R, 1, tail)[0] + _half_line(-R, -1, tail)[0])
    return total


@dataclass(eq=False)
class GroundState:
    """Converged ground state and its diagnostics.

    Attributes
    ----------
    w : Field
        Ground state on the box; ``w.extension`` holds the extended lattice.
    profile : ndarray
        ``(r, w(r))`` samples for ``r >= 0`` on the extended lattice.
    decay_exponent : float
        Fitted decay exponent over ``|x| in [8, 30]``.
    energy : float
        ``I(w) = 1/2 <((-Delta)^s + 1) w, w> - 1/(p+1) int w^(p+1)``.
    alpha : float
        ``int Z_1^2`` over the whole space.
    residual : float
        ``max |((-Delta)^s + 1) w - w^p|`` over ``|x| <= 20``.
    """

    params: Params
    w: Field
    profile: np.ndarray
    decay_exponent: float
    energy: float
    alpha: float
    residual: float
    iterations: int
    stabilization: float
    history: list = dc_field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.w.grid

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def p(self) -> float:
        return self.params.p

    # -- translates -------------------------------------------------------
    def translated(self, xi: float = 0.0, grid: Optional[Grid] = None) -> Field:
        """``w_xi = w(. - xi)`` for a node ``xi``, on ``grid`` (same lattice)."""
        grid = self._check_grid(grid)
        if grid.n != 1:
            return _translate_periodic(self.w, xi, grid)
        m = _node_offset(xi, grid.spacing)
        ext = _shift(self.w.extension, m, grid, self.w.exterior)
        Me, M = grid.M_ext, grid.M
        tail = self.w.exterior.shifted(xi)
        return Field(ext[Me - M: Me + M + 1].copy(), grid, tail, ext, meta={"xi": xi})

    def translated_power(self, q: float, xi: float = 0.0, grid: Optional[Grid] = None) -> Field:
        """``w_xi^q`` with its exact extension and power tail."""
        wx = self.translated(xi, grid)
        ext = None if wx.extension is None else wx.extension**q
        return Field(wx.values**q, wx.grid, power_tail_of(wx.exterior, q), ext)

    def derivative_fields(self, xi: float = 0.0, grid: Optional[Grid] = None) -> "DerivativeFields":
        grid = self._check_grid(grid)
        nu1 = min(self.params.decay + 1, self.p * self.params.decay)
        if grid.n != 1:
            wx = self.translated(xi, grid)
            Z = [Field(g, grid, _tail_derivative(PowerTail.single(1.0, self.params.decay)))
                 for g in _periodic_gradient(wx.values, grid.spacing)]
            return DerivativeFields(Z, nu1, xi)
        wx = self.translated(xi, grid)
        ext = wx.extension
        dtail = _tail_derivative(wx.exterior)
        Me, M, h = grid.M_ext, grid.M, grid.spacing
        d = np.empty_like(ext)
        d[1:-1] = (ext[2:] - ext[:-2]) / (2 * h)
        x = grid.ext_axis
        d[0] = (ext[1] - wx.exterior(x[0] - h)) / (2 * h)
        d[-1] = (wx.exterior(x[-1] + h) - ext[-2]) / (2 * h)
        Z = Field(d[Me - M: Me + M + 1].copy(), grid, dtail, d, meta={"xi": xi})
        return DerivativeFields([Z], nu1, xi)

    def _check_grid(self, grid):
        if grid is None:
            return self.grid
        if grid.shape != self.grid.shape or abs(grid.spacing - self.grid.spacing) > 1e-14:
            raise ValueError("grid differs from the ground-state lattice")
        return grid

    def sidecar(self) -> dict:
        return {"n": self.params.n, "s": self.s, "p": self.p, "residual": self.residual,
                "decay_exponent": self.decay_exponent, "alpha": self.alpha, "energy": self.energy,
                "iterations": self.iterations}


@dataclass(eq=False)
class DerivativeFields:
    """``Z_i = d w_xi / d x_i`` for ``i = 1..n`` and ``nu1 = min(n+2s+1, p(n+2s))``."""

    Z: list
    nu1: float
    xi: float = 0.0

    def __len__(self):
        return len(self.Z)

    def __getitem__(self, i) -> Field:
        return self.Z[i]


def _node_offset(xi: float, h: float) -> int:
    m = int(round(xi / h))
    if abs(xi - m * h) > 1e-9 * max(1.0, abs(xi)):
        raise ValueError(f"xi = {xi} is not a lattice node")
    return m


def _shift(ext: np.ndarray, m: int, grid: Grid, tail: PowerTail) -> np.ndarray:
    """Values of ``u(x - m h)`` on the extended lattice, tail where shifted in."""
    if m == 0:
        return ext.copy()
    out = np.empty_like(ext)
    x = grid.ext_axis
    if m > 0:
        out[m:] = ext[:-m]
        out[:m] = tail(x[:m] - m * grid.spacing)
    else:
        out[:m] = ext[-m:]
        out[m:] = tail(x[m:] - m * grid.spacing)
    return out


# ---------------------------------------------------------------------------
# solver


def _petviashvili_ext(params: Params, grid: Grid, tol: float, maxiter: int, seed_amplitude: float):
    lg = lattice_green(params.s, grid.spacing)
    x = grid.ext_axis
    h = grid.spacing
    p = params.p
    gam = p / (p - 1)
    w = seed_amplitude * np.exp(-x**2)
    fit_sel = (x >= 0.5 * grid.R_ext)
    exps = (params.decay, params.n + 4 * params.s)
    history = []
    tail_p = None
    for it in range(1, maxiter + 1):
        wp = np.maximum(w, 0.0) ** p
        conv = green_convolve_extended(lg, wp, grid, tail_p)
        num = np.dot(w, w)
        den = np.dot(conv, w)
        if not np.isfinite(den) or den <= 0:
            raise ConvergenceError("Petviashvili iteration broke down (nonpositive stabiliser)")
        Mk = num / den
        history.append(Mk)
        w = Mk**gam * conv
        wmax = np.max(np.abs(w))
        if not np.isfinite(wmax) or wmax > 1e12:
            raise ConvergenceError("Petviashvili iteration blew up")
        if wmax < 1e-12:
            raise ConvergenceError("Petviashvili iteration collapsed to zero")
        if it > 2:
            tail_p = power_tail_of(fit_power_tail(x[fit_sel], w[fit_sel], exps), p)
        if abs(Mk - 1.0) < tol:
            return w, it, Mk, history
    raise ConvergenceError(f"Petviashvili did not reach |M-1| < {tol} in {maxiter} iterations")


def solve_ground_state(params: Params, grid: Grid, tol: float = 1e-10,
                       maxiter: int = 2000) -> GroundState:
    """Compute the ground state on ``grid`` (mask ignored).

    Parameters
    ----------
    params : Params
        Uses ``n``, ``s`` and ``p``.
    grid : Grid
        Working lattice; for ``n = 1`` the iteration runs on its extended lattice.
    tol : float
        Stop when the stabilising factor satisfies ``|M - 1| < tol``.
    maxiter : int
        Iteration cap.

    Raises
    ------
    ConvergenceError
        On non-convergence, collapse or blow-up.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if grid.n != params.n:
        raise ValueError("grid dimension differs from params.n")
    if params.n == 2:
        return _solve_ground_state_2d(params, grid, tol, maxiter)

    last = None
    for amp in (1.0, 0.5, 2.0):  # amplitude continuation on breakdown
        try:
            w_ext, its, Mk, hist = _petviashvili_ext(params, grid, tol, maxiter, amp)
            break
        except ConvergenceError as err:
            last = err
    else:
        raise last
    Me, M = grid.M_ext, grid.M
    x = grid.ext_axis
    sel = (x >= grid.L) & (x <= grid.R_ext)
    tail = fit_power_tail(x[sel], w_ext[sel], (params.decay, params.n + 4 * params.s))
    w = Field(w_ext[Me - M: Me + M + 1].copy(), grid, tail, w_ext)

    op = FracOperator(1, params.s, grid.spacing, 1.0)
    Aw = apply_extended(op, w_ext, grid, tail, box_only=False)
    inner = np.abs(x) <= min(RESIDUAL_RADIUS, grid.L)
    residual = float(np.max(np.abs(Aw - w_ext**params.p)[inner]))

    # energy: quadratic form on the extended lattice; beyond it A w ~ w^p is negligible
    quad = whole_integral(w_ext * Aw, grid, lambda z: tail(z) * power_tail_of(tail, params.p)(z))
    pot = whole_integral(w_ext ** (params.p + 1), grid, power_tail_of(tail, params.p + 1))
    energy = 0.5 * quad - pot / (params.p + 1)

    r = x[Me:]
    profile = np.stack([r, w_ext[Me:]])
    gs = GroundState(params, w, profile, float("nan"), energy, float("nan"), residual, its, Mk, hist)
    gs.decay_exponent = decay_fit(w, (8.0, 30.0))
    Z = gs.derivative_fields(0.0)
    gs.alpha = float(gram(Z, None)[0, 0])
    return gs


# ---------------------------------------------------------------------------
# diagnostics


def decay_fit(f: Field, window: Sequence[float], absolute: bool = False) -> float:
    """Least-squares decay exponent of ``f`` over ``r_min <= |x - c| <= r_max``.

    Uses the extended lattice when the field carries one.  Returns minus the
    slope of ``log f`` against ``log |x - c|`` where ``c`` is the field's
    centre (``meta["xi"]``, default 0).
    """
    r_min, r_max = window
    if not 0 < r_min < r_max:
        raise ValueError("window must satisfy 0 < r_min < r_max")
    g = f.grid
    c = f.meta.get("xi", 0.0)
    if g.n == 1:
        if f.extension is not None:
            x, v = g.ext_axis, f.extension
            reach = g.R_ext
        else:
            x, v = g.axis, f.values
            reach = g.L
        r = np.abs(x - c)
    else:
        r = g.radius.ravel()
        v = f.values.ravel()
        reach = g.L
    if r_max > reach + 1e-12:
        raise ValueError("window extends beyond the truncation box")
    sel = (r >= r_min - 1e-12) & (r <= r_max + 1e-12)
    if np.count_nonzero(sel) < 8:
        raise ValueError("decay window contains fewer than 8 nodes")
    vals = np.abs(v[sel]) if absolute else v[sel]
    if np.any(vals <= 0):
        raise ValueError("decay fit requires positive samples")
    slope = np.polyfit(np.log(r[sel]), np.log(vals), 1)[0]
    return float(-slope)


def gram(Z: DerivativeFields, region: Optional[np.ndarray] = None) -> np.ndarray:
    """Matrix ``int_region Z_i Z_j``; ``region=None`` means the whole space.

    The whole-space version adds the tail integral beyond the extended lattice.
    """
    n = len(Z)
    G = np.empty((n, n))
    grid = Z[0].grid
    for i in range(n):
        for j in range(i, n):
            a, b = Z[i], Z[j]
            if region is not None:
                val = np.sum((a.values * b.values)[np.asarray(region, dtype=bool)]) * grid.cell_volume
            elif grid.n == 1:
                ta, tb = a.exterior, b.exterior
                val = whole_integral(a.extension * b.extension, grid, lambda z: ta(z) * tb(z))
            else:
                val = np.sum(a.values * b.values) * grid.cell_volume
            G[i, j] = G[j, i] = val
    return G


def tail_integral_check(w: Union[GroundState, Field], q: float, delta: float,
                        s: Optional[float] = None) -> float:
    """``delta^(n(q-1)+2sq) * int_{|x - xi| > delta} w^q`` for a ground state or translate."""
    if isinstance(w, GroundState):
        s = w.s
        w = w.w
    if s is None:
        raise ValueError("s is required for a bare field")
    if not q > 1:
        raise ValueError("q must exceed 1")
    if not delta >= 1:
        raise ValueError("delta must be at least 1")
    g = w.grid
    if g.n != 1:
        raise NotImplementedError("tail_integral_check is implemented for n = 1")
    c = w.meta.get("xi", 0.0)
    if w.extension is None and not isinstance(w.exterior, PowerTail):
        raise ValueError("delta beyond truncation without a tail rule")
    x = g.ext_axis
    v = w.extended()
    r = np.abs(x - c)
    # midpoint weights: a node exactly at delta counts half
    wts = np.where(r > delta + 1e-12, 1.0, np.where(np.abs(r - delta) <= 1e-12, 0.5, 0.0))
    tail = w.exterior
    total = whole_integral(wts * np.abs(v) ** q, g, lambda z: np.abs(tail(z)) ** q)
    return float(total * delta ** (g.n * (q - 1) + 2 * s * q))


# ---------------------------------------------------------------------------
# n = 2 spectral route (periodic, continuum symbol)


def _periodic_setup(grid: Grid, pad: int = 2):
    M = grid.M
    Np = pad * (2 * M + 1) + 1
    h = grid.spacing
    k = 2 * np.pi * np.fft.fftfreq(Np, h)
    kk = np.sqrt(sum(c**2 for c in np.meshgrid(k, k, indexing="ij")))
    return Np, kk


def _crop(arr: np.ndarray, grid: Grid) -> np.ndarray:
    """Box values from a periodic array whose index 0 is the origin."""
    M = grid.M
    a = np.roll(arr, (M, M), axis=(0, 1))
    return a[: 2 * M + 1, : 2 * M + 1]


def _spectral_green_2d(params: Params, grid: Grid) -> Field:
    Np, kk = _periodic_setup(grid)
    sym = kk ** (2 * params.s) + 1.0
    G = np.fft.ifft2(1.0 / sym).real / grid.cell_volume
    vals = _crop(G, grid)
    tail = PowerTail.single(2 * cns_constant(2, params.s), params.decay)
    return Field(vals, grid, tail, meta={"singular_index": (grid.M, grid.M), "mass": float(G.sum() * grid.cell_volume)})


def _solve_ground_state_2d(params, grid, tol, maxiter):
    Np, kk = _periodic_setup(grid)
    h = grid.spacing
    sym = kk ** (2 * params.s) + 1.0
    idx = (np.arange(Np) + Np // 2) % Np - Np // 2
    X, Y = np.meshgrid(idx * h, idx * h, indexing="ij")
    w = np.exp(-(X**2 + Y**2))
    p, gam = params.p, params.p / (params.p - 1)
    hist = []
    for it in range(1, maxiter + 1):
        W = np.fft.fft2(w)
        Np_ = np.fft.fft2(np.maximum(w, 0) ** p)
        Mk = float(np.sum(sym * np.abs(W) ** 2) / np.sum((np.conj(W) * Np_).real))
        hist.append(Mk)
        w = np.fft.ifft2(Mk**gam * Np_ / sym).real
        if abs(Mk - 1) < tol:
            break
    else:
        raise ConvergenceError("spectral Petviashvili did not converge")
    res_full = np.fft.ifft2(sym * np.fft.fft2(w)).real - w**p
    vals = _crop(w, grid)
    r = grid.radius
    residual = float(np.max(np.abs(_crop(res_full, grid))[r <= min(RESIDUAL_RADIUS, grid.L)]))
    quad = float(np.sum(sym * np.abs(np.fft.fft2(w)) ** 2) / w.size) * h**2
    energy = 0.5 * quad - float(np.sum(w ** (p + 1))) * h**2 / (p + 1)
    tail = PowerTail.single(1.0, params.decay)
    wf = Field(vals, grid, tail, meta={"periodic": w})
    prof = np.stack([grid.axis[grid.M:], vals[grid.M:, grid.M]])
    gs = GroundState(params, wf, prof, float("nan"), energy, float("nan"), residual, it, Mk, hist)
    gs.decay_exponent = decay_fit(wf, (3.0, min(10.0, 0.75 * grid.L)))
    gs.alpha = float(gram(gs.derivative_fields(), None)[0, 0])
    return gs


def _translate_periodic(w: Field, xi, grid: Grid) -> Field:
    if np.any(np.asarray(xi) != 0):
        raise NotImplementedError("n = 2 supports the centred ground state only")
    return Field(w.values, grid, w.exterior, meta={"xi": 0.0})


def _periodic_gradient(values: np.ndarray, h: float):
    return [(np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2 * h) for a in range(values.ndim)]
