"""Grids, fields, the discrete fractional Laplacian and the fundamental solution.

Everything in the package is built on one lattice discretisation of

    (-Delta)^s u(x) = c(n,s) * int (2u(x) - u(x+y) - u(x-y)) / |y|^(n+2s) dy .

In one dimension the second difference ``D(y) = 2u(x) - u(x+y) - u(x-y)`` is
replaced by its piecewise linear interpolant on ``|y| >= h`` and by the Taylor
term ``-u'' y^2`` on the singular cell ``|y| < h``; a correction for the
interpolation error of the quadratic part is folded into the nearest-neighbour
weight.  The resulting operator is a symmetric Toeplitz stencil

    A u_i = C h^(-2s) [ 2 W u_i - sum_{k>=1} w_k (u_{i+k} + u_{i-k}) ],
    W = sum_{k>=1} w_k ,

with ``C = 2 c(n,s)`` and dimensionless weights ``w_k ~ k^(-1-2s)``.  It is
second order accurate for smooth fields.  Values outside the working box come
from the field's exterior rule; far beyond the box the remainder integral is
evaluated from the rule's power tail.

The fundamental solution ``Gamma`` is the exact lattice inverse of ``A + 1``,
obtained by a cosine transform of ``1 / (sigma(theta) + 1)`` where ``sigma`` is
the symbol of the stencil.  Using the lattice inverse, rather than samples of
the continuum kernel, keeps ``w = Gamma * w^p`` and the discrete equation
``(A + 1) w = w^p`` consistent to round-off.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma as gamma_fn
from scipy.special import roots_legendre, zeta

__all__ = [
    "Domain",
    "Params",
    "Grid",
    "Zero",
    "PowerTail",
    "Prescribed",
    "Field",
    "FracOperator",
    "LatticeGreen",
    "UnsupportedExteriorError",
    "ConvergenceError",
    "build_grid",
    "cns_constant",
    "frac_apply",
    "apply_extended",
    "fundamental_solution",
    "lattice_green",
    "quadrature_green",
    "convolve",
    "green_convolve_extended",
    "fit_power_tail",
    "field_to_json",
    "field_from_json",
]

EXT_FACTOR = 4
"""The extended lattice used for exterior sums reaches ``EXT_FACTOR * L``."""


class UnsupportedExteriorError(ValueError):
    """Raised when an exterior rule cannot be integrated in the far field."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative or quadrature procedure fails to converge."""


# ---------------------------------------------------------------------------
# problem data


@dataclass(frozen=True)
class Domain:
    """A bounded domain centred at the origin.

    ``kind`` is ``"interval"`` (n = 1) or ``"ball"``; both are ``{|x| < radius}``.
    An optional ``mask_fn`` (vectorised, taking the coordinate arrays and
    returning booleans) replaces the default membership test.
    """

    kind: str = "interval"
    radius: float = 1.0
    mask_fn: Optional[Callable[..., np.ndarray]] = dc_field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in ("interval", "ball"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("domain radius must be positive")

    def contains(self, *coords: np.ndarray) -> np.ndarray:
        if self.mask_fn is not None:
            return np.asarray(self.mask_fn(*coords), dtype=bool)
        r2 = sum(np.asarray(c, dtype=float) ** 2 for c in coords)
        return r2 < self.radius**2

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def inradius(self) -> float:
        """Largest distance from a point of the domain to its boundary."""
        return self.radius

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius}


@dataclass(frozen=True)
class Params:
    """Problem data ``(n, s, p, eps, domain)``.

    Enforces ``n > 2s`` and ``1 < p < (n+2s)/(n-2s)``.
    """

    n: int = 1
    s: float = 0.4
    p: float = 2.0
    eps: float = 0.1
    domain: Domain = Domain()

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 and n = 2 are supported")
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if not self.n > 2 * self.s:
            raise ValueError("the order must satisfy n > 2s")
        if not 1.0 < self.p < self.critical_exponent:
            raise ValueError(
                f"p must lie in (1, {self.critical_exponent:.6g}) for n={self.n}, s={self.s}"
            )
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n == 1 and self.domain.kind != "interval":
            raise ValueError("n = 1 requires an interval domain")

    @property
    def critical_exponent(self) -> float:
        return (self.n + 2 * self.s) / (self.n - 2 * self.s)

    @property
    def decay(self) -> float:
        """Decay exponent ``n + 2s`` of Gamma and of the ground state."""
        return self.n + 2 * self.s

    @property
    def robin_decay(self) -> float:
        """Exponent ``n + 4s`` governing the Robin function."""
        return self.n + 4 * self.s

    def with_eps(self, eps: float) -> "Params":
        return replace(self, eps=eps)

    def to_dict(self) -> dict:
        return {"n": self.n, "s": self.s, "p": self.p, "eps": self.eps, "domain": self.domain.to_dict()}


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice ``h * {-M, ..., M}^n`` with the mask of ``Omega / eps``."""

    n: int
    half_width: float
    spacing: float
    axis: np.ndarray
    mask: np.ndarray
    eps: float = 1.0
    domain: Optional[Domain] = None

    @property
    def h(self) -> float:
        return self.spacing

    @property
    def L(self) -> float:
        return self.half_width

    @property
    def M(self) -> int:
        return (self.axis.size - 1) // 2

    @property
    def shape(self) -> tuple:
        return (self.axis.size,) * self.n

    @property
    def center_index(self):
        return (self.M,) * self.n if self.n > 1 else self.M

    @property
    def nodes(self) -> np.ndarray:
        return self.axis if self.n == 1 else np.stack(self.coords, axis=-1)

    @property
    def coords(self) -> tuple:
        if self.n == 1:
            return (self.axis,)
        return tuple(np.meshgrid(*([self.axis] * self.n), indexing="ij"))

    @property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.n

    # extended lattice used for exterior sums (n = 1)
    @property
    def M_ext(self) -> int:
        return EXT_FACTOR * self.M

    @property
    def ext_axis(self) -> np.ndarray:
        return np.arange(-self.M_ext, self.M_ext + 1) * self.spacing

    @property
    def R_ext(self) -> float:
        return self.M_ext * self.spacing

    def index_of(self, x: float) -> int:
        """Index of the 1-d node at coordinate ``x`` (must be a node)."""
        j = x / self.spacing
        k = int(round(j))
        if abs(j - k) > 1e-8 or abs(k) > self.M:
            raise ValueError(f"{x} is not a node of the grid")
        return k + self.M

    def distance_to_boundary(self) -> np.ndarray:
        """Distance from each node to the boundary of ``Omega_eps`` (1-d interval)."""
        if self.domain is None:
            raise ValueError("grid carries no domain")
        R = self.domain.radius / self.eps
        return R - self.radius


def build_grid(params: Params, L: float, h: float) -> Grid:
    """Uniform grid on ``[-L, L]^n`` with spacing ``h``; origin is a node.

    The mask marks nodes of ``Omega_eps = Omega / eps`` (strict interior).
    """
    if not h > 0:
        raise ValueError("spacing h must be positive")
    if not L > 0:
        raise ValueError("half width L must be positive")
    ratio = L / h
    M = int(round(ratio))
    if abs(ratio - M) > 1e-9 * max(1.0, ratio) or M < 1:
        raise ValueError("h must divide L so that the node count per axis is odd")
    axis = np.arange(-M, M + 1) * h
    coords = (axis,) if params.n == 1 else tuple(np.meshgrid(*([axis] * params.n), indexing="ij"))
    mask = params.domain.contains(*(params.eps * c for c in coords))
    return Grid(params.n, M * h, h, axis, mask, params.eps, params.domain)


# ---------------------------------------------------------------------------
# exterior rules


@dataclass(frozen=True)
class Zero:
    """The field vanishes outside the box."""

    kind = "zero"


@dataclass(frozen=True)
class PowerTail:
    """Far-field model ``sum_k A_k |x - c|^(-q_k)``, times ``parity`` for ``x < c``.

    The first term is the leading one; further terms are corrections.
    """

    terms: tuple = ((1.0, 2.0),)
    parity: int = 1
    center: float = 0.0

    kind = "power"

    def __post_init__(self):
        terms = tuple((float(a), float(q)) for a, q in self.terms)
        if not terms:
            raise ValueError("PowerTail needs at least one term")
        for _, q in terms:
            if not q > 1.0:
                raise ValueError("tail exponents must exceed the dimension")
        if self.parity not in (1, -1):
            raise ValueError("parity must be +1 or -1")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def single(cls, amplitude: float, exponent: float, **kw) -> "PowerTail":
        return cls(((amplitude, exponent),), **kw)

    @property
    def amplitude(self) -> float:
        return self.terms[0][0]

    @property
    def exponent(self) -> float:
        return self.terms[0][1]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        r = np.abs(x - self.center)
        with np.errstate(divide="ignore"):
            v = sum(a * r ** (-q) for a, q in self.terms)
        if self.parity == -1:
            v = np.where(x < self.center, -v, v)
        return v

    def shifted(self, c: float) -> "PowerTail":
        return replace(self, center=self.center + c)

    def to_dict(self) -> dict:
        return {"kind": "power", "terms": [list(t) for t in self.terms], "parity": self.parity,
                "center": self.center}


@dataclass(frozen=True)
class Prescribed:
    """Exterior values given by ``func(x)``; ``tail`` covers the far field."""

    func: Callable[[np.ndarray], np.ndarray] = dc_field(compare=False)
    tail: Optional[PowerTail] = None

    kind = "prescribed"


ExteriorRule = Union[Zero, PowerTail, Prescribed]


def _rule_to_dict(rule: ExteriorRule) -> dict:
    if isinstance(rule, Zero):
        return {"kind": "zero"}
    if isinstance(rule, PowerTail):
        return rule.to_dict()
    return {"kind": "prescribed", "tail": None if rule.tail is None else rule.tail.to_dict()}


def _rule_from_dict(d: dict) -> ExteriorRule:
    if d["kind"] == "zero":
        return Zero()
    if d["kind"] == "power":
        return PowerTail(tuple(tuple(t) for t in d["terms"]), d.get("parity", 1), d.get("center", 0.0))
    tail = None if d.get("tail") is None else _rule_from_dict(d["tail"])
    return Prescribed(func=None, tail=tail)


@dataclass(eq=False)
class Field:
    """Nodal values on a grid together with an exterior extension rule.

    ``extension`` optionally holds exact values on the whole extended lattice
    (length ``2 * grid.M_ext + 1``); when present it takes precedence over
    the rule inside ``[-R_ext, R_ext]``.  ``meta`` carries diagnostics.
    """

    values: np.ndarray
    grid: Grid
    exterior: ExteriorRule = dc_field(default_factory=Zero)
    extension: Optional[np.ndarray] = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not match grid {self.grid.shape}")
        if isinstance(self.exterior, PowerTail) and self.exterior.exponent <= self.grid.n:
            raise ValueError("PowerTail exponent must exceed n")

    @property
    def far_tail(self) -> Optional[PowerTail]:
        """Power tail valid beyond the extended lattice, or None when zero there."""
        rule = self.exterior
        if isinstance(rule, Zero):
            return None
        if isinstance(rule, PowerTail):
            return rule
        if rule.tail is None:
            raise UnsupportedExteriorError("prescribed exterior datum without a far-field tail")
        return rule.tail

    def extended(self) -> np.ndarray:
        """Values on the extended 1-d lattice ``[-R_ext, R_ext]``."""
        g = self.grid
        if g.n != 1:
            raise NotImplementedError("extension is implemented for n = 1")
        if self.extension is not None:
            return self.extension
        x = g.ext_axis
        out = np.empty(x.size)
        inner = slice(g.M_ext - g.M, g.M_ext + g.M + 1)
        outside = np.ones(x.size, dtype=bool)
        outside[inner] = False
        rule = self.exterior
        if isinstance(rule, Zero):
            out[outside] = 0.0
        elif isinstance(rule, PowerTail):
            out[outside] = rule(x[outside])
        else:
            if rule.func is None:
                raise UnsupportedExteriorError("prescribed rule has no evaluable function")
            out[outside] = rule.func(x[outside])
        out[inner] = self.values
        return out

    def with_values(self, values) -> "Field":
        """Same grid and exterior rule, new nodal values (no extension)."""
        return Field(values, self.grid, self.exterior)

    def __neg__(self):
        ext = None if self.extension is None else -self.extension
        rule = self.exterior
        if isinstance(rule, PowerTail):
            rule = replace(rule, terms=tuple((-a, q) for a, q in rule.terms))
        elif isinstance(rule, Prescribed):
            raise UnsupportedExteriorError("cannot negate a prescribed rule")
        return Field(-self.values, self.grid, rule, ext)


def fit_power_tail(x: np.ndarray, v: np.ndarray, exponents: Sequence[float], parity: int = 1,
                   center: float = 0.0) -> PowerTail:
    """Linear least-squares fit of ``sum_k A_k |x|^(-q_k)`` to samples ``v``."""
    r = np.abs(np.asarray(x, dtype=float) - center)
    sgn = np.where(np.asarray(x) < center, parity, 1.0)
    basis = np.stack([r ** (-q) for q in exponents], axis=1)
    # scale rows so every sample counts relatively
    scale = 1.0 / np.maximum(np.abs(basis[:, 0]), 1e-300)
    coef, *_ = np.linalg.lstsq(basis * scale[:, None], sgn * v * scale, rcond=None)
    return PowerTail(tuple(zip(coef, exponents)), parity=parity, center=center)


# ---------------------------------------------------------------------------
# the discrete operator


def cns_constant(n: int, s: float) -> float:
    """Normalising constant of the second-difference form of ``(-Delta)^s``.

    With this constant ``c(n,s) * int (2u(x)-u(x+y)-u(x-y)) |y|^(-n-2s) dy`` has
    Fourier multiplier ``|xi|^(2s)``.  It equals half the constant of the
    principal-value form ``int (u(x)-u(y)) |x-y|^(-n-2s) dy``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    pv = s * 4.0**s * gamma_fn(n / 2 + s) / (np.pi ** (n / 2) * gamma_fn(1 - s))
    return 0.5 * pv


_GL_X, _GL_W = roots_legendre(24)
_NEAR = 64  # weights up to this index use cell quadrature, beyond it a Taylor series


def _cell_integral(lo, hi, f):
    x = 0.5 * (hi - lo) * _GL_X[:, None] + 0.5 * (hi + lo)
    return (0.5 * (hi - lo) * _GL_W[:, None] * f(x)).sum(axis=0)


@lru_cache(maxsize=32)
def _stencil_constants(s: float) -> tuple:
    """``(w_1, sum_k w_k)`` for the unit-spacing stencil."""
    a = 1.0 + 2.0 * s
    k = np.arange(1, _NEAR + 1, dtype=float)
    # interpolation error of t^2 on each cell, tail summed by Euler-Maclaurin at midpoints
    corr = _cell_integral(k, k + 1, lambda t: (t - k) * (k + 1 - t) * t ** (-a)).sum()
    m0 = _NEAR + 1.5
    corr += zeta(a, m0) / 6 + a * (a + 1) * zeta(a + 2, m0) / 240 \
        + a * (a + 1) * (a + 2) * (a + 3) * zeta(a + 4, m0) / 13440
    hat = _cell_integral(np.array([1.0]), np.array([2.0]), lambda t: (2 - t) * t ** (-a))[0]
    w1 = 1.0 / (2.0 - 2.0 * s) + hat - corr
    total = 1.0 / (2.0 * s) + 1.0 / (2.0 - 2.0 * s) - corr
    return w1, total


@lru_cache(maxsize=32)
def _weights(s: float, K: int) -> np.ndarray:
    """Dimensionless weights ``w_0..w_K`` (``w_0 = 0``)."""
    if K < 1:
        return np.zeros(K + 1)
    a = 1.0 + 2.0 * s
    w = np.zeros(K + 1)
    w[1] = _stencil_constants(s)[0]
    kn = np.arange(2, min(_NEAR, K) + 1, dtype=float)
    if kn.size:
        w[2:kn.size + 2] = _cell_integral(kn - 1, kn, lambda t: (t - kn + 1) * t ** (-a)) \
            + _cell_integral(kn, kn + 1, lambda t: (kn + 1 - t) * t ** (-a))
    if K > _NEAR:
        k = np.arange(_NEAR + 1, K + 1, dtype=float)
        c2 = a * (a + 1)
        c4 = c2 * (a + 2) * (a + 3)
        c6 = c4 * (a + 4) * (a + 5)
        w[_NEAR + 1:] = k ** (-a) * (1 + c2 / 12 * k**-2.0 + c4 / 360 * k**-4.0 + c6 / 20160 * k**-6.0)
    w.setflags(write=False)
    return w


def _far_sum(s: float, K: int) -> float:
    """``sum_{k > K} w_k`` in closed form (hat functions beyond node K)."""
    a = 1.0 + 2.0 * s
    if K < 1:
        return _stencil_constants(s)[1]
    lin = _cell_integral(np.array([float(K)]), np.array([K + 1.0]), lambda t: (t - K) * t ** (-a))[0]
    return (K + 1.0) ** (-2 * s) / (2 * s) + lin


@dataclass(frozen=True)
class FracOperator:
    """Discrete ``(-Delta)^s + mass_shift`` on a 1-d lattice of spacing ``h``."""

    n: int
    s: float
    h: float
    mass_shift: float = 1.0

    def __post_init__(self):
        if self.n != 1:
            raise NotImplementedError("the real-space stencil is implemented for n = 1")
        if not 0.0 < self.s < 1.0:
            raise ValueError("s must lie in (0, 1)")
        if self.mass_shift not in (0.0, 1.0):
            raise ValueError("mass_shift is 0 or 1")

    @property
    def cns(self) -> float:
        return cns_constant(self.n, self.s)

    @property
    def scale(self) -> float:
        """Prefactor ``2 c(n,s) h^(-2s)`` of the dimensionless stencil."""
        return 2.0 * self.cns * self.h ** (-2.0 * self.s)

    @property
    def diagonal_weight(self) -> float:
        return 2.0 * _stencil_constants(self.s)[1]

    def interior_weights(self, K: int) -> np.ndarray:
        return _weights(self.s, K)

    def tail_coefficient(self, grid: Grid) -> np.ndarray:
        """Per-node weight of the lattice beyond the box: ``(-Delta)^s 1_box``."""
        M = grid.M
        i = np.arange(-M, M + 1)
        right = np.array([_far_sum(self.s, M - j) for j in i])
        return self.scale * (right + right[::-1])

    def toeplitz_column(self, K: int) -> np.ndarray:
        """First column of the stencil matrix on ``K + 1`` consecutive nodes."""
        col = -self.scale * np.asarray(self.interior_weights(K))
        col = col.copy()
        col[0] = self.scale * self.diagonal_weight + self.mass_shift
        return col

    def symbol(self, theta: np.ndarray) -> np.ndarray:
        """Symbol ``sigma(theta)`` of the stencil without mass, by direct summation."""
        K = 200000
        w = _weights(self.s, K)
        k = np.arange(1, K + 1)
        th = np.atleast_1d(theta)
        out = np.array([np.sum(w[1:] * (2 - 2 * np.cos(k * t))) for t in th])
        return self.scale * (out + 2 * _far_sum(self.s, K))


_TAIL_T, _TAIL_W = roots_legendre(64)
_TAIL_T = 0.5 * (_TAIL_T + 1.0)
_TAIL_W = 0.5 * _TAIL_W


def _half_line(start: np.ndarray, sign: int, integrand) -> np.ndarray:
    """``int`` over ``z`` from ``start`` to ``sign * inf`` (``|start| > 0``), vectorised in start."""
    a = np.abs(start)[:, None]
    z = sign * a / _TAIL_T[None, :]
    jac = a / _TAIL_T[None, :] ** 2 * _TAIL_W[None, :]
    return (integrand(z) * jac).sum(axis=1)


def _far_pair(x: np.ndarray, R: float, ta, tb) -> np.ndarray:
    """``int ta(z) tb(x - z) dz`` over ``{|z| > R} U {|x - z| > R}``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xc = x[:, None]
    f = lambda z: ta(z) * tb(xc - z)
    right = _half_line(R + np.minimum(0.0, x), 1, f)
    left = _half_line(-R + np.maximum(0.0, x), -1, f)
    return right + left


def _far_kernel(x: np.ndarray, R: float, tail: PowerTail, m: float) -> np.ndarray:
    """``int_{|z|>R} tail(z) |x - z|^(-m) dz`` for ``|x| < R``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xc = x[:, None]
    f = lambda z: tail(z) * np.abs(xc - z) ** (-m)
    R = np.full(x.shape, R)
    return _half_line(R, 1, f) + _half_line(-R, -1, f)


def apply_extended(op: FracOperator, u_ext: np.ndarray, grid: Grid, tail: Optional[PowerTail],
                   box_only: bool = True) -> np.ndarray:
    """Stencil apply to values ``u_ext`` given on the extended lattice.

    Returns the result on the box nodes (``box_only``) or on every node of the
    extended lattice.  Beyond the extended lattice the field is ``tail``.
    """
    Me, M = grid.M_ext, grid.M
    reach = M if box_only else Me
    K = Me + reach
    w = op.interior_weights(K)
    kern = np.concatenate([w[::-1], w[1:]])  # offsets -K..K, zero at the centre
    conv = fftconvolve(u_ext, kern, mode="full")
    # ext index e sits at conv index e + K
    idx = np.arange(Me - reach, Me + reach + 1)
    u = u_ext[idx]
    out = op.scale * (op.diagonal_weight * u - conv[idx + K]) + op.mass_shift * u
    if tail is not None:
        x = (idx - Me) * grid.spacing
        out -= 2.0 * op.cns * _far_kernel(x, grid.R_ext + 0.5 * grid.spacing, tail, 1 + 2 * op.s)
    return out


def frac_apply(op: FracOperator, f: Field) -> Field:
    """Apply ``(-Delta)^s + mass_shift`` to ``f`` at every box node.

    Lattice sums run over the extended lattice; beyond it the field's power tail
    is integrated against the kernel.
    """
    g = f.grid
    if g.n != 1:
        raise NotImplementedError("frac_apply is implemented for n = 1")
    if abs(g.spacing - op.h) > 1e-12 * op.h:
        raise ValueError("operator and field use different spacings")
    tail = f.far_tail  # raises for prescribed rules without a tail
    out = apply_extended(op, f.extended(), g, tail)
    return Field(out, g, Zero(), meta={"op": "frac_apply"})


# ---------------------------------------------------------------------------
# the fundamental solution


@dataclass(frozen=True, eq=False)
class LatticeGreen:
    """Lattice fundamental solution of ``(-Delta)^s_h + 1`` at offsets ``0..J``.

    ``values[j]`` is ``Gamma(j h)``; the kernel is even.  ``tail`` is the
    asymptotic model used beyond ``J h``.
    """

    s: float
    h: float
    values: np.ndarray
    tail: PowerTail
    mass: float

    @property
    def J(self) -> int:
        return self.values.size - 1

    def at(self, offsets) -> np.ndarray:
        """Gamma at integer offsets (any sign); far offsets use the power tail."""
        j = np.abs(np.asarray(offsets))
        out = np.empty(j.shape)
        near = j <= self.J
        out[near] = self.values[j[near]]
        if np.any(~near):
            out[~near] = self.tail(j[~near] * self.h)
        return out

    def __call__(self, x) -> np.ndarray:
        """Gamma at arbitrary points: linear interpolation of lattice values, tail beyond."""
        r = np.abs(np.asarray(x, dtype=float)) / self.h
        out = np.interp(r, np.arange(self.J + 1), self.values)
        far = r > self.J
        if np.any(far):
            out = np.where(far, self.tail(r * self.h), out)
        return out

    def symmetric(self, K: int) -> np.ndarray:
        """Kernel at offsets ``-K..K``."""
        return self.at(np.arange(-K, K + 1))


def _folded_weights(s: float, N: int) -> np.ndarray:
    """Stencil weights aliased onto a period of ``N`` nodes (index 0 unused).

    ``v[m] = sum_{k = m mod N, k != 0} w_|k|``; weights beyond ``N/2`` use the
    Taylor form of the hat integrals, summed with Hurwitz zeta functions.
    """
    a = 1.0 + 2.0 * s
    half = N // 2
    w = np.asarray(_weights(s, half))
    c2 = a * (a + 1)
    c4 = c2 * (a + 2) * (a + 3)
    c6 = c4 * (a + 4) * (a + 5)
    coefs = ((a, 1.0), (a + 2, c2 / 12), (a + 4, c4 / 360), (a + 6, c6 / 20160))
    m = np.arange(1, half + 1, dtype=float)

    def images(shift):
        return sum(c * N ** (-b) * zeta(b, shift) for b, c in coefs)

    v = np.zeros(N)
    fold = w[1:] + images(1.0 + m / N) + images(1.0 - m / N)
    v[1:half + 1] = fold
    v[half + 1:] = fold[:-1][::-1]
    return v


@lru_cache(maxsize=8)
def lattice_green(s: float, h: float, log2n: int = 20) -> LatticeGreen:
    """Compute the lattice fundamental solution by an FFT cosine transform.

    The stencil weights are summed up to ``N/2``; the symbol is normalised so
    that ``sigma(0) = 0``, which makes the total mass exactly one.  Periodic
    images are removed using the leading asymptotic amplitude.
    """
    N = 2**log2n
    op = FracOperator(1, s, h, 1.0)
    v = _folded_weights(s, N)
    ft = np.fft.rfft(v).real
    sigma = op.scale * (ft[0] - ft)
    sigma[0] = 0.0
    if np.any(sigma < -1e-12 * op.scale):
        raise ConvergenceError("stencil symbol is not nonnegative")
    per = np.fft.irfft(1.0 / (sigma + 1.0), n=N) / h
    mass = per.sum() * h
    if abs(mass - 1.0) > 1e-8 or not np.all(per[: N // 4] > 0):
        raise ConvergenceError("cosine-transform quadrature did not converge (mass or sign)")
    J = N // 4
    q1, q2 = 1 + 2 * s, 1 + 4 * s
    # leading amplitude of Gamma at infinity equals the kernel constant 2 c(1,s)
    A = 2.0 * cns_constant(1, s)
    P = N * h
    x = np.arange(J + 1) * h
    images = A * P ** (-q1) * (zeta(q1, 1 + x / P) + zeta(q1, 1 - x / P))
    vals = per[: J + 1] - images
    far = np.arange(J // 2, J + 1)
    tail = fit_power_tail(x[far], vals[far], (q1, q2))
    vals.setflags(write=False)
    return LatticeGreen(s, h, vals, tail, mass)


@lru_cache(maxsize=8)
def quadrature_green(s: float, h: float, refine: int = 4) -> LatticeGreen:
    """Gamma at spacing ``h`` sampled from the lattice solution at spacing ``h / refine``.

    The finer lattice brings the samples within ``O((h/refine)^2)`` of the
    continuum kernel.  The origin holds the cell average over ``[-h/2, h/2]``
    (trapezoid rule on the fine nodes), which is finite although Gamma is not.
    """
    if refine == 1:
        return lattice_green(s, h)
    if refine % 2:
        raise ValueError("refine must be 1 or even")
    fine = lattice_green(s, h / refine)
    vals = np.array(fine.values[::refine])
    half = refine // 2
    wts = np.ones(2 * half + 1)
    wts[[0, -1]] = 0.5
    seg = np.concatenate([fine.values[half:0:-1], fine.values[: half + 1]])
    vals[0] = np.dot(wts, seg) / refine
    vals.setflags(write=False)
    return LatticeGreen(s, h, vals, fine.tail, fine.mass)


def green_convolve_extended(lg: LatticeGreen, f_ext: np.ndarray, grid: Grid,
                            tail: Optional[PowerTail] = None) -> np.ndarray:
    """``h * sum_j Gamma(x_i - x_j) f_j`` at every node of the extended lattice.

    ``tail`` (if given) models ``f`` beyond the extended lattice; its
    contribution is integrated against the far field of Gamma.
    """
    Me = grid.M_ext
    kern = lg.symmetric(2 * Me)
    out = fftconvolve(f_ext, kern, mode="valid") * grid.spacing
    if tail is not None:
        for amp, q in tail.terms:
            out = out + amp * _far_source_basis(lg, grid.M_ext, grid.spacing, q, tail.parity, tail.center)
    return out


_BASIS_CACHE: dict = {}


def _far_source_basis(lg: LatticeGreen, Me: int, h: float, q: float, parity: int, center: float):
    """``int_{|z| > R} sgn |z - c|^(-q) Gamma(x - z) dz`` on the extended lattice (cached)."""
    # the lattice and quadrature kernels share (s, h); the origin value and tail tell them apart
    key = (lg.s, lg.h, float(lg.values[0]), lg.values.size, lg.tail.terms, Me, q, parity, center)
    if key not in _BASIS_CACHE:
        unit = PowerTail(((1.0, q),), parity=parity, center=center)
        xe = np.arange(-Me, Me + 1) * h
        x = xe[:, None]
        f = lambda z: unit(z) * lg(x - z)
        R = np.full(xe.shape, Me * h + 0.5 * h)
        val = _half_line(R, 1, f) + _half_line(-R, -1, f)
        val.setflags(write=False)
        if len(_BASIS_CACHE) > 64:
            _BASIS_CACHE.clear()
        _BASIS_CACHE[key] = val
    return _BASIS_CACHE[key]


def fundamental_solution(params: Params, grid: Grid) -> Field:
    """Gamma sampled on the grid nodes.

    The exterior rule is a power tail with leading exponent ``n + 2s`` and a
    correction term of exponent ``n + 4s``, fitted over ``[L, R_ext]``; exact
    lattice values are attached on the extended lattice.  The origin node holds
    the lattice value (a cell average of the integrable singularity) and is
    flagged in ``meta["singular_index"]``.
    """
    if grid.n == 2:
        from .groundstate import _spectral_green_2d
        return _spectral_green_2d(params, grid)
    lg = lattice_green(params.s, grid.spacing)
    ext = lg.at(np.arange(-grid.M_ext, grid.M_ext + 1))
    x = grid.ext_axis
    far = np.abs(x) >= grid.L
    pos = far & (x > 0)
    tail = fit_power_tail(x[pos], ext[pos], (params.decay, params.n + 4 * params.s))
    vals = ext[grid.M_ext - grid.M: grid.M_ext + grid.M + 1]
    return Field(vals.copy(), grid, tail, ext, meta={"singular_index": grid.M, "mass": lg.mass})


def convolve(f: Field, g: Field) -> Field:
    """Discrete convolution ``h * sum_j f_j g_{i-j}`` over the extended lattice.

    Contributions from beyond the extended lattice are estimated from the two
    power tails.  The construction is symmetric in ``f`` and ``g``.
    """
    if f.grid is not g.grid and (f.grid.shape != g.grid.shape or f.grid.spacing != g.grid.spacing):
        raise ValueError("fields live on incompatible grids")
    grid = f.grid
    if grid.n != 1:
        raise NotImplementedError("convolve is implemented for n = 1")
    F, Gv = f.extended(), g.extended()
    full = fftconvolve(F, Gv, mode="full") * grid.spacing
    Me, M = grid.M_ext, grid.M
    # full index of output offset k (-2Me..2Me) is k + 2Me
    idx = np.arange(-M, M + 1) + 2 * Me
    out = full[idx]
    tf, tg = f.far_tail, g.far_tail
    if tf is not None and tg is not None:
        out = out + _far_pair(grid.axis, grid.R_ext + 0.5 * grid.h, tf, tg)
    return Field(out, grid, Zero())


# ---------------------------------------------------------------------------
# serialisation


def field_to_json(f: Field, s: Optional[float] = None) -> str:
    """Self-describing JSON container ``{n, s, L, h, exterior_rule, values}``."""
    d = {
        "format": "fraconc-field-v1",
        "n": f.grid.n,
        "s": s,
        "L": f.grid.L,
        "h": f.grid.h,
        "eps": f.grid.eps,
        "exterior_rule": _rule_to_dict(f.exterior),
        "values": f.values.ravel().tolist(),
    }
    if f.extension is not None:
        d["extension"] = f.extension.tolist()
    if f.grid.domain is not None:
        d["domain"] = f.grid.domain.to_dict()
    return json.dumps(d)


def field_from_json(text: str) -> Field:
    d = json.loads(text)
    dom = d.get("domain")
    domain = Domain(dom["kind"], dom["radius"]) if dom else Domain("interval" if d["n"] == 1 else "ball")
    params_like = Params(n=d["n"], s=d["s"] if d["s"] is not None else 0.4, p=1.5, eps=d["eps"],
                         domain=domain) if d["n"] == 1 else None
    if params_like is not None:
        grid = build_grid(params_like, d["L"], d["h"])
    else:
        M = int(round(d["L"] / d["h"]))
        axis = np.arange(-M, M + 1) * d["h"]
        coords = np.meshgrid(axis, axis, indexing="ij")
        grid = Grid(2, d["L"], d["h"], axis, domain.contains(*(d["eps"] * c for c in coords)), d["eps"], domain)
    rule = _rule_from_dict(d["exterior_rule"])
    ext = np.asarray(d["extension"]) if "extension" in d else None
    values = np.asarray(d["values"], dtype=float).reshape(grid.shape)
    return Field(values, grid, rule, ext)
