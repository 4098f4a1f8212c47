import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import gamma as G, hyp1f1

from fraconc.kernels import (
    Domain,
    Field,
    FracOperator,
    Params,
    PowerTail,
    Prescribed,
    UnsupportedExteriorError,
    apply_extended,
    build_grid,
    cns_constant,
    convolve,
    field_from_json,
    field_to_json,
    fit_power_tail,
    frac_apply,
    fundamental_solution,
    lattice_green,
    quadrature_green,
)

S = 0.4


def gaussian_oracle(x, s):
    """(-Delta)^s exp(-x^2/2) on the line."""
    return 2**s * G(0.5 + s) / G(0.5) * hyp1f1(0.5 + s, 0.5, -0.5 * x**2)


def lorentz_oracle(x, s):
    """(-Delta)^s 1/(1+x^2): Fourier transform pi e^{-|k|}."""
    a = 1 + 2 * s
    return G(a) * np.cos(a * np.arctan(np.abs(x))) / (1 + x**2) ** (a / 2)


def continuum_gamma(x, s):
    v, _ = quad(lambda k: 1 / (1 + k ** (2 * s)), 0, np.inf, weight="cos", wvar=x, limit=400)
    return v / np.pi


def _grid(h, L=20.0):
    return build_grid(Params(1, S, 2.0, 0.1), L, h)


# -- constants ---------------------------------------------------------------


def test_cns_half_laplacian():
    # s = 1/2, n = 1: principal-value constant 1/pi, so c = 1/(2 pi)
    assert cns_constant(1, 0.5) == pytest.approx(1 / (2 * np.pi), rel=1e-14)


def test_cns_two_dimensions_half():
    # n = 2, s = 1/2: principal-value constant 1/(2 pi)
    assert cns_constant(2, 0.5) == pytest.approx(1 / (4 * np.pi), rel=1e-14)


@pytest.mark.parametrize("s", [0.0, 1.0, -0.2])
def test_cns_rejects_bad_order(s):
    with pytest.raises(ValueError):
        cns_constant(1, s)


# -- operator accuracy against closed forms ----------------------------------


def _gauss_error(h, s=S):
    g = _grid(h)
    f = Field(np.exp(-0.5 * g.axis**2), g)
    out = frac_apply(FracOperator(1, s, h, 0.0), f).values
    sel = np.abs(g.axis) <= 5
    return np.max(np.abs(out[sel] - gaussian_oracle(g.axis[sel], s)))


def test_gaussian_second_order():
    e1, e2 = _gauss_error(0.1), _gauss_error(0.05)
    assert e2 < 1e-3
    assert e1 / e2 > 3.5  # O(h^2)


@pytest.mark.parametrize("s", [0.15, 0.3, 0.45])
def test_gaussian_other_orders(s):
    assert _gauss_error(0.05, s) < 2e-3


def test_power_tail_exterior_is_used():
    # 1/(1+x^2) on [-20, 20] with its exact asymptotic series as exterior rule
    g = _grid(0.05)
    tail = PowerTail(((1.0, 2.0), (-1.0, 4.0), (1.0, 6.0), (-1.0, 8.0)))
    f = Field(1 / (1 + g.axis**2), g, tail)
    out = frac_apply(FracOperator(1, S, 0.05, 0.0), f).values
    ref = lorentz_oracle(g.axis, S)
    assert np.max(np.abs(out - ref)[np.abs(g.axis) <= 10]) < 2e-3  # peak: O(h^2) error
    far = (np.abs(g.axis) >= 5) & (np.abs(g.axis) <= 19)
    err = np.max(np.abs(out - ref)[far])
    assert err < 2e-6
    # dropping the tail leaves the exterior mass unaccounted for
    bare = frac_apply(FracOperator(1, S, 0.05, 0.0), Field(f.values, g)).values
    assert np.max(np.abs(bare - ref)[far]) > 50 * err


def test_mass_shift_adds_identity():
    g = _grid(0.1)
    f = Field(np.exp(-(g.axis**2)), g)
    a = frac_apply(FracOperator(1, S, 0.1, 0.0), f).values
    b = frac_apply(FracOperator(1, S, 0.1, 1.0), f).values
    np.testing.assert_allclose(b - a, f.values, atol=1e-13)
    with pytest.raises(ValueError):
        FracOperator(1, S, 0.1, 2.5)


def test_symbol_matches_continuum_at_small_theta():
    op = FracOperator(1, S, 0.05, 0.0)
    th = np.array([0.01, 0.05])
    np.testing.assert_allclose(op.symbol(th), (th / 0.05) ** (2 * S), rtol=2e-3)


def test_prescribed_without_tail_raises():
    g = _grid(0.1)
    f = Field(np.zeros(g.shape), g, Prescribed(func=lambda x: np.ones_like(x)))
    with pytest.raises(UnsupportedExteriorError):
        frac_apply(FracOperator(1, S, 0.1), f)


def test_spacing_mismatch_raises():
    g = _grid(0.1)
    with pytest.raises(ValueError):
        frac_apply(FracOperator(1, S, 0.05), Field(np.zeros(g.shape), g))


def test_operator_rejects_two_dimensions():
    with pytest.raises(NotImplementedError):
        FracOperator(2, S, 0.1)


# -- fundamental solution ----------------------------------------------------


def test_lattice_green_inverts_stencil(grid):
    lg = lattice_green(S, grid.spacing)
    G_f = fundamental_solution(Params(1, S, 2.0, 0.1), grid)
    out = apply_extended(FracOperator(1, S, grid.spacing), G_f.extension, grid, G_f.exterior)
    delta = np.zeros(grid.shape)
    delta[grid.M] = 1 / grid.spacing
    assert np.max(np.abs(out - delta)) < 1e-6 / grid.spacing
    assert lg.mass == pytest.approx(1.0, abs=1e-10)


def test_gamma_positive_even(grid):
    G_f = fundamental_solution(Params(1, S, 2.0, 0.1), grid)
    assert np.all(G_f.values > 0)
    np.testing.assert_array_equal(G_f.values, G_f.values[::-1])
    assert np.all(np.diff(G_f.values[grid.M:]) < 0)


def test_quadrature_kernel_close_to_continuum():
    qg = quadrature_green(S, 0.05)
    for x in (2.0, 5.0, 10.0):
        ref = continuum_gamma(x, S)
        assert qg(x) == pytest.approx(ref, rel=2e-4)


def test_gamma_tail_leading_amplitude():
    # Gamma ~ 2 c(1,s) |x|^(-1-2s) at infinity
    lg = lattice_green(S, 0.05)
    assert lg.tail.terms[0][0] == pytest.approx(2 * cns_constant(1, S), rel=2e-2)
    assert lg.tail.terms[0][1] == pytest.approx(1 + 2 * S)


# -- convolution and tails ---------------------------------------------------


def test_convolution_symmetric(ground, grid):
    G_f = fundamental_solution(Params(1, S, 2.0, 0.1), grid)
    wp = ground.translated_power(2.0)
    a = convolve(G_f, wp).values
    b = convolve(wp, G_f).values
    assert np.max(np.abs(a - b)) < 1e-14


def test_convolution_of_gaussians():
    g = _grid(0.05)
    f = Field(np.exp(-0.5 * g.axis**2), g)
    out = convolve(f, f).values
    ref = np.sqrt(np.pi) * np.exp(-0.25 * g.axis**2)
    assert np.max(np.abs(out - ref)) < 1e-12


@given(st.floats(0.5, 5.0), st.floats(-3, 3), st.floats(1.2, 4.0), st.floats(-10, 10),
       st.sampled_from([1, -1]))
def test_power_tail_parity_and_shift(a, b, q, c, parity):
    t = PowerTail(((a, q), (b, q + 1)), parity=parity, center=c)
    d = np.array([0.7, 3.0, 11.0])
    # the two terms may cancel, so rounding is measured against their size
    tol = 1e-13 * (abs(a) * d ** -q + abs(b) * d ** -(q + 1))
    assert np.all(np.abs(t(c + d) - parity * t(c - d)) <= tol)
    assert np.all(np.abs(t.shifted(2.0)(c + 2.0 + d) - t(c + d)) <= tol)


@given(st.floats(-5, 5).filter(lambda v: abs(v) > 1e-3), st.floats(-5, 5))
@settings(max_examples=30)
def test_fit_power_tail_recovers_terms(a1, a2):
    x = np.linspace(10, 100, 50)
    v = a1 * x**-1.8 + a2 * x**-2.6
    t = fit_power_tail(x, v, (1.8, 2.6))
    assert t.terms[0][0] == pytest.approx(a1, rel=1e-8, abs=1e-10)
    assert t.terms[1][0] == pytest.approx(a2, rel=1e-8, abs=1e-8)


@pytest.mark.parametrize("q", [1.0, 0.5])
def test_power_tail_rejects_non_integrable(q):
    with pytest.raises(ValueError):
        PowerTail(((1.0, q),))


def test_field_shape_checked():
    g = _grid(0.1)
    with pytest.raises(ValueError):
        Field(np.zeros(5), g)


def test_field_json_roundtrip_exact(grid):
    G_f = fundamental_solution(Params(1, S, 2.0, 0.1), grid)
    back = field_from_json(field_to_json(G_f, S))
    np.testing.assert_array_equal(back.values, G_f.values)
    np.testing.assert_array_equal(back.extension, G_f.extension)
    assert back.exterior == G_f.exterior


# -- problem data --------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(n=3), dict(s=0.6), dict(p=1.0), dict(p=10.0), dict(eps=0.0)])
def test_params_validation(kw):
    base = dict(n=1, s=0.4, p=2.0, eps=0.1)
    base.update(kw)
    with pytest.raises(ValueError):
        Params(**base)


def test_grid_validation():
    P = Params()
    with pytest.raises(ValueError):
        build_grid(P, 1.0, 0.3)
    with pytest.raises(ValueError):
        build_grid(P, 1.0, -0.1)
    with pytest.raises(ValueError):
        Domain("square", 1.0)


def test_grid_mask_counts_interior_nodes():
    g = build_grid(Params(eps=0.1), 40.0, 0.05)
    # |x| < 10 strictly: nodes -9.95..9.95
    assert g.mask.sum() == 399
    assert g.index_of(0.0) == g.M
    with pytest.raises(ValueError):
        g.index_of(0.025)


def test_grid_layout_examples():
    g = build_grid(Params(eps=0.1), 10.0, 0.1)
    assert g.shape == (201,) and g.axis[100] == 0.0
    g2 = build_grid(Params(2, 0.4, 2.0, 0.25, Domain("ball")), 16.0, 0.25)
    X, Y = g2.coords
    np.testing.assert_array_equal(g2.mask, X**2 + Y**2 < 16.0)


@pytest.mark.parametrize("s", np.round(np.arange(0.1, 0.95, 0.1), 2))
def test_cns_positive(s):
    assert cns_constant(1, s) > 0 and cns_constant(2, s) > 0


def test_frac_apply_zero_and_even():
    g = _grid(0.05)
    op = FracOperator(1, S, 0.05)
    assert np.all(frac_apply(op, Field(np.zeros(g.shape), g)).values == 0.0)
    r = frac_apply(op, Field(np.exp(-g.axis**2) * (1 + g.axis**2), g)).values
    assert np.max(np.abs(r - r[::-1])) < 1e-13 * np.max(np.abs(r))


def test_convolve_with_discrete_delta():
    g = _grid(0.05)
    f = Field(np.exp(-0.5 * g.axis**2), g)
    d = np.zeros(g.shape)
    d[g.M] = 1 / g.spacing
    np.testing.assert_allclose(convolve(f, Field(d, g)).values, f.values, atol=1e-14)


def test_convolve_tail_is_the_slower_one():
    from fraconc.groundstate import decay_fit
    g = build_grid(Params(eps=0.1), 40.0, 0.05)
    x = g.axis
    a, b = 2.8, 1.8
    fa = Field((1 + x * x) ** (-a / 2), g, PowerTail.single(1.0, a))
    fb = Field((1 + x * x) ** (-b / 2), g, PowerTail.single(1.0, b))
    assert decay_fit(convolve(fa, fb), (8.0, 30.0)) == pytest.approx(min(a, b), abs=0.15)
