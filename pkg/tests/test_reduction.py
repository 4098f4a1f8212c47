import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fraconc.green import DomainError
from fraconc.reduction import (
    Reduction,
    assemble_and_verify,
    default_mu,
    minimize_reduced,
    newton_verify,
    projected_linear_solve,
    reduced_functional,
    rho,
    star_norm,
)


def test_mu_range_and_norm(grid):
    mu = default_mu(1, 0.4)
    assert 0.5 < mu < 1.8
    v = np.zeros(grid.shape)
    v[grid.M + 20] = 2.0
    assert star_norm(v, 0.0, mu, grid) == pytest.approx(2.0 * 2.0**mu)
    np.testing.assert_allclose(rho(grid, 0.0, mu) * (1 + np.abs(grid.axis)) ** mu, 1.0)
    with pytest.raises(ValueError):
        star_norm(v, 0.0, 0.5, grid)
    with pytest.raises(ValueError):
        star_norm(v, 0.0, mu)


def test_reduction_rejects_bad_mu(problems):
    with pytest.raises(ValueError):
        Reduction(problems(0.1), mu=2.0)


def test_linear_zero_data(reductions):
    red = reductions(0.1)
    sol = red.linear(0.0, np.zeros(red.problem.op.size))
    assert np.all(sol.psi.values == 0.0) and np.all(sol.c == 0.0)


def test_linear_kernel_direction(reductions):
    red = reductions(0.1)
    Z1 = red.problem.Z(0.0)[0].values[red.interior]
    sol = red.linear(0.0, Z1)
    assert sol.c[0] == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(sol.psi.values)) < 1e-10


def test_linear_solution_properties(reductions, rng):
    red = reductions(0.1)
    x = red.grid.axis[red.interior]
    g = rng.standard_normal(x.size) * (1 + np.abs(x)) ** (-red.mu)
    sol = projected_linear_solve(red, 0.0, g)
    assert sol.lin_residual < 1e-10
    Z1 = red.problem.Z(0.0)[0].values[red.interior]
    assert abs(sol.ortho_residual[0]) < 1e-12 * np.max(np.abs(sol.psi.values)) * np.sum(np.abs(Z1))


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=10, deadline=None)
def test_linear_is_linear(a, b):
    red = _shared_red()
    x = red.grid.axis[red.interior]
    g1, g2 = np.exp(-0.1 * x**2), np.sin(x) / (1 + x**2)
    s1, s2 = red.linear(0.0, g1), red.linear(0.0, g2)
    s = red.linear(0.0, a * g1 + b * g2)
    np.testing.assert_allclose(s.psi.values, a * s1.psi.values + b * s2.psi.values, atol=1e-11)
    np.testing.assert_allclose(s.c, a * s1.c + b * s2.c, atol=1e-11)


_RED = {}


def _shared_red():
    if "r" not in _RED:
        from fraconc.green import Problem
        from fraconc.kernels import Params
        _RED["r"] = Reduction(Problem(Params(1, 0.4, 2.0, 0.2), 40.0, 0.05))
    return _RED["r"]


def test_fixed_point_contracts(reductions):
    red = reductions(0.1)
    st_ = red.fixed_point(0.0)
    assert 0 <= st_.contraction_factor < 1
    assert st_.pde_residual < 1e-10
    assert st_.ortho_residual < 1e-12
    assert st_.iterations < 20
    # restart from the converged state: one step, same answer
    again = red.fixed_point(0.0, st_.Psi.values[red.interior])
    np.testing.assert_allclose(again.Psi.values, st_.Psi.values, atol=1e-12)


def test_reduced_functional_even(reductions):
    red = reductions(0.1)
    assert reduced_functional(red, 3.0) == pytest.approx(reduced_functional(red, -3.0), rel=1e-12)
    assert reduced_functional(red, 0.0) < reduced_functional(red, 3.0)


def test_off_centre_multiplier_nonzero(reductions):
    red = reductions(0.1)
    c_left, c_right = red.fixed_point(-4.0).c[0], red.fixed_point(4.0).c[0]
    assert abs(c_right) > 1e-6
    assert c_left == pytest.approx(-c_right, rel=1e-8)


def test_minimiser_at_centre(reductions):
    red = reductions(0.1)
    m = minimize_reduced(red, 0.25)
    assert m.xi_bar == 0.0
    assert np.max(np.abs(m.c)) < 1e-4 * np.max(np.abs(m.c_ring))
    assert m.minimizer_set_diameter == 0.0
    with pytest.raises(DomainError):
        minimize_reduced(red, 0.999)


def test_newton_independent_route(reductions):
    red = reductions(0.1)
    pr = red.problem
    I = red.interior
    rep = assemble_and_verify(red, 0.0)
    assert rep.newton_correction < 1e-10 and rep.positive
    # starting from u_bar alone, Newton must land on the assembled solution
    assembled = pr.ubar(0.0).values[I] + red.fixed_point(0.0).Psi.values[I]
    u, its, corr = newton_verify(pr, pr.ubar(0.0).values[I])
    assert its >= 2
    assert np.max(np.abs(u - assembled)) < 1e-10 * np.max(u)


def test_final_error_shrinks(reductions):
    errs = [assemble_and_verify(reductions(e), 0.0).error_vs_ground_state for e in (0.2, 0.1)]
    assert errs[1] < errs[0] / 2


def test_star_norm_of_ground_state(problems):
    pr = problems(0.1)
    g = pr.grid
    mu = 1.35
    w = pr.w(0.0)
    val = star_norm(w, 0.0, mu)
    assert np.isfinite(val)
    # mu < n + 2s: the weighted profile decays, so the box maximum bounds the whole line
    ext = (1 + np.abs(g.ext_axis)) ** mu * w.extended()
    assert ext.max() <= 1.05 * val
    assert star_norm(rho(g, 0.0, mu), 0.0, mu, g) == pytest.approx(1.0)


def test_error_terms(reductions):
    from fraconc.energy import loglog_slope
    from fraconc.reduction import error_terms
    sizes = []
    for eps in (0.2, 0.1, 0.05):
        red = reductions(eps)
        I = red.interior
        E, N = error_terms(red, 0.0, np.zeros(red.problem.op.size))
        assert np.all(N.values == 0.0) and E.values[I].max() <= 0
        sizes.append(star_norm(E, 0.0, red.mu))
        r = rho(red.grid, 0.0, red.mu)[I]
        for t in (1e-2, 1e-3):
            _, N = error_terms(red, 0.0, t * r)
            assert star_norm(N, 0.0, red.mu) / t**2 < 2.0
    assert loglog_slope([0.2, 0.1, 0.05], sizes) >= 1.5


def test_fixed_point_stable_under_perturbation(reductions):
    red = reductions(0.1)
    I = red.interior
    st_ = red.fixed_point(0.0)
    again = red.fixed_point(0.0, st_.Psi.values[I] + 1e-3 * rho(red.grid, 0.0, red.mu)[I])
    assert star_norm(again.Psi.values - st_.Psi.values, 0.0, red.mu, red.grid) < 10 * red.tol


@pytest.mark.parametrize("xi", [0.0, 3.0])
def test_ubar_derivative_follows_minus_z(problems, xi):
    pr = problems(0.1)
    I = pr.op.interior
    h = pr.grid.spacing
    du = (pr.ubar(xi + h).values[I] - pr.ubar(xi - h).values[I]) / (2 * h)
    Z = pr.Z(xi)[0].values[I]
    assert du @ Z / (np.linalg.norm(du) * np.linalg.norm(Z)) < -0.95
