"""The whole-line ground state w of (-Delta)^s w + w = w^2.

Solves by Petviashvili iteration, checks the energy identity and the
convolution identity w = Gamma * w^p, and fits the algebraic decay of w and Z.
"""
import numpy as np

from fraconc.groundstate import decay_fit, gram, power_tail_of, solve_ground_state, whole_integral
from fraconc.kernels import Params, build_grid, convolve, fundamental_solution

P = Params(1, 0.4, 2.0, 0.1)
g = build_grid(P, 40.0, 0.05)
gs = solve_ground_state(P, g)
print(f"w(0) = {gs.w.values[g.M]:.6f}, residual = {gs.residual:.2e}")
wp1 = whole_integral(gs.w.extension ** 3, g, power_tail_of(gs.w.exterior, 3.0))
print(f"energy I(w) = {gs.energy:.6f}; (1/2 - 1/3) int w^3 = {wp1 / 6:.6f}")

conv = convolve(fundamental_solution(P, g), gs.translated_power(P.p)).values
print(f"||w - Gamma * w^p|| / ||w|| = {np.max(np.abs(conv - gs.w.values)) / gs.w.values.max():.2e}")

print(f"decay exponent of w over [8, 30]: {decay_fit(gs.w, (8.0, 30.0)):.3f} (theory 1.8)")
Z = gs.derivative_fields()
print(f"decay exponent of |Z| over [8, 30]: {decay_fit(Z[0], (8.0, 30.0), absolute=True):.3f} (theory 2.8)")
print(f"int Z^2 = {gram(Z)[0, 0]:.6f} (the constant alpha = {gs.alpha:.6f})")
