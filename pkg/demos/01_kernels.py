"""The lattice fractional Laplacian and its fundamental solution.

Applies the discrete (-Delta)^s to a Gaussian, compares with the closed form,
then builds Gamma, the kernel of (-Delta)^s + 1, and looks at its mass and tail.
"""
import numpy as np
from scipy.special import gamma, hyp1f1

from fraconc.experiments import gamma_mass, gamma_slope
from fraconc.kernels import Field, FracOperator, Params, build_grid, frac_apply, fundamental_solution

s = 0.4
P = Params(1, s, 2.0, 0.1)

print("(-Delta)^s exp(-x^2/2): max error against the hypergeometric closed form")
for h in (0.1, 0.05, 0.025):
    g = build_grid(P, 20.0, h)
    f = Field(np.exp(-0.5 * g.axis**2), g)
    out = frac_apply(FracOperator(1, s, h, mass_shift=0.0), f).values
    exact = 2**s * gamma(0.5 + s) / gamma(0.5) * hyp1f1(0.5 + s, 0.5, -0.5 * g.axis**2)
    print(f"  h = {h:<6} error = {np.max(np.abs(out - exact)):.2e}")

g = build_grid(P, 40.0, 0.05)
G = fundamental_solution(P, g)
print(f"\nGamma(0) = {G.values[g.M]:.4f}; total mass with tail = {gamma_mass(G):.6f} (exact: 1)")
print(f"log-log slope of Gamma over [5, 50]: {gamma_slope(G):.3f} (leading order -(1+2s) = {-(1 + 2 * s):.1f})")
print("The window still feels the second tail term, which is why the fitted slope is flatter.")
