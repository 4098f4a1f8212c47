"""Dirichlet solves on the stretched interval, the Robin function and the barrier.

Omega_eps = (-1/eps, 1/eps).  The regular part H of the Green function decays
like d^-(1+4s) in the distance d of the source to the boundary; the explicit
barrier beta stays within a bounded factor of H.
"""
import numpy as np

from fraconc.energy import loglog_slope
from fraconc.green import Problem, barrier_beta, robin, ubar_decomposition
from fraconc.groundstate import solve_ground_state
from fraconc.kernels import Params, build_grid

P = Params(1, 0.4, 2.0, 0.1)
L, h = 40.0, 0.05
gs = solve_ground_state(P, build_grid(P, L, h))

print("Robin function at the centre, H(0, 0), against the distance d = 1/eps")
ds, Hs = [5.0, 8.0, 12.0, 18.0], []
for d in ds:
    pr = Problem(P.with_eps(1 / d), L, h, gs)
    Hs.append(robin(pr.op, 0.0).H.values[pr.grid.M])
    print(f"  d = {d:>4}: H = {Hs[-1]:.4e}")
print(f"  fitted slope {loglog_slope(ds, Hs):.3f} (theory -(1+4s) = -2.6)")

pr = Problem(P.with_eps(0.05), L, h, gs)
I = pr.op.interior
print("\nBarrier beta against H inside Omega_eps at eps = 0.05")
for xi in (0.0, 5.0, 10.0, 15.0):
    ratio = barrier_beta(xi, pr.grid, pr.quadrature_kernel).values[I] / pr.robin_cache.column(xi)
    print(f"  xi = {xi:>4}: beta/H in [{ratio.min():.3f}, {ratio.max():.3f}]")

print("\nu_bar = w - Lambda - Pi, three independent routes")
for eps in (0.2, 0.1):
    print(f"  eps = {eps}: residual {ubar_decomposition(Problem(P.with_eps(eps), L, h, gs), 0.0):.2e}")
