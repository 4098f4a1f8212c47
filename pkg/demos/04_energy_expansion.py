"""Energy of the corrected approximation u_bar against I(w) + H/2.

For each eps the residual I_eps(u_bar) - I(w) - H_eps/2, divided by
eps^(1+4s), should shrink.  The reduced energy H_eps is smallest in the middle
of the domain and largest near the boundary ring.
"""
from fraconc.energy import expansion_study, min_boundary_gap
from fraconc.green import Problem
from fraconc.groundstate import solve_ground_state
from fraconc.kernels import Params, build_grid

P = Params(1, 0.4, 2.0, 0.1)
L, h = 40.0, 0.05
gs = solve_ground_state(P, build_grid(P, L, h))

print(f"{'eps':>6} {'H_eps':>11} {'I_eps':>11} {'residual':>11} {'res/eps^2.6':>12} {'J21/J22':>9}")
for r in expansion_study(P, [0.2, 0.1, 0.05], L, h, ground=gs):
    print(f"{r.eps:>6} {r.Hcal:>11.4e} {r.I_eps:>11.6f} {r.residual:>11.3e} {r.eps_power:>12.4e} "
          f"{r.J21 / r.J22:>9.4f}")
print(f"I(w) = {gs.energy:.6f}")

gap = min_boundary_gap(Problem(P.with_eps(0.1), L, h, gs), 0.25)
print(f"\neps = 0.1: interior minimum of H {gap.interior_min:.4e} at xi = {gap.argmin}, "
      f"ring minimum {gap.boundary_min:.4e} at xi = {tuple(float(r) for r in gap.ring)}")
