"""The shrinking-step schedule behind the Neumann-Poisson solver.

With a constant step the mean of Z keeps drifting as the chain runs longer,
so the solver uses blocks of decreasing step size instead. This script prints
both behaviours for the Poisson problem on the disk of radius 2.

    python3 demos/poisson_schedule.py [M]
"""

import sys

from reflectwalk.models import catalog
from reflectwalk.pde import fixed_step_poisson_diagnostic, poisson_schedule, solve_poisson

M = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
entry = catalog("exp8_5")
d = entry.defaults
exact = entry.exact["solution_offset"]

sched = poisson_schedule(0.3, d["ell"], d["beta"], d["upsilon"], d["T"])
print(f"schedule for h=0.3: Lambda={sched.Lambda}, total steps={sched.total_steps}")
for b in sched.blocks:
    print(f"  j={b.j}: h_j={b.h_j:.4f} N_j={b.N_j} T_j={b.T_j:.4f}")

r = solve_poisson(entry.problem, d["x0"], sched, M, seed=1)
print(f"u(x0) - u_bar: {r.estimate:.4f} ± {r.mc_error:.4f} (exact {exact}, error {abs(r.estimate - exact):.4f})")

print("constant step h=0.2, mean of Z after N steps:")
for n, mean, ci in fixed_step_poisson_diagnostic(entry.problem, d["x0"], 0.2, [25, 50, 100, 200, 400], M, seed=1):
    print(f"  N={n:4d}: {mean:8.3f} ± {ci:.3f}")
