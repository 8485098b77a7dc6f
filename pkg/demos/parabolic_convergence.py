"""Weak convergence of the reflected Euler chain on a parabolic Robin problem.

Runs the rotating-drift problem on the disk of radius 4 for a few step sizes
and prints the Monte Carlo estimate of u(0, 0, 0) with its error against the
known solution value. Increase M to shrink the confidence intervals.

    python3 demos/parabolic_convergence.py [M]
"""

import sys

from reflectwalk.cli import fit_slope
from reflectwalk.models import catalog
from reflectwalk.pde import solve_parabolic

M = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
entry = catalog("exp8_1")
exact = entry.exact["solution"]

print(f"exact u(0, 0, 0) = {exact}")
print(f"{'h':>8} {'estimate':>10} {'±95%':>8} {'error':>8} {'time [s]':>9}")
hs, errs = [], []
for h in (0.1, 0.05, 0.025):
    r = solve_parabolic(entry.problem, 0.0, (0.0, 0.0), 1.0, h, M, seed=1)
    err = abs(r.estimate - exact)
    hs.append(h)
    errs.append(err)
    print(f"{h:8.4f} {r.estimate:10.4f} {r.mc_error:8.4f} {err:8.4f} {r.wall_time:9.2f}")

slope, _ = fit_slope(hs, errs)
print(f"log-log slope of the error: {slope:.2f} (meaningless once errors are below the MC noise)")
