"""Sampling the boundary trace of a density on the unit disk.

The target is rho(x) proportional to exp(x1) on the unit disk. Its restriction
to the circle is the von Mises law with concentration 1, so the weighted mean
of cos(theta) over the reflection points should approach I1(1)/I0(1).

    python3 demos/boundary_sampling.py [T]
"""

import math
import sys

import numpy as np
from scipy.special import iv

from reflectwalk.geometry import Ball
from reflectwalk.sampling import sample_boundary, sample_interior

T = float(sys.argv[1]) if len(sys.argv) > 1 else 2000.0
grad_log_rho = lambda x: np.broadcast_to(np.array([1.0, 0.0]), x.shape)

for h in (0.05, 0.02):
    s = sample_boundary(grad_log_rho, Ball(1.0), math.sqrt(2.0), h, T, seed=3)
    est = s.weighted_mean(lambda z: z[:, 0])
    print(f"h={h}: {len(s)} contacts, mean cos = {est:.4f}, boundary mass estimate {s.mass():.3f}")
print(f"quadrature value I1(1)/I0(1) = {iv(1, 1) / iv(0, 1):.4f}")

x = sample_interior(grad_log_rho, Ball(1.0), math.sqrt(2.0), 0.02, 50_000, seed=3)
# integrating r^(k+1) I_k(r) over the radius gives E[x1] = I2(1)/I1(1)
print(f"interior samples: mean x1 = {x[:, 0].mean():.4f} (exact {iv(2, 1) / iv(1, 1):.4f})")
