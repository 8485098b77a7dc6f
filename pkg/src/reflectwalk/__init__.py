"""Weak Euler and second-order schemes for reflected diffusions, with Monte Carlo
solvers for Robin, elliptic and Neumann-Poisson problems, ergodic averages and
samplers on bounded domains."""
