"""Acceptance runs at full size. Each test records one PASS/FAIL line.

Reference numbers (tabulated errors, confidence half-widths) are the
published values for the catalog problems; every comparison that involves
Monte Carlo noise uses ``sigma = sqrt(ours^2 + reference^2)`` with each
standard error taken as half of the reported 95% half-width.
"""

import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate
from scipy.linalg import expm

from reflectwalk.cli import fit_slope
from reflectwalk.ergodic import ErgodicAccumulator, accumulate_block, finalize, time_average, walk_blocks
from reflectwalk.geometry import Ball
from reflectwalk.models import catalog
from reflectwalk.montecarlo import McAccumulator, RngStream, bernoulli_pm1, mc_mean, merge_all, run_chunked
from reflectwalk.pde import poisson_schedule, solve_elliptic_decay, solve_parabolic, solve_poisson
from reflectwalk.sampling import sample_boundary
from reflectwalk.stepper import ChainState, run_second_order, step_chain, step_oblique, step_x

pytestmark = pytest.mark.slow


def within_3_sigma(ours, ours_ci, ref, ref_ci):
    sigma = math.hypot(ours_ci / 2.0, ref_ci / 2.0)
    return abs(ours - ref) <= 3.0 * sigma, sigma


# -- 1: parabolic Robin problem -----------------------------------------------------

def test_criterion_1_parabolic_exp8_1(verdict):
    entry = catalog("exp8_1")
    hs = [0.1, 0.05, 0.025, 0.0125]
    ref_err = [1.9445, 0.9917, 0.5125, 0.2592]
    ref_ci = [0.0187, 0.0184, 0.0187, 0.0187]
    errs, rows, ok = [], [], True
    for h, e_ref, c_ref in zip(hs, ref_err, ref_ci):
        r = solve_parabolic(entry.problem, 0.0, (0.0, 0.0), 1.0, h, 100_000, seed=1)
        err = abs(r.estimate - 34.1970)
        good, sigma = within_3_sigma(err, r.mc_error, e_ref, c_ref)
        ok &= good
        errs.append(err)
        rows.append(f"h={h}: |e|={err:.4f}±{r.mc_error:.4f} ref {e_ref} (3σ={3 * sigma:.3f})")
    slope, _ = fit_slope(hs, errs)
    ok &= slope is not None and 0.85 <= slope <= 1.15
    verdict(1, ok, "; ".join(rows) + f"; slope={slope:.3f}")
    assert ok


# -- 2: ergodic time averages in the domain ------------------------------------------

def test_criterion_2_time_average_exp8_2(verdict):
    entry = catalog("exp8_2")
    exact = entry.exact["phi_bar"]
    main = time_average(entry.problem, (0.0, 0.0), 2.0e4, 0.1, seed=1, blocks=1000)
    bias = abs(main.phi_hat - exact)
    ok_bias = 0.02 <= bias <= 0.09
    hs = [0.4, 0.25, 0.2, 0.1]
    errs = [abs(time_average(entry.problem, (0.0, 0.0), 1.0e5, h, seed=2, blocks=1000).phi_hat - exact)
            for h in hs]
    slope, se = fit_slope(hs, errs)
    ok_slope = slope is not None and 0.8 <= slope <= 1.2
    verdict(2, ok_bias and ok_slope,
            f"h=0.1,T=2e4: phi_hat={main.phi_hat:.4f}±{main.phi_err:.4f} |e|={bias:.4f} (need [0.02,0.09]); "
            f"T=1e5 errors {[round(e, 4) for e in errs]} slope={slope:.3f}±{se:.3f} (need [0.8,1.2])")
    assert ok_bias and ok_slope


# -- 3: boundary ergodic limits -------------------------------------------------------

def test_criterion_3_boundary_limits_exp8_3(verdict):
    entry = catalog("exp8_3")
    out = time_average(entry.problem, entry.defaults["x0"], 3.0e4, 0.05, seed=1, blocks=1000)
    e_kappa = abs(out.kappa_hat - 3.0)
    e_psi = abs(out.psi_prime_hat - 0.53438)
    ok = e_kappa <= 0.10 and e_psi <= 0.045
    verdict(3, ok, f"kappa={out.kappa_hat:.4f}±{out.kappa_err:.4f} (|e|={e_kappa:.4f}<=0.10), "
                   f"psi'={out.psi_prime_hat:.4f}±{out.psi_prime_err:.4f} (|e|={e_psi:.4f}<=0.045)")
    assert ok


# -- 4: elliptic problem with decay ---------------------------------------------------

def test_criterion_4_elliptic_exp8_4(verdict):
    entry = catalog("exp8_4")
    r = solve_elliptic_decay(entry.problem, entry.defaults["x0"], 4.0, 0.1, 1_000_000, seed=1)
    err = abs(r.estimate - 5.125)
    ok = 0.30 <= err <= 0.48
    verdict(4, ok, f"estimate={r.estimate:.4f}±{r.mc_error:.4f} |e|={err:.4f} (need [0.30,0.48])")
    assert ok


# -- 5: Neumann-Poisson problem with the shrinking-step schedule ----------------------

def test_criterion_5_poisson_exp8_5(verdict):
    entry = catalog("exp8_5")
    d = entry.defaults
    hs = [0.5, 0.4, 0.3, 0.2]
    ref_err = [1.155, 0.812, 0.568, 0.372]
    ref_ci = [0.111, 0.035, 0.035, 0.035]
    errs, rows, ok = [], [], True
    for h, e_ref, c_ref in zip(hs, ref_err, ref_ci):
        sched = poisson_schedule(h, d["ell"], d["beta"], d["upsilon"], d["T"])
        r = solve_poisson(entry.problem, d["x0"], sched, 100_000, seed=1)
        err = abs(r.estimate - 2.626)
        good, sigma = within_3_sigma(err, r.mc_error, e_ref, c_ref)
        ok &= good
        errs.append(err)
        rows.append(f"h={h}: |e|={err:.3f}±{r.mc_error:.3f} ref {e_ref} ({abs(err - e_ref) / sigma:.1f}σ)")
    slope, _ = fit_slope(hs, errs)
    ok &= slope is not None and 0.8 <= slope <= 1.3
    verdict(5, ok, "; ".join(rows) + f"; slope={slope:.3f}")
    assert ok


# -- 6: second-order scheme, self-convergence -----------------------------------------

# phi = (|x|^2 - 16)^2 / 256 is smooth with zero normal derivative on |x| = 4.
# Each level is estimated as F_h + E[phi(X_h) - phi(Y_h)] where Y_h is the same
# scheme without boundary driven by the same variables and F_h its exact mean:
# the three-point variables share the first five moments of N(0, 1), so a
# quartic of the linear free-space chain has the Gaussian expectation.

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def quartic_mean(m, S):
    e2 = np.trace(S) + m @ m
    e4 = e2 * e2 + 2.0 * np.trace(S @ S) + 4.0 * m @ S @ m
    return (e4 - 32.0 * e2 + 256.0) / 256.0


def free_scheme_mean(x0, T, h, a):
    P = np.eye(2) + h * ROT + 0.5 * h * h * ROT @ ROT
    Q = math.sqrt(h) * np.eye(2) + 0.5 * h**1.5 * ROT
    m, S = np.asarray(x0, dtype=float), np.zeros((2, 2))
    for _ in range(int(round(T / h))):
        m, S = P @ m, P @ S @ P.T + Q @ a @ Q.T
    return quartic_mean(m, S)


def quartic(x):
    return (np.sum(x * x, axis=1) - 16.0) ** 2 / 256.0


def test_criterion_6_second_order_self_convergence(verdict):
    p = catalog("exp8_1").problem
    free = dataclasses.replace(p, domain=Ball(1.0e6, (0.0, 0.0)))
    a = p.diffusion_matrix(0.0, np.zeros((1, 2)))[0]
    x0, T, M = np.zeros(2), 1.0, 8_000_000
    levels = {}
    for h in (0.25, 0.125, 0.0625):
        def task(idx):
            X, _ = run_second_order(p, 0.0, np.broadcast_to(x0, (idx.size, 2)), T, h, RngStream(7, idx))
            Y, _ = run_second_order(free, 0.0, np.broadcast_to(x0, (idx.size, 2)), T, h, RngStream(7, idx))
            return McAccumulator.from_samples(quartic(X) - quartic(Y))

        mean, _, ci = mc_mean(merge_all(run_chunked(task, M)))
        levels[h] = (mean + free_scheme_mean(x0, T, h, a), ci)
    (e1, c1), (e2, c2), (e3, c3) = (levels[h] for h in (0.25, 0.125, 0.0625))
    d1, d2 = e1 - e2, e2 - e3
    ratio = d1 / d2
    mc1, mc2 = math.hypot(c1, c2), math.hypot(c2, c3)
    ok = 3.0 <= ratio <= 5.0 and mc1 < abs(d1) / 3 and mc2 < abs(d2) / 3
    verdict(6, ok, f"E_h={[round(float(levels[h][0]), 6) for h in levels]}, differences {d1:.6f}±{mc1:.6f}, "
                   f"{d2:.6f}±{mc2:.6f}, ratio={ratio:.3f} (need [3,5] with MC error < difference/3)")
    assert ok


# -- 7: oblique stepper with the normal field --------------------------------------------

def test_criterion_7_oblique_reduction(verdict):
    identical = True
    for name, h, steps in (("exp8_2", 0.1, 200), ("exp8_4", 0.1, 40), ("exp8_1", 0.05, 20)):
        entry = catalog(name)
        p = entry.problem
        s1 = ChainState.start(0.0, entry.defaults["x0"], 1000)
        s2 = s1.copy()
        stream = RngStream(11, np.arange(1000))
        for _ in range(steps):
            xi = bernoulli_pm1(stream, p.d)
            s1, _ = step_chain(p, s1, h, xi)
            s2, _ = step_oblique(p, p.domain.inward_normal, s2, h, xi)
            identical &= np.array_equal(s1.X, s2.X)
    verdict(7, identical, "1000 trajectories each on exp8_2, exp8_4, exp8_1: X paths bit-identical")
    assert identical


# -- 8: boundary sampling ------------------------------------------------------------------

def test_criterion_8_sampling(verdict):
    num = integrate.quad(lambda th: math.cos(th) * math.exp(math.cos(th)), 0, 2 * math.pi)[0]
    den = integrate.quad(lambda th: math.exp(math.cos(th)), 0, 2 * math.pi)[0]
    oracle = num / den
    vm = sample_boundary(lambda x: np.broadcast_to(np.array([1.0, 0.0]), x.shape), Ball(1.0), math.sqrt(2.0),
                         0.01, 1.0e4, seed=1)
    vm_mean = vm.weighted_mean(lambda z: z[:, 0])
    fisher = catalog("fisher3d")
    grad = lambda x: fisher.problem.b(0.0, x)  # sigma = sqrt(2): drift equals grad log rho
    fs = sample_boundary(grad, fisher.problem.domain, math.sqrt(2.0), 0.025, 3.0e4, seed=1,
                         x0=fisher.defaults["x0"])
    f_mean = fs.weighted_mean(lambda z: np.sum(z, axis=1))
    ok = abs(vm_mean - oracle) <= 0.01 and abs(f_mean - 0.53438) <= 0.02
    verdict(8, ok, f"von Mises cos mean {vm_mean:.4f} vs {oracle:.4f} (|e|={abs(vm_mean - oracle):.4f}<=0.01); "
                   f"Fisher psi' {f_mean:.4f} vs 0.53438 (|e|={abs(f_mean - 0.53438):.4f}<=0.02)")
    assert ok


# -- 9: invariant suites on 10^5-step runs ----------------------------------------------------

def _fuzz_confinement_and_symmetry():
    failures = []
    for name, h, x0 in (("exp8_1", 0.1, (0.0, 0.0)), ("exp8_2", 0.1, (0.0, 0.0)), ("exp8_3", 0.05, (-0.5,) * 3),
                        ("exp8_4", 0.1, (1.0, 2.0, 0.5)), ("von_mises(1)", 0.05, (0.0, 0.0))):
        p = catalog(name).problem
        stream = RngStream(3, np.arange(100))
        X = np.broadcast_to(np.asarray(x0), (100, p.d)).copy()
        reach = p.default_reach(h)
        for k in range(1000):
            X, ev = step_x(p, k * h, X, h, bernoulli_pm1(stream, p.d), reach)
            if np.any(p.domain.signed_distance(X) < -1e-10):
                failures.append(f"{name}: left the domain")
                break
            if ev.any_reflected:
                c = ev.contact
                single = ev.bounces == 0
                if single and np.max(np.abs(np.linalg.norm(X[ev.index] - c.x_pi, axis=1) - c.r)) > 1e-10:
                    failures.append(f"{name}: mirror distance differs from r")
                    break
    return failures


def _equivariance():
    p = catalog("exp8_2").problem
    psi = lambda z: z[:, 0] + z[:, 1] ** 2
    phi = lambda x: np.sum(x * x, axis=1)
    base = time_average(p, (0.0, 0.0), 1.0e4, 0.1, 5, blocks=100, phi=phi, psi=psi)
    scaled = time_average(p, (0.0, 0.0), 1.0e4, 0.1, 5, blocks=100, phi=lambda x: phi(x) + 2.5,
                          psi=lambda z: -3.0 * psi(z))
    return (abs(scaled.phi_hat - base.phi_hat - 2.5) <= 1e-12
            and abs(scaled.psi_hat + 3.0 * base.psi_hat) <= 1e-12 * abs(base.psi_hat)
            and abs(scaled.psi_prime_hat + 3.0 * base.psi_prime_hat) <= 1e-12 * abs(base.psi_prime_hat)
            and 0.0 <= base.phi_hat <= 4.0)


def _merge_determinism():
    p = catalog("exp8_2").problem
    hist_blocks = list(walk_blocks(p, (0.0, 0.0), 0.1, [25_000] * 4, seed=9))
    phi, one = (lambda x: x[:, 0]), (lambda z: np.ones(z.shape[0]))
    runs = []
    for _ in range(2):
        acc = ErgodicAccumulator(h=0.1)
        for hist, z, r in hist_blocks:
            accumulate_block(acc, hist, z, r, phi, one, one)
            acc.snapshot()
        runs.append(finalize(acc))
    values = np.concatenate([h[:, 0] for h, _, _ in hist_blocks])
    parts = [McAccumulator.from_samples(v) for v in np.array_split(values, 7)]
    whole = McAccumulator.from_samples(values)
    merged = merge_all(parts)
    return (runs[0] == runs[1] and merged.count == whole.count
            and abs(merged.sum - whole.sum) <= 1e-12 * np.sum(np.abs(values)))


def _worker_reproducibility():
    p = catalog("exp8_1").problem
    results = [solve_parabolic(p, 0.0, (0.0, 0.0), 1.0, 0.1, 10_000, seed=3, workers=w, chunk_size=1000)
               for w in (1, 4, 16)]
    return all((r.estimate, r.variance) == (results[0].estimate, results[0].variance) for r in results)


def test_criterion_9_invariant_suites(verdict):
    confinement = _fuzz_confinement_and_symmetry()
    checks = {"confinement+reflection symmetry": not confinement, "estimator equivariance": _equivariance(),
              "merge determinism": _merge_determinism(), "worker bit-reproducibility": _worker_reproducibility()}
    ok = all(checks.values())
    verdict(9, ok, ", ".join(f"{k}={'ok' if v else 'FAILED'}" for k, v in checks.items())
            + (f" ({'; '.join(confinement)})" if confinement else ""))
    assert ok
