"""Batch command-line front end.

Every command prints one JSON document (or writes it to ``--output``). A
config file (TOML or JSON, flat keys) supplies defaults; command-line flags
win. Exit status is 0 on success, 2 for invalid input and 1 for failures
inside a solver; errors are reported as JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from . import ergodic, pde
from .errors import ConfigError, ReflectWalkError, UsageError
from .models import catalog, catalog_names
from .sampling import sample_boundary, sample_interior

COMMANDS = ("solve-parabolic", "solve-elliptic", "solve-poisson", "ergodic", "ensemble", "sample",
            "convergence-study")

# key -> (type, check); ``check`` is "pos", "nonneg" or None
_KEYS = {
    "problem": (str, None),
    "h": (float, "pos"),
    "M": (int, "pos"),
    "T": (float, "pos"),
    "t0": (float, None),
    "x0": (list, None),
    "seed": (int, "nonneg"),
    "workers": (int, "pos"),
    "blocks": (int, "pos"),
    "block_length": (float, "pos"),
    "ell": (float, "pos"),
    "beta": (float, "pos"),
    "upsilon": (float, "pos"),
    "output": (str, None),
    "csv": (str, None),
    "solver": (str, None),
    "n": (int, "pos"),
    "burn_in": (int, "nonneg"),
    "boundary": (bool, None),
}

_SOLVERS = ("parabolic", "elliptic", "poisson", "ergodic", "ensemble")


def _parser():
    p = argparse.ArgumentParser(prog="reflectwalk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML or JSON file with default values")
        s.add_argument("--problem", help=f"catalog problem: {', '.join(catalog_names())}")
        s.add_argument("--h", help="step size" + (" list, comma separated" if name == "convergence-study" else ""))
        s.add_argument("--M", help="number of trajectories")
        s.add_argument("--T", help="final time")
        s.add_argument("--t0", help="initial time")
        s.add_argument("--x0", help="starting point, comma separated")
        s.add_argument("--seed", help="64-bit master seed")
        s.add_argument("--workers", help="worker threads (also read from REFLECTWALK_WORKERS)")
        s.add_argument("--blocks", help="number of blocks L for time averaging")
        s.add_argument("--block-length", dest="block_length", help="block length T' for time averaging")
        s.add_argument("--ell", help="schedule exponent of the block length")
        s.add_argument("--beta", help="schedule exponent of the step size")
        s.add_argument("--upsilon", help="schedule block length scale")
        s.add_argument("--output", help="write the result here instead of stdout")
        if name == "convergence-study":
            s.add_argument("--csv", help="CSV table path (default convergence.csv)")
            s.add_argument("--solver", choices=_SOLVERS, help="override the solver picked from the problem")
        if name == "sample":
            s.add_argument("--n", help="number of interior samples")
            s.add_argument("--burn-in", dest="burn_in", help="burn-in steps (default 10/h)")
            s.add_argument("--boundary", action="store_true", default=None,
                           help="emit weighted boundary samples over [0, T] instead")
    return p


def _load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}", key="config") from None
    try:
        if path.suffix == ".json":
            data = json.loads(text)
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            data = tomllib.loads(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}", key="config") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a table of keys", key="config")
    return data


def _coerce(key, value, command):
    if key not in _KEYS:
        raise ConfigError(f"unknown key {key!r}", key=key)
    kind, check = _KEYS[key]
    try:
        if key == "h" and command == "convergence-study":
            vals = value if isinstance(value, (list, tuple)) else str(value).split(",")
            out = [float(v) for v in vals]
            if not out:
                raise ValueError
            for v in out:
                _check_value(key, v, check)
            return out
        if kind is list:
            vals = value if isinstance(value, (list, tuple)) else str(value).split(",")
            return [float(v) for v in vals]
        if kind is bool:
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes")
            return bool(value)
        if kind is int:
            f = float(value)
            if f != int(f):
                raise ValueError
            value = int(f)
        else:
            value = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key!r}: {value!r}", key=key) from None
    _check_value(key, value, check)
    return value


def _check_value(key, value, check):
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{key!r} must be finite, got {value}", key=key)
    if check == "pos" and not value > 0:
        raise ConfigError(f"{key!r} must be positive, got {value}", key=key)
    if check == "nonneg" and value < 0:
        raise ConfigError(f"{key!r} must be non-negative, got {value}", key=key)


def resolve_config(args):
    """Merge config file values with flags (flags win) and validate every key."""
    raw = {}
    if args.config:
        raw.update(_load_config(args.config))
    cmd = raw.pop("command", None)
    if cmd is not None and cmd != args.command:
        raise ConfigError(f"config is for command {cmd!r}, not {args.command!r}", key="command")
    for key in _KEYS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    cfg = {k: _coerce(k, v, args.command) for k, v in raw.items()}
    if "problem" not in cfg:
        raise ConfigError("no problem given", key="problem")
    try:
        catalog(cfg["problem"])
    except UsageError as exc:
        raise ConfigError(str(exc), key="problem") from None
    return cfg


def _primary_exact(entry):
    for key in ("solution", "solution_offset", "phi_bar", "psi_prime"):
        if key in entry.exact:
            return key, entry.exact[key]
    return None, None


def _solver_for(entry, command):
    kind = _primary_exact(entry)[0]
    if command == "convergence-study":
        return {"solution": "parabolic" if not entry.problem.autonomous else "elliptic",
                "solution_offset": "poisson", "phi_bar": "ergodic", "psi_prime": "ergodic"}.get(kind)
    return command.replace("solve-", "")


def _need(cfg, key, defaults):
    if key in cfg:
        return cfg[key]
    if key in defaults:
        return defaults[key]
    raise ConfigError(f"missing required key {key!r}", key=key)


def _run_one(entry, solver, cfg, h):
    """Run one solver; returns ``(estimate, errors, parameters, derived)``.

    ``parameters`` holds only config keys, so feeding it back reproduces the run.
    """
    d = entry.defaults
    prob = entry.problem
    seed = cfg.get("seed", 0)
    workers = cfg.get("workers")
    x0 = cfg.get("x0", d.get("x0"))
    params = {"problem": cfg["problem"], "h": h, "seed": seed, "x0": list(map(float, x0))}
    if solver == "parabolic":
        t0, T, M = cfg.get("t0", d.get("t0", 0.0)), _need(cfg, "T", d), _need(cfg, "M", {})
        r = pde.solve_parabolic(prob, t0, x0, T, h, M, seed, workers)
        params.update(t0=t0, T=T, M=M)
        return r.estimate, {"mc_error": r.mc_error}, params, {"h_used": r.h, "n_steps": r.extras["n_steps"]}
    if solver == "elliptic":
        T, M = _need(cfg, "T", d), _need(cfg, "M", {})
        r = pde.solve_elliptic_decay(prob, x0, T, h, M, seed, workers)
        params.update(T=T, M=M)
        return r.estimate, {"mc_error": r.mc_error}, params, {"h_used": r.h, "n_steps": r.extras["n_steps"]}
    if solver == "poisson":
        sch = {k: _need(cfg, k, d) for k in ("ell", "beta", "upsilon", "T")}
        M = _need(cfg, "M", {})
        schedule = pde.poisson_schedule(h, sch["ell"], sch["beta"], sch["upsilon"], sch["T"])
        r = pde.solve_poisson(prob, x0, schedule, M, seed, workers)
        params.update(sch, M=M)
        return r.estimate, {"mc_error": r.mc_error}, params, {"Lambda": schedule.Lambda,
                                                              "total_steps": schedule.total_steps}
    if solver == "ergodic":
        L = cfg.get("blocks", 100)
        if "T" in cfg:
            T = cfg["T"]
        elif "block_length" in cfg:
            T = L * cfg["block_length"]
        else:
            T = d.get("T_ergodic", 1.0e4)
        ta = ergodic.time_average(prob, x0, T, h, seed, blocks=L)
        params.update(T=T, blocks=L)
        est = {"phi_hat": ta.phi_hat, "kappa_hat": ta.kappa_hat, "psi_hat": ta.psi_hat,
               "psi_prime_hat": ta.psi_prime_hat, "psi_tilde_hat": ta.psi_tilde_hat}
        err = {"phi_hat": ta.phi_err, "kappa_hat": ta.kappa_err, "psi_hat": ta.psi_err,
               "psi_prime_hat": ta.psi_prime_err, "psi_tilde_hat": ta.psi_tilde_err}
        if prob.psi is None:
            for k in ("psi_hat", "psi_prime_hat", "psi_tilde_hat"):
                est.pop(k)
                err.pop(k)
        key = "phi_hat" if "phi_bar" in entry.exact else "psi_prime_hat"
        return (est[key], {"stat_err": err[key], "estimates": est, "stat_errs": err}, params,
                {"block_length": T / L, "n_steps": ta.n_steps, "n_reflections": ta.n_reflections})
    if solver == "ensemble":
        T, M = _need(cfg, "T", d), _need(cfg, "M", {})
        params.update(T=T, M=M)
        if "phi_bar" in entry.exact:
            r = ergodic.ensemble_phi(prob, T, h, M, seed, x0, workers=workers)
            return r.estimate, {"mc_error": r.mc_error}, params, {}
        r = ergodic.ensemble_boundary(prob, T, h, M, seed, x0, workers=workers)
        return r.ratio_of_means, {"mc_error": r.ratio_of_means_error,
                                  "estimates": {"ratio_of_means": r.ratio_of_means,
                                                "mean_of_ratios": r.mean_of_ratios},
                                  "n_without_contact": r.n_without_contact}, params, {}
    raise ConfigError(f"no solver {solver!r} for problem {entry.name}", key="solver")


def _abs_error(est, exact):
    if est is None or exact is None:
        return None
    return abs(est - exact)


def fit_slope(h, err):
    """Least-squares slope of ``log err`` against ``log h`` and its standard error."""
    h = np.asarray(h, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if h.size < 2 or np.any(err <= 0):
        return None, None
    if h.size == 2:
        s = float(np.diff(np.log(err))[0] / np.diff(np.log(h))[0])
        return s, None
    res = stats.linregress(np.log(h), np.log(err))
    return float(res.slope), float(res.stderr)


def run(command, cfg):
    """Execute a validated configuration; returns the JSON-ready document."""
    entry = catalog(cfg["problem"])
    start = time.perf_counter()
    exact_key, exact = _primary_exact(entry)
    doc = {"command": command, "problem": entry.name}
    if command == "convergence-study":
        solver = cfg.get("solver") or _solver_for(entry, command)
        hs = _need(cfg, "h", {})
        rows = []
        params = None
        for h in hs:
            est, err, params, _ = _run_one(entry, solver, cfg, h)
            e = err.get("mc_error", err.get("stat_err"))
            rows.append({"h": h, "estimate": est, "mc_error": e, "abs_error": _abs_error(est, exact)})
        slope, slope_se = fit_slope([r["h"] for r in rows], [r["abs_error"] for r in rows])
        params = dict(params, h=hs, solver=solver)
        csv_path = cfg.get("csv", "convergence.csv")
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["h", "estimate", "mc_error", "abs_error"])
            w.writeheader()
            w.writerows(rows)
        doc.update(parameters=params, estimate=[r["estimate"] for r in rows],
                   mc_error=[r["mc_error"] for r in rows], exact=exact,
                   abs_error=[r["abs_error"] for r in rows], slope=slope, slope_stderr=slope_se,
                   csv=str(csv_path), rows=rows)
    else:
        h = _need(cfg, "h", {})
        est, err, params, derived = _run_one(entry, _solver_for(entry, command), cfg, h)
        doc.update(parameters=params, derived=derived, estimate=est, exact=exact,
                   abs_error=_abs_error(est, exact))
        doc.update(err)
    doc["exact_key"] = exact_key
    doc["wall_time"] = time.perf_counter() - start
    doc["seed"] = cfg.get("seed", 0)
    return doc


def _run_sample(cfg, out):
    entry = catalog(cfg["problem"])
    prob = entry.problem
    h = _need(cfg, "h", {})
    seed = cfg.get("seed", 0)
    x0 = cfg.get("x0", entry.defaults.get("x0"))
    sigma = _isotropic_sigma(prob)
    grad = lambda x: prob.b(0.0, x) / (0.5 * sigma * sigma)
    w = csv.writer(out)
    d = prob.d
    if cfg.get("boundary"):
        T = _need(cfg, "T", {})
        bs = sample_boundary(grad, prob.domain, sigma, h, T, seed, x0)
        w.writerow([f"z{i + 1}" for i in range(d)] + ["weight"])
        for z, wt in zip(bs.z, bs.weight):
            w.writerow([repr(float(v)) for v in z] + [repr(float(wt))])
        return {"command": "sample", "problem": entry.name, "samples": len(bs), "boundary": True}
    n = _need(cfg, "n", {})
    xs = sample_interior(grad, prob.domain, sigma, h, n, cfg.get("burn_in"), seed, x0)
    w.writerow([f"x{i + 1}" for i in range(d)])
    for x in xs:
        w.writerow([repr(float(v)) for v in x])
    return {"command": "sample", "problem": entry.name, "samples": int(xs.shape[0]), "boundary": False}


def _isotropic_sigma(prob):
    if not prob.constant_sigma:
        raise UsageError(f"problem {prob.name} has state-dependent diffusion; sampling needs sigma * I")
    s = np.asarray(prob.sigma, dtype=np.float64)
    if not np.allclose(s, s[0, 0] * np.eye(s.shape[0])):
        raise UsageError(f"problem {prob.name} has anisotropic diffusion; sampling needs sigma * I")
    return float(s[0, 0])


def _report_error(exc, code):
    body = {"error": type(exc).__name__, "message": str(exc)}
    key = getattr(exc, "key", None)
    if key is not None:
        body["key"] = key
    print(json.dumps(body), file=sys.stderr)
    return code


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "sample":
            if "output" in cfg:
                with open(cfg["output"], "w", newline="") as fh:
                    summary = _run_sample(cfg, fh)
            else:
                summary = _run_sample(cfg, sys.stdout)
            print(json.dumps(summary), file=sys.stderr)
            return 0
        doc = run(args.command, cfg)
    except UsageError as exc:
        return _report_error(exc, 2)
    except ReflectWalkError as exc:
        return _report_error(exc, 1)
    text = json.dumps(doc, indent=2)
    if "output" in cfg:
        Path(cfg["output"]).write_text(text + "\n")
    else:
        print(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
