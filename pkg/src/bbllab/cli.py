"""Batch front end: ``bbllab [command] --config run.json --out results/``.

A config is a JSON object whose ``command`` field selects the pipeline.
Every parameter is validated and defaults are filled in before any
computation starts; the resolved config is echoed into ``summary.json`` along
with its SHA-256 and the package version.  Exit status: 0 when the numerical
check passes, 1 when it fails, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import os
import sys
import time
from typing import Any, Callable, Dict, Optional

import numpy as np

from . import __version__
from .asymptotics import barenblatt_profile, general_limit_check, heat_limit_check
from .bbl import BBLTriple, reduce_exponent, verify_bbl, write_reports
from .convolution import minimal_h, minkowski_convolve
from .diffusion import (SolverError, StepPolicy, heat_trajectory, make_problem, pme_evolve,
                        superfast_evolve)
from .equality import equality_pipeline, matrix_equality_diagnostics
from .gridfn import Grid, GridFn, bump, from_csv, gaussian, indicator, two_bumps
from .suite import CRITERIA, run_suite, write_rows

__all__ = ["main", "resolve_config", "config_hash"]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- presets ------------------------------------------------------------------------


def _cosine(grid: Grid, amplitude=1.0):
    vals = amplitude * np.prod([np.cos(np.pi * c / (2 * grid.L)) for c in grid.coords()], axis=0)
    return GridFn(grid, np.maximum(vals, 0.0))


def _power_tail(grid: Grid, amplitude=1.0, power=1.0):
    r2 = sum(c**2 for c in grid.coords())
    return GridFn(grid, amplitude * (1 + r2) ** (-power), tail_exponent=-2 * power)


def _barenblatt(grid: Grid, m=0.75, mass=1.0, t=1.0):
    return barenblatt_profile(m, grid.n, mass).on_grid(grid, t)


PRESETS: Dict[str, tuple] = {
    # name: (builder, defaults)
    "gaussian": (gaussian, {"center": 0.0, "width": 1.0, "amplitude": 1.0}),
    "indicator": (indicator, {"a": -1.0, "b": 1.0, "level": 1.0, "edge": "half"}),
    "bump": (bump, {"center": 0.0, "radius": 1.0, "amplitude": 1.0}),
    "two_bumps": (two_bumps, {"sep": 3.0, "radius": 1.0, "amplitude": 1.0}),
    "cosine": (_cosine, {"amplitude": 1.0}),
    "power_tail": (_power_tail, {"amplitude": 1.0, "power": 1.0}),
    "barenblatt": (_barenblatt, {"m": 0.75, "mass": 1.0, "t": 1.0}),
    "csv": (None, {"path": None}),
}


def _resolve_function(spec, where: str) -> dict:
    if not isinstance(spec, dict) or "preset" not in spec:
        raise UsageError(f"{where}: expected an object with a 'preset' field")
    name = spec["preset"]
    if name not in PRESETS:
        raise UsageError(f"{where}: unknown preset {name!r} (known: {', '.join(PRESETS)})")
    defaults = PRESETS[name][1]
    extra = set(spec) - set(defaults) - {"preset", "scale"}
    if extra:
        raise UsageError(f"{where}: unknown parameters {sorted(extra)} for preset {name!r}")
    out = {"preset": name, "scale": 1.0}
    out.update(defaults)
    out.update(spec)
    if name == "csv" and not out["path"]:
        raise UsageError(f"{where}: the csv preset needs a path")
    return out


def _build_function(spec: dict, grid: Grid) -> GridFn:
    name = spec["preset"]
    if name == "csv":
        f = from_csv(spec["path"])
        if f.grid != grid:
            raise UsageError(f"{spec['path']}: grid differs from the configured grid")
    else:
        builder, defaults = PRESETS[name]
        f = builder(grid, **{k: spec[k] for k in defaults})
    return f if spec["scale"] == 1.0 else f * spec["scale"]


# -- config schema -------------------------------------------------------------------

REQUIRED = object()

SCHEMA: Dict[str, Dict[str, Any]] = {
    "verify-bbl": {"grid": REQUIRED, "f": REQUIRED, "g": REQUIRED, "h": "minimal", "lam": REQUIRED,
                   "alpha": REQUIRED, "tol": 1e-9, "hyp_tol": 0.0, "equality_rtol": 1e-3},
    "evolve": {"grid": REQUIRED, "initial": REQUIRED, "m": REQUIRED, "domain": "cauchy_box",
               "boundary": None, "t_end": REQUIRED, "store_times": None, "solver": "auto",
               "policy": {}},
    "convolve": {"grid": REQUIRED, "u0": REQUIRED, "u1": REQUIRED, "lam": REQUIRED, "alpha": REQUIRED,
                 "mean_weight": None},
    "asymptotics": {"grid": REQUIRED, "initial": REQUIRED, "m": 1.0, "times": None, "expected": None,
                    "rtol": 5e-3, "policy": {}},
    "reduce-exponent": {"grid": REQUIRED, "f": REQUIRED, "g": REQUIRED, "h": "minimal", "lam": REQUIRED,
                        "alpha": REQUIRED, "p": REQUIRED, "mass_tol": 1e-6, "hyp_rtol": 1e-12},
    "equality-check": {"grid": REQUIRED, "f": REQUIRED, "g": REQUIRED, "h": REQUIRED, "lam": REQUIRED,
                       "sigma": 1e-3, "tol": 1e-2, "t0_tol": 2e-2, "equality_rtol": 1e-3, "times": None,
                       "diagnostic_points": 11},
    "regression-suite": {"criteria": None, "perturb_h": 1.0},
}
FUNCTION_KEYS = {"f", "g", "u0", "u1", "initial"}
POLICY_DEFAULTS = {"dt0": None, "growth": 1.2, "dt_max": "inf", "rel_cap": 0.01, "dt_min": 1e-14}


def _number(value, where: str, lo=None, hi=None, open_lo=False, open_hi=False, allow_inf=False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{where}: expected a number, got {value!r}") from None
    if math.isnan(x) or (math.isinf(x) and not allow_inf):
        raise UsageError(f"{where}: expected a finite number, got {value!r}")
    if lo is not None and (x < lo or (open_lo and x == lo)):
        raise UsageError(f"{where}: {x} is out of range")
    if hi is not None and (x > hi or (open_hi and x == hi)):
        raise UsageError(f"{where}: {x} is out of range")
    return x


def _resolve_grid(spec) -> dict:
    if not isinstance(spec, dict) or set(spec) - {"n", "L", "N"} or not {"L", "N"} <= set(spec):
        raise UsageError("grid: expected {'n', 'L', 'N'}")
    out = {"n": spec.get("n", 1), "L": spec["L"], "N": spec["N"]}
    try:
        Grid(int(out["n"]), float(out["L"]), int(out["N"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"grid: {exc}") from None
    return out


def resolve_config(raw: dict, seed: Optional[int] = None) -> dict:
    """Validate ``raw`` and fill every default; raises ``UsageError``."""
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    cmd = raw.get("command")
    if cmd not in SCHEMA:
        raise UsageError(f"unknown command {cmd!r} (known: {', '.join(SCHEMA)})")
    schema = SCHEMA[cmd]
    extra = set(raw) - set(schema) - {"command", "seed"}
    if extra:
        raise UsageError(f"unknown keys for {cmd}: {sorted(extra)}")
    cfg: Dict[str, Any] = {"command": cmd}
    for key, default in schema.items():
        if key in raw:
            cfg[key] = copy.deepcopy(raw[key])
        elif default is REQUIRED:
            raise UsageError(f"{cmd}: missing required key {key!r}")
        else:
            cfg[key] = copy.deepcopy(default)
    cfg["seed"] = int(raw.get("seed", 0) if seed is None else seed)
    if cfg["seed"] < 0:
        raise UsageError("seed must be nonnegative")
    if "grid" in cfg:
        cfg["grid"] = _resolve_grid(cfg["grid"])
    for key in FUNCTION_KEYS & set(cfg):
        cfg[key] = _resolve_function(cfg[key], key)
    if "h" in cfg and cfg["h"] != "minimal":
        cfg["h"] = _resolve_function(cfg["h"], "h")
    if "lam" in cfg:
        cfg["lam"] = _number(cfg["lam"], "lam", 0, 1, open_lo=True, open_hi=True)
    if "policy" in cfg:
        pol = cfg["policy"]
        if not isinstance(pol, dict) or set(pol) - set(POLICY_DEFAULTS):
            raise UsageError(f"policy: allowed keys are {sorted(POLICY_DEFAULTS)}")
        cfg["policy"] = {**POLICY_DEFAULTS, **pol}
    if cmd == "regression-suite":
        crit = cfg["criteria"]
        crit = list(CRITERIA) if crit is None else [str(c) for c in crit]
        unknown = [c for c in crit if c not in CRITERIA]
        if unknown:
            raise UsageError(f"unknown criteria {unknown}")
        cfg["criteria"] = crit
        cfg["perturb_h"] = _number(cfg["perturb_h"], "perturb_h", 0, open_lo=True)
    return cfg


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()


def _policy(spec: dict) -> StepPolicy:
    return StepPolicy(
        dt0=None if spec["dt0"] is None else _number(spec["dt0"], "dt0", 0, open_lo=True),
        growth=_number(spec["growth"], "growth", 1),
        dt_max=_number(spec["dt_max"], "dt_max", 0, open_lo=True, allow_inf=True),
        rel_cap=None if spec["rel_cap"] is None else _number(spec["rel_cap"], "rel_cap", 0, open_lo=True),
        dt_min=_number(spec["dt_min"], "dt_min", 0, open_lo=True),
    )


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def _stamp_csv(path: str, header: str) -> None:
    with open(path, encoding="utf-8") as fh:
        body = fh.read()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# {header}\n{body}")


# -- commands: each returns (passed, results, list of CSV paths written) ------------


def _grid(cfg) -> Grid:
    g = cfg["grid"]
    return Grid(int(g["n"]), float(g["L"]), int(g["N"]))


def _triple(cfg, grid) -> BBLTriple:
    f = _build_function(cfg["f"], grid)
    g = _build_function(cfg["g"], grid)
    alpha = cfg.get("alpha", 0)
    if cfg["h"] == "minimal":
        h = minimal_h(f, g, cfg["lam"], alpha)
    else:
        h = _build_function(cfg["h"], grid)
    return BBLTriple.make(f, g, h, cfg["lam"], alpha)


def _prepare_verify(cfg):
    grid = _grid(cfg)
    triple = _triple(cfg, grid)

    def run(out, digest):
        rep = verify_bbl(triple, cfg["tol"], cfg["hyp_tol"], cfg["equality_rtol"])
        path = os.path.join(out, "report.csv")
        write_reports([("config", triple, rep)], path)
        hyp = rep.hypothesis
        res = {"lhs": rep.lhs, "rhs": rep.rhs, "slack": rep.slack, "relative_slack": rep.relative_slack,
               "hypothesis_pass": hyp.passed, "worst_violation": hyp.worst_violation,
               "witness": list(map(list, hyp.witness)), "near_equality": rep.near_equality,
               "consistent": rep.consistent}
        return hyp.passed and rep.consistent, res, [path]

    return run


def _prepare_evolve(cfg):
    grid = _grid(cfg)
    phi = _build_function(cfg["initial"], grid)
    m = _number(cfg["m"], "m", -1, 1, open_lo=True)
    t_end = _number(cfg["t_end"], "t_end", 0, open_lo=True)
    store = cfg["store_times"]
    store = [t_end] if store is None else sorted(_number(t, "store_times", 0, t_end) for t in store)
    policy = _policy(cfg["policy"])
    solver = cfg["solver"]
    if solver == "auto":
        solver = "superfast" if m < 0 else ("heat" if m == 1 and cfg["domain"] == "cauchy_box"
                                            and cfg["boundary"] is None else "implicit")
    if solver not in ("heat", "implicit", "superfast"):
        raise UsageError(f"unknown solver {solver!r}")
    if solver == "heat":
        if m != 1:
            raise UsageError("the heat solver needs m = 1")
        go = lambda: heat_trajectory(phi, [t for t in store if t > 0])
    elif solver == "superfast":
        q = 2 / (1 - m)
        if not -1 < m < 0 or phi.tail_exponent is None or not math.isclose(phi.tail_exponent, -q, rel_tol=1e-9):
            raise UsageError(f"the superfast solver needs -1 < m < 0 and a power_tail initial with power {q / 2}")
        go = lambda: superfast_evolve(phi, m, t_end, policy, store_times=store)
    else:
        if not 0 < m <= 1:
            raise UsageError(f"the implicit solver needs 0 < m <= 1, got {m}")
        try:
            problem = make_problem(phi, m, cfg["domain"], boundary=cfg["boundary"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        go = lambda: pme_evolve(problem, t_end, policy, store_times=store)

    def run(out, digest):
        traj = go()
        traj.to_csv(os.path.join(out, "trajectory"))
        masses = traj.masses
        res = {"solver": solver, "times": traj.times, "masses": masses, "max": [s.max() for s in traj.states],
               "extinction_time": traj.extinction_time, "relative_mass_drift":
               float(np.max(np.abs(masses - masses[0])) / masses[0]) if masses[0] > 0 else 0.0}
        diag = {k: v for k, v in traj.diagnostics.items() if isinstance(v, (int, float, np.ndarray, list))}
        res["diagnostics"] = diag
        return True, res, [os.path.join(out, "trajectory", "index.csv")]

    return run


def _prepare_convolve(cfg):
    grid = _grid(cfg)
    u0 = _build_function(cfg["u0"], grid)
    u1 = _build_function(cfg["u1"], grid)
    mw = cfg["mean_weight"]
    mw = None if mw is None else _number(mw, "mean_weight", 0, 1, open_lo=True, open_hi=True)

    def run(out, digest):
        res = minkowski_convolve(u0, u1, cfg["lam"], cfg["alpha"], mean_weight=mw)
        path = os.path.join(out, "convolution.csv")
        res.to_csv(path)
        return True, {"max": res.ubar.max(), "mass": res.ubar.mass(),
                      "attained_fraction": float(np.mean(res.attained))}, [path]

    return run


def _prepare_asymptotics(cfg):
    grid = _grid(cfg)
    phi = _build_function(cfg["initial"], grid)
    m = _number(cfg["m"], "m", 0, 1, open_lo=True)
    times = cfg["times"]
    times = [2.0**k for k in range(11)] if times is None else [_number(t, "times", 0, open_lo=True) for t in times]
    cfg["times"] = times
    policy = _policy(cfg["policy"])

    def run(out, digest):
        if m == 1:
            series = heat_limit_check(phi, times)
        else:
            problem = make_problem(phi, m)
            series = general_limit_check(pme_evolve(problem, times[-1], policy, store_times=times))
        path = os.path.join(out, "asymptotics.csv")
        series.to_csv(path)
        final = float(series.probe_values[-1])
        res = {"final_probe": final, "extrapolated_limit": series.extrapolated_limit,
               "convergence_quality": series.convergence_quality, "converged": series.converged}
        ok = series.converged
        if cfg["expected"] is not None:
            exp = float(cfg["expected"])
            res["relative_error"] = abs(final - exp) / abs(exp)
            ok = ok and res["relative_error"] <= cfg["rtol"]
        return ok, res, [path]

    return run


def _prepare_reduce(cfg):
    grid = _grid(cfg)
    triple = _triple(cfg, grid)
    try:
        reduced = reduce_exponent(triple, cfg["p"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    def run(out, digest):
        rep = verify_bbl(triple)
        hyp = reduced.hypothesis(cfg["hyp_rtol"] * reduced.h_hat.max())
        F, G, H = reduced.masses()
        mass_dev = max(abs(F - 1), abs(G - 1))
        res = {"mu": reduced.mu, "masses": [F, G, H], "ratio": reduced.ratio(),
               "one_plus_relative_slack": 1 + rep.relative_slack, "reduced_hypothesis_pass": hyp.passed,
               "params": reduced.params}
        path = os.path.join(out, "reduced.csv")
        write_reports([("reduced", reduced.as_triple(), verify_bbl(reduced.as_triple()))], path)
        return hyp.passed and mass_dev <= cfg["mass_tol"], res, [path]

    return run


def _prepare_equality(cfg):
    grid = _grid(cfg)
    cfg["alpha"] = 0
    triple = _triple(cfg, grid)
    times = cfg["times"]
    times = list(np.geomspace(1e-2, 10.0, 16)) if times is None else [
        _number(t, "times", 0, open_lo=True) for t in times]
    cfg["times"] = [float(t) for t in times]

    def run(out, digest):
        try:
            rep = equality_pipeline(triple, cfg["sigma"], cfg["times"], cfg["tol"], cfg["t0_tol"],
                                    cfg["equality_rtol"])
        except ValueError as exc:
            return False, {"error": str(exc)}, []
        with open(os.path.join(out, "equality.json"), "w", encoding="utf-8") as fh:
            json.dump(_json_safe({**rep.to_dict(), "config_sha256": digest}), fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths = []
        if rep.t_star is not None:
            from .diffusion import heat_evolve

            t = rep.details["t_fit"]
            states = [heat_evolve(u, t) for u in (triple.f, triple.g, triple.h)]
            pts = np.linspace(-0.5 * grid.L, 0.5 * grid.L, int(cfg["diagnostic_points"]))
            pts = np.stack([pts] * grid.n, axis=-1)
            diag = matrix_equality_diagnostics(*states, triple.lam, pts)
            path = os.path.join(out, "diagnostics.csv")
            diag.to_csv(path)
            paths.append(path)
        return rep.certified, rep.to_dict(), paths

    return run


def _prepare_suite(cfg, threads: int):
    def run(out, digest):
        def report(row):
            print(f"  criterion {row.criterion:>6}: {'PASS' if row.passed else 'FAIL'}  {row.name}", flush=True)

        rows = run_suite(cfg["criteria"], cfg["seed"], cfg["perturb_h"], threads, on_done=report)
        path = os.path.join(out, "suite.csv")
        write_rows(rows, path)
        res = {r.criterion: {"name": r.name, "passed": r.passed, "measured": r.measured} for r in rows}
        return all(r.passed for r in rows), res, [path]

    return run


PREPARE: Dict[str, Callable] = {
    "verify-bbl": _prepare_verify,
    "evolve": _prepare_evolve,
    "convolve": _prepare_convolve,
    "asymptotics": _prepare_asymptotics,
    "reduce-exponent": _prepare_reduce,
    "equality-check": _prepare_equality,
}


# -- entry point ---------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bbllab", description=__doc__.splitlines()[0])
    p.add_argument("command", nargs="?", choices=sorted(SCHEMA), help="overrides or supplies the config command")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="output directory (falls back to $BBLLAB_OUT)")
    p.add_argument("--seed", type=int, help="random seed (default: config value or 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for the regression suite")
    p.add_argument("--version", action="version", version=f"bbllab {__version__}")
    return p


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PASS if exc.code == 0 else EXIT_USAGE
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        if args.command is not None:
            if isinstance(raw, dict) and raw.get("command", args.command) != args.command:
                raise UsageError(f"command {args.command!r} conflicts with config command {raw['command']!r}")
            raw = {**raw, "command": args.command}
        out = args.out or os.environ.get("BBLLAB_OUT")
        if not out:
            raise UsageError("no output directory: pass --out or set BBLLAB_OUT")
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = resolve_config(raw, args.seed)
        if cfg["command"] == "regression-suite":
            runner = _prepare_suite(cfg, args.threads)
        else:
            runner = PREPARE[cfg["command"]](cfg)
    except (OSError, json.JSONDecodeError, UsageError, ValueError, TypeError, KeyError) as exc:
        print(f"bbllab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(out, exist_ok=True)
    digest = config_hash(cfg)
    header = f"bbllab {__version__} config_sha256={digest}"
    start = time.perf_counter()
    try:
        passed, results, csvs = runner(out, digest)
    except (SolverError, RuntimeError, ValueError) as exc:
        diagnostics = getattr(exc, "diagnostics", None) or {}
        with open(os.path.join(out, "failure.json"), "w", encoding="utf-8") as fh:
            json.dump(_json_safe({"version": __version__, "config_sha256": digest, "error": str(exc),
                                  "diagnostics": diagnostics}), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"bbllab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for path in csvs:
        _stamp_csv(path, header)
    summary = {"version": __version__, "config_sha256": digest, "config": cfg, "passed": passed,
               "results": results}
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(_json_safe(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    status = "PASS" if passed else "FAIL"
    print(f"bbllab {cfg['command']}: {status} ({time.perf_counter() - start:.2f} s) -> {out}")
    return EXIT_PASS if passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
