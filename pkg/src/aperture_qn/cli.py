"""Batch command line front-end.

Usage::

    aperture-qn solve --config case.toml --out results/
    aperture-qn sweep-stability --config sweep.toml --out results/ --workers 4
    aperture-qn sweep-contraction --config sweep.toml --out results/
    aperture-qn roots --config case.toml --out results/
    aperture-qn kgd --config kgd.toml --out results/

Configs are TOML. Every key has a default, so the smallest useful config is::

    subcommand = "solve"
    pi1 = 1e-3
    pi2 = 1e-3

Exit status: 0 success (physical solution), 2 converged to a nonphysical
solution, 1 failure of any kind.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis, propagation
from .core import ApertureQNError, CaseParams, case_from_groups, dimensionless_aperture
from .ds1_model import build_operators
from .solvers import SolverConfig, newton_solve, quasi_newton_solve

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "ConfigError", "load_config", "format_value"]

SUBCOMMANDS = ("solve", "sweep-stability", "sweep-contraction", "kgd", "roots")

TRACE_COLUMNS = ("iter", "residual_norm", "c", "min_w_dimless", "front_index")
SOLUTION_COLUMNS = ("x", "p", "w", "w_dimless")
SWEEP_COLUMNS = analysis.SWEEP_COLUMNS
LENGTH_COLUMNS = ("t", "a")
PROFILE_COLUMNS = ("x", "p", "w")
STEPS_COLUMNS = ("step", "t", "dt", "iters", "max_c", "K_eq", "action")
ROOTS_COLUMNS = ("root", "origin", "is_physical", "min_w_dimless", "rho_qn", "rho_newton")
ROOT_PROFILE_COLUMNS = ("root", "x", "p", "w")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_NONPHYSICAL = 2


class ConfigError(Exception):
    """Invalid configuration; the message names the offending field."""


# --- config --------------------------------------------------------------------

# section -> key -> (type, default)
_SCHEMA = {
    "": {
        "subcommand": (str, None),
        "pi1": (float, 1e-3),
        "pi2": (float, 1e-3),
        "n_c": (int, None),
        "n_g": (int, 20),
        "seed": (int, 0),
        "workers": (int, None),
        "out": (str, None),
    },
    "case": {
        "youngs_modulus": (float, None),
        "poisson_ratio": (float, 0.25),
        "viscosity": (float, None),
        "injection_rate": (float, None),
        "half_length": (float, None),
        "dt": (float, None),
    },
    "solver": {
        "variant": (str, "quasi_newton"),
        "max_iters": (int, 100),
        "rms_tol": (float, 1e-8),
        "res_tol": (float, 1e-9),
        "eps0": (float, -1e-4),
    },
    "init": {
        "kind": (str, "zero"),
        "scale": (float, 1.0),
        "p": (list, None),
    },
    "sweep": {
        "pi1_min": (float, analysis.PI1_RANGE[0]),
        "pi1_max": (float, analysis.PI1_RANGE[1]),
        "pi1_count": (int, 20),
        "pi2_min": (float, analysis.PI2_RANGE[0]),
        "pi2_max": (float, analysis.PI2_RANGE[1]),
        "pi2_count": (int, 20),
        "n_starts": (int, 20),
        "rms_tol": (float, 1e-8),
        "max_iters": (int, 100),
    },
    "roots": {
        "n_starts": (int, 20),
    },
    "kgd": {
        "youngs_modulus": (float, 8.3e9),
        "poisson_ratio": (float, 0.25),
        "viscosity": (float, 2e-3),
        "q_total": (float, 1e-3),
        "initial_half_length": (float, 2.0),
        "initial_cells": (int, 8),
        "n_g": (int, 20),
        "advancement_length": (float, 2.0),
        "growth_factor": (float, 1.2),
        "critical_sif": (float, 0.5e6),
        "max_dt": (float, 0.5),
        "total_time": (float, 90.0),
        "secant_max_corrections": (int, 30),
        "initial_dt": (float, 0.01),
        "propagate_tol": (float, 1e-3),
        "rms_tol": (float, 1e-8),
        "max_iters": (int, 200),
    },
}


def _coerce(path, value, typ):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{path}: expected a list of numbers")
        return [float(v) for v in value]
    raise AssertionError(typ)


def load_config(text: str) -> dict:
    """Parse TOML text and fill defaults. Returns ``{section: {key: value}}``
    with top-level keys under ``""``."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in _SCHEMA.items()}
    present = {sec: set() for sec in _SCHEMA}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in _SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]")
            for k, v in value.items():
                if k not in _SCHEMA[key]:
                    raise ConfigError(f"unknown key '{key}.{k}'")
                cfg[key][k] = _coerce(f"{key}.{k}", v, _SCHEMA[key][k][0])
                present[key].add(k)
        else:
            if key not in _SCHEMA[""]:
                raise ConfigError(f"unknown key '{key}'")
            cfg[""][key] = _coerce(key, value, _SCHEMA[""][key][0])
            present[""].add(key)
    sub = cfg[""]["subcommand"]
    if sub is not None and sub not in SUBCOMMANDS:
        raise ConfigError(f"subcommand: unknown value {sub!r}")
    cfg["_present"] = present
    return cfg


def _case_from_config(cfg, default_nc):
    top, case = cfg[""], cfg["case"]
    n_c = top["n_c"] if top["n_c"] is not None else default_nc
    dimensional = [k for k in cfg["_present"]["case"] if k != "poisson_ratio"]
    try:
        if dimensional:
            missing = [k for k in ("youngs_modulus", "viscosity", "injection_rate", "half_length", "dt") if case[k] is None]
            if missing:
                raise ConfigError(f"case: missing {', '.join('case.' + m for m in missing)}")
            return CaseParams(
                case["youngs_modulus"], case["poisson_ratio"], case["viscosity"], case["injection_rate"],
                case["half_length"], case["dt"], n_c, top["n_g"],
            )
        return case_from_groups(top["pi1"], top["pi2"], n_c, top["n_g"])
    except ValueError as exc:
        raise ConfigError(f"case: {exc}") from exc


def _solver_from_config(cfg):
    s = cfg["solver"]
    try:
        return SolverConfig(s["max_iters"], s["rms_tol"], s["res_tol"], s["variant"], s["eps0"])
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc


def _initial_pressure(cfg, params: CaseParams):
    init = cfg["init"]
    n = params.n_cells
    s = params.youngs_modulus * params.injection_rate * params.dt / params.half_length**2
    if init["p"] is not None:
        if len(init["p"]) != n:
            raise ConfigError(f"init.p: expected {n} values, got {len(init['p'])}")
        return np.array(init["p"])
    kind = init["kind"]
    if kind == "zero":
        return np.zeros(n)
    if kind == "alternating":
        return init["scale"] * s * (-1.0) ** np.arange(n)
    if kind == "uniform":
        return np.full(n, init["scale"] * s)
    raise ConfigError(f"init.kind: unknown value {kind!r}")


def _check_grid(sw, allow):
    for name, lo, hi, box in (
        ("pi1", sw["pi1_min"], sw["pi1_max"], analysis.PI1_RANGE),
        ("pi2", sw["pi2_min"], sw["pi2_max"], analysis.PI2_RANGE),
    ):
        if sw[f"{name}_count"] < 2:
            raise ConfigError(f"sweep.{name}_count: must be at least 2")
        if not (0 < lo < hi):
            raise ConfigError(f"sweep.{name}_min/{name}_max: need 0 < min < max")
        tol = 1e-12
        if not allow and (lo < box[0] * (1 - tol) or hi > box[1] * (1 + tol)):
            raise ConfigError(
                f"sweep.{name}: range [{lo:g}, {hi:g}] leaves the studied box [{box[0]:g}, {box[1]:g}]; "
                "pass --allow-extrapolation to run it anyway"
            )


# --- output ------------------------------------------------------------------------


def format_value(v) -> str:
    """Deterministic text for a CSV cell (floats with 17 significant digits)."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _write_files(out: Path, files: dict):
    """Write all files after the computation succeeded."""
    out.mkdir(parents=True, exist_ok=True)
    for rel, text in files.items():
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


# --- subcommands -------------------------------------------------------------------


def cmd_solve(cfg, args) -> int:
    params = _case_from_config(cfg, default_nc=15)
    scfg = _solver_from_config(cfg)
    ops = build_operators(params)
    w0 = np.zeros(params.n_cells)
    if scfg.variant == "newton":
        sol = newton_solve(ops, w0, scfg, _initial_pressure(cfg, params))
    else:
        p_init = _initial_pressure(cfg, params) if cfg["_present"]["init"] else None
        sol = quasi_newton_solve(ops, w0, scfg, p_init)
    tr = sol.trace
    trace_rows = [(r.iteration, r.residual_norm, r.c, r.min_w_dimless, r.front_index) for r in tr.records]
    x = ops.mesh.centers
    wd = dimensionless_aperture(sol.state.w, params.injection_rate, params.dt) if params.injection_rate > 0 else sol.state.w * np.nan
    sol_rows = list(zip(x, sol.state.p, sol.state.w, wd))
    _write_files(args.out, {"trace.csv": _csv_text(TRACE_COLUMNS, trace_rows), "solution.csv": _csv_text(SOLUTION_COLUMNS, sol_rows)})
    print(f"{sol.status} after {sol.iterations} iterations; physical={sol.is_physical}")
    if not sol.converged:
        return EXIT_FAILURE
    return EXIT_OK if sol.is_physical else EXIT_NONPHYSICAL


def cmd_sweep(cfg, args, kind) -> int:
    sw = cfg["sweep"]
    _check_grid(sw, args.allow_extrapolation)
    g1 = analysis.log_grid(sw["pi1_min"], sw["pi1_max"], sw["pi1_count"])
    g2 = analysis.log_grid(sw["pi2_min"], sw["pi2_max"], sw["pi2_count"])
    scfg = SolverConfig(max_iters=sw["max_iters"], rms_tol=sw["rms_tol"], res_tol=None, eps0=cfg["solver"]["eps0"])
    seed = cfg[""]["seed"]
    n_c = cfg[""]["n_c"]
    if kind == "stability":
        res = analysis.stability_sweep(g1, g2, n_c=n_c or 4, seed=seed, workers=args.workers, n_starts=sw["n_starts"], cfg=scfg)
    else:
        res = analysis.contraction_sweep(g1, g2, n_c=n_c or 15, seed=seed, workers=args.workers, cfg=scfg)
    _write_files(args.out, {"sweep.csv": _csv_text(SWEEP_COLUMNS, [r.row() for r in res.records])})
    print(f"{kind} sweep: {len(res.records)} cases written")
    return EXIT_OK


def cmd_roots(cfg, args) -> int:
    params = _case_from_config(cfg, default_nc=4)
    ops = build_operators(params)
    w0 = np.zeros(params.n_cells)
    roots = analysis.find_roots(ops, w0, n_starts=cfg["roots"]["n_starts"], seed=cfg[""]["seed"], eps0=cfg["solver"]["eps0"])
    rows, prof = [], []
    for k, r in enumerate(roots):
        rq = analysis.map_spectral_radius(analysis.FixedPointMap(ops, w0, "qn"), r.state.p)[0]
        rn = analysis.map_spectral_radius(analysis.FixedPointMap(ops, w0, "newton"), r.state.p)[0]
        rows.append((k, r.origin, r.is_physical, r.min_w_dimless, rq, rn))
        prof.extend((k, x, p, w) for x, p, w in zip(ops.mesh.centers, r.state.p, r.state.w))
    _write_files(args.out, {"roots.csv": _csv_text(ROOTS_COLUMNS, rows), "root_profiles.csv": _csv_text(ROOT_PROFILE_COLUMNS, prof)})
    n_non = sum(not r.is_physical for r in roots)
    print(f"{len(roots)} distinct roots, {n_non} nonphysical")
    return EXIT_OK if roots else EXIT_FAILURE


def kgd_inputs(cfg):
    """Case and controller settings of the ``[kgd]`` block."""
    k = cfg["kgd"]
    try:
        params = CaseParams(
            k["youngs_modulus"], k["poisson_ratio"], k["viscosity"], 0.5 * k["q_total"],
            k["initial_half_length"], k["initial_dt"], k["initial_cells"], k["n_g"],
        )
        prop = propagation.PropagationConfig(
            advancement_length=k["advancement_length"],
            growth_factor=k["growth_factor"],
            critical_sif=k["critical_sif"],
            max_dt=k["max_dt"],
            total_time=k["total_time"],
            secant_max_corrections=k["secant_max_corrections"],
            initial_dt=k["initial_dt"],
            propagate_tol=k["propagate_tol"],
            solver=SolverConfig(max_iters=k["max_iters"], rms_tol=k["rms_tol"], res_tol=None, eps0=cfg["solver"]["eps0"]),
        )
    except ValueError as exc:
        raise ConfigError(f"kgd: {exc}") from exc
    return params, prop


def kgd_files(hist) -> dict:
    """CSV texts of a propagation history keyed by relative path."""
    files = {"length.csv": _csv_text(LENGTH_COLUMNS, zip(hist.times, hist.lengths))}
    for k, (t, a, x, p, w) in enumerate(hist.profiles):
        files[f"profiles/{k:05d}.csv"] = _csv_text(PROFILE_COLUMNS, zip(x, p, w))
    rows = [(s.step, s.t, s.dt, s.iters, s.max_c, s.K_eq, s.action) for s in hist.attempts]
    if not hist.completed:
        last = rows[-1] if rows else (0, float("nan"), float("nan"), 0, float("nan"), float("nan"), "")
        rows.append((last[0] + 1, last[1], last[2], 0, float("nan"), float("nan"), f"abort: {hist.message}"))
    files["steps.csv"] = _csv_text(STEPS_COLUMNS, rows)
    return files


def cmd_kgd(cfg, args) -> int:
    params, prop = kgd_inputs(cfg)
    hist = propagation.run_kgd(params, prop)
    _write_files(args.out, kgd_files(hist))
    if hist.completed:
        print(f"completed: a = {hist.lengths[-1]:g} m at t = {hist.times[-1]:g} s")
        return EXIT_OK
    print(f"aborted: {hist.message}", file=sys.stderr)
    return EXIT_FAILURE


# --- entry point -----------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="aperture-qn", description=__doc__.split("\n\n")[0])
    p.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS, help="defaults to the config's 'subcommand' key")
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, help="sweep worker processes (fallback: $APERTURE_QN_WORKERS, then 1)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--allow-extrapolation", action="store_true", help="permit sweep grids outside the studied box")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        cfg = load_config(text)
        sub = args.subcommand or cfg[""]["subcommand"]
        if sub is None:
            raise ConfigError("subcommand: not given on the command line or in the config")
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg[""]["seed"] = args.seed
        if cfg[""]["seed"] < 0:
            raise ConfigError("seed: must be non-negative")
        workers = args.workers if args.workers is not None else cfg[""]["workers"]
        args.workers = analysis.resolve_workers(workers) if workers is not None else analysis.resolve_workers(None)
        out = args.out or (Path(cfg[""]["out"]) if cfg[""]["out"] else None)
        if out is None:
            raise ConfigError("out: no output directory given (--out or 'out' key)")
        args.out = out
        if sub == "solve":
            return cmd_solve(cfg, args)
        if sub == "sweep-stability":
            return cmd_sweep(cfg, args, "stability")
        if sub == "sweep-contraction":
            return cmd_sweep(cfg, args, "contraction")
        if sub == "roots":
            return cmd_roots(cfg, args)
        return cmd_kgd(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (ApertureQNError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
