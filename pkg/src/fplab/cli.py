"""Command-line front end: config parsing, run orchestration, reports.

Commands (each writes into its own run directory, never overwriting unless
--overwrite is given):

    fplab fp-run          --config cfg.toml [--out DIR] [--seed N]
    fplab ou-run          --config cfg.toml ...
    fplab alpha-sweep     --config cfg.toml ...
    fplab markov          --config cfg.toml ...
    fplab landscape-check --config cfg.toml ...
    fplab ensemble        --config cfg.toml ...
    fplab report          RUN_DIR

Configs are TOML; unknown sections or keys are rejected.  Exit codes:
0 success, 1 report found violations, 2 bad configuration, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import __version__, asympt, fpsolve, markov, model, ougauss, thermo
from .errors import ConfigError, FplabError, ModelError, NumericsError, RegimeError

__all__ = ["RunConfig", "parse_config", "run", "report", "main"]

COMMANDS = ("fp-run", "ou-run", "alpha-sweep", "markov", "landscape-check", "ensemble")

THERMO_COLUMNS = (
    "t,S,ep,qex,F,qhk,dSdt_fd,dFdt_fd,res_entropy,res_freeenergy"
)


@dataclass
class RunConfig:
    """Validated configuration for one command invocation."""

    command: str
    system: dict | None
    numerics: dict
    init: dict
    sweep: dict
    markov: dict
    landscape: dict
    ensemble: dict
    output: dict
    seed: int


def _want_number(key, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"key '{key}' must be a number")
    return float(value)


def _want_positive(key, value):
    v = _want_number(key, value)
    if v <= 0:
        raise ConfigError(f"key '{key}' must be positive")
    return v


def _want_int(key, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"key '{key}' must be an integer")
    return value


def _want_bool(key, value):
    if not isinstance(value, bool):
        raise ConfigError(f"key '{key}' must be true or false")
    return value


def _want_str(key, value):
    if not isinstance(value, str):
        raise ConfigError(f"key '{key}' must be a string")
    return value


def _want_list(key, value):
    if not isinstance(value, list):
        raise ConfigError(f"key '{key}' must be a list")
    return value


_NUMERICS_DEFAULTS = {
    "dt": 1e-3,
    "output_spacing": 0.01,
    "abs_tol": 1e-3,
    "rel_tol": 1e-2,
}

_NUMERICS_KEYS = {
    "bounds": _want_list,
    "cells": None,  # int or list of ints
    "dt": _want_positive,
    "t_end": _want_positive,
    "output_spacing": _want_positive,
    "abs_tol": _want_positive,
    "rel_tol": _want_positive,
    "stationary_method": _want_str,
}

_INIT_KEYS = {
    "kind": _want_str,
    "mean": _want_list,
    "cov": None,  # scalar or nested list
    "eps": _want_positive,
}

_SWEEP_KEYS = {
    "alphas": _want_list,
    "t_probe": _want_positive,
    "x0": _want_list,
    "route": _want_str,
    "sigma0": None,
}

_MARKOV_KEYS = {"p": _want_list, "P": _want_list}

_LANDSCAPE_KEYS = {
    "kind": _want_str,
    "n_points": _want_int,
    "sample_bounds": _want_list,
}

_ENSEMBLE_KEYS = {
    "x0": _want_list,
    "n_paths": _want_int,
    "dt": _want_positive,
    "t_end": _want_positive,
    "output_times": _want_list,
}

_OUTPUT_KEYS = {"dump_density": _want_bool}

_SECTIONS = {
    "fp-run": {"system": None, "numerics": _NUMERICS_KEYS, "init": _INIT_KEYS,
               "output": _OUTPUT_KEYS},
    "ou-run": {"system": None, "numerics": _NUMERICS_KEYS, "init": _INIT_KEYS},
    "alpha-sweep": {"system": None, "sweep": _SWEEP_KEYS, "numerics": _NUMERICS_KEYS},
    "markov": {"markov": _MARKOV_KEYS},
    "landscape-check": {"system": None, "landscape": _LANDSCAPE_KEYS,
                        "numerics": _NUMERICS_KEYS},
    "ensemble": {"system": None, "ensemble": _ENSEMBLE_KEYS},
}

_REQUIRED = {
    "fp-run": (("system", None), ("numerics", "t_end"), ("init", "kind")),
    "ou-run": (("system", None), ("numerics", "t_end"), ("init", "mean"),
               ("init", "cov")),
    "alpha-sweep": (("system", None), ("sweep", "alphas"), ("sweep", "t_probe"),
                    ("sweep", "x0")),
    "markov": (("markov", "p"), ("markov", "P")),
    "landscape-check": (("system", None),),
    "ensemble": (("system", None), ("ensemble", "x0"), ("ensemble", "t_end")),
}


def _validate_section(name, data, keys):
    out = {}
    for key, value in data.items():
        if key not in keys:
            raise ConfigError(f"unknown key '{name}.{key}'")
        checker = keys[key]
        out[key] = checker(f"{name}.{key}", value) if checker is not None else value
    return out


def parse_config(text, command):
    """Parse and validate a TOML config for a command; unknown sections or
    keys fail closed, defaults are filled in."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}")
    allowed = _SECTIONS[command]
    sections = {}
    seed = 0
    for key, value in raw.items():
        if key == "seed":
            seed = _want_int("seed", value)
            continue
        if key not in allowed:
            raise ConfigError(f"unknown section '{key}' for command '{command}'")
        if not isinstance(value, dict):
            raise ConfigError(f"section '{key}' must be a table")
        if allowed[key] is None:
            sections[key] = dict(value)  # validated by the system builder
        else:
            sections[key] = _validate_section(key, value, allowed[key])
    for section, key in _REQUIRED[command]:
        if section not in sections:
            raise ConfigError(f"command '{command}' requires a [{section}] section")
        if key is not None and key not in sections[section]:
            raise ConfigError(f"command '{command}' requires '{section}.{key}'")
    numerics = dict(_NUMERICS_DEFAULTS)
    numerics.update(sections.get("numerics", {}))
    if command == "alpha-sweep":
        alphas = sections["sweep"]["alphas"]
        if len(alphas) < 4:
            raise ConfigError("sweep.alphas needs at least 4 values")
    return RunConfig(
        command=command,
        system=sections.get("system"),
        numerics=numerics,
        init=sections.get("init", {}),
        sweep=sections.get("sweep", {}),
        markov=sections.get("markov", {}),
        landscape=sections.get("landscape", {}),
        ensemble=sections.get("ensemble", {}),
        output=sections.get("output", {}),
        seed=seed,
    )


def _fmt(x):
    return f"{float(x):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _grid_from_numerics(numerics, dim):
    if "bounds" not in numerics or "cells" not in numerics:
        raise ConfigError("numerics.bounds and numerics.cells are required for grid runs")
    bounds = numerics["bounds"]
    cells = numerics["cells"]
    if dim == 1:
        if isinstance(bounds[0], list):
            bounds = bounds[0]
        if isinstance(cells, list):
            cells = cells[0]
        return fpsolve.make_grid(bounds, cells)
    if not isinstance(bounds[0], list):
        raise ConfigError("2d grids need per-axis bounds like [[-3,3],[-3,3]]")
    if not isinstance(cells, list):
        cells = [cells] * dim
    return fpsolve.make_grid(bounds, cells)


def _initial_density(grid, init):
    kind = init.get("kind", "delta")
    cov = init.get("cov")
    if cov is not None and not isinstance(cov, list):
        cov = [[float(cov)]]
    return fpsolve.init_density(
        grid,
        kind,
        mean=init.get("mean"),
        cov=cov,
        eps=init.get("eps"),
    )


def _output_times(numerics):
    spacing = numerics["output_spacing"]
    t_end = numerics["t_end"]
    n = int(round(t_end / spacing))
    if abs(n * spacing - t_end) > 1e-9:
        raise ConfigError("t_end must be a multiple of output_spacing")
    return [round(i * spacing, 12) for i in range(n + 1)]


def _thermo_rows(records):
    return [
        (r.t, r.S, r.ep, r.qex, r.F, r.qhk, r.dSdt_fd, r.dFdt_fd,
         r.res_entropy, r.res_freeenergy)
        for r in records
    ]


def _run_fp(cfg, outdir):
    spec = model.build_system(cfg.system)
    grid = _grid_from_numerics(cfg.numerics, spec.dim)
    f0 = _initial_density(grid, cfg.init)
    times = _output_times(cfg.numerics)
    snaps = fpsolve.solve(spec, f0, cfg.numerics["t_end"], times, dt=cfg.numerics["dt"])
    stat = fpsolve.stationary_density(
        spec, grid, cfg.numerics.get("stationary_method", "direct-null-space")
    )
    records = thermo.instrument(spec, snaps, stat)
    _write_csv(outdir / "thermo.csv", THERMO_COLUMNS, _thermo_rows(records))
    if cfg.output.get("dump_density", False):
        for i, snap in enumerate(snaps):
            fpsolve.write_density(snap, outdir / f"density_{i:04d}.txt")
    interior = [r for r in records if not r.endpoint]
    worst = max(r.res_entropy for r in interior) if interior else 0.0
    return f"fp-run complete: {len(records)} records, max interior res_entropy {worst:.3e}"


def _ou_records(ou, init, times):
    n = len(times)
    S = np.empty(n)
    F = np.empty(n)
    ep = np.empty(n)
    qex = np.empty(n)
    qhk = np.empty(n)
    for i, t in enumerate(times):
        state = ougauss.propagate(ou, init, t)
        S[i] = ougauss.gaussian_entropy(state)
        ep[i] = ougauss.ou_entropy_production(ou, state)
        qex[i] = ougauss.ou_heat_exchange(ou, state)
        F[i], qhk[i] = ougauss.ou_free_energy_and_qhk(ou, state)
    dsdt = thermo._fd_series(np.asarray(times), S)
    dfdt = thermo._fd_series(np.asarray(times), F)
    records = []
    for i, t in enumerate(times):
        records.append(
            thermo.ThermoRecord(
                t=float(t), S=float(S[i]), ep=float(ep[i]), qex=float(qex[i]),
                F=float(F[i]), qhk=float(qhk[i]), dSdt_fd=float(dsdt[i]),
                dFdt_fd=float(dfdt[i]),
                res_entropy=abs(float(dsdt[i] - ep[i] - qex[i])),
                res_freeenergy=abs(float(dfdt[i] + ep[i] - qhk[i])),
                endpoint=(i == 0 or i == n - 1),
            )
        )
    return records


def _run_ou(cfg, outdir):
    spec = model.build_system(cfg.system)
    ou = ougauss.from_system(spec)
    mean = np.asarray(cfg.init["mean"], dtype=float)
    cov = np.atleast_2d(np.asarray(cfg.init["cov"], dtype=float))
    init = ougauss.GaussianState(mean, cov)
    times = _output_times(cfg.numerics)
    records = _ou_records(ou, init, times)
    _write_csv(outdir / "thermo.csv", THERMO_COLUMNS, _thermo_rows(records))
    interior = [r for r in records if not r.endpoint]
    worst = max(r.res_entropy for r in interior) if interior else 0.0
    return f"ou-run complete: {len(records)} records, max interior res_entropy {worst:.3e}"


def _run_sweep(cfg, outdir):
    spec = model.build_system(cfg.system)
    route = cfg.sweep.get("route", "auto")
    grid = None
    if route == "fp" or (route == "auto" and not (spec.is_linear and spec.constant_diffusion)):
        grid = _grid_from_numerics(cfg.numerics, spec.dim)
    sigma0 = cfg.sweep.get("sigma0")
    if sigma0 is not None:
        sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    result = asympt.alpha_sweep(
        spec,
        cfg.sweep["alphas"],
        cfg.sweep["t_probe"],
        np.asarray(cfg.sweep["x0"], dtype=float),
        route=route,
        sigma0=sigma0,
        grid=grid,
        dt=cfg.numerics["dt"],
    )
    rows = [
        (a, ep, qex, ep + qex, result.predicted_slope)
        for a, ep, qex in zip(result.alphas, result.ep_values, result.qex_values)
    ]
    _write_csv(outdir / "sweep.csv", "alpha,ep,qex,sum,predicted_slope", rows)
    fit_lines = [
        f"ep_slope = {_fmt(result.ep_slope)}",
        f"ep_slope_se = {_fmt(result.ep_slope_se)}",
        f"ep_intercept = {_fmt(result.ep_intercept)}",
        f"qex_slope = {_fmt(result.qex_slope)}",
        f"qex_slope_se = {_fmt(result.qex_slope_se)}",
        f"qex_intercept = {_fmt(result.qex_intercept)}",
        f"sum_slope = {_fmt(result.sum_slope)}",
        f"sum_slope_se = {_fmt(result.sum_slope_se)}",
        f"predicted_slope = {_fmt(result.predicted_slope)}",
        f"ep_residual_rms = {_fmt(result.ep_residual_rms)}",
        f"qex_residual_rms = {_fmt(result.qex_residual_rms)}",
    ]
    (outdir / "fit.txt").write_text("\n".join(fit_lines) + "\n")
    return (
        f"alpha-sweep complete: ep_slope {result.ep_slope:.6f} vs predicted "
        f"{result.predicted_slope:.6f}, sum_slope {result.sum_slope:.3e}"
    )


def _run_markov(cfg, outdir):
    chain = markov.MarkovChain(
        np.asarray(cfg.markov["p"], dtype=float),
        np.asarray(cfg.markov["P"], dtype=float),
    )
    generated = markov.mean_entropy_generated(chain)
    change = markov.mean_entropy_change(chain)
    folding = markov.folding_entropy(chain)
    residual = markov.decomposition_check(chain)
    line = (
        f"generated={_fmt(generated)} change={_fmt(change)} "
        f"folding={_fmt(folding)} residual={_fmt(residual)}"
    )
    (outdir / "markov.txt").write_text(line + "\n")
    return line


def _run_landscape(cfg, outdir):
    spec = model.build_system(cfg.system)
    kind = cfg.landscape.get("kind", "auto")
    stationary = None
    if kind == "grid" or (
        kind == "auto" and spec.potential is None
        and not (spec.is_linear and spec.constant_diffusion)
    ):
        grid = _grid_from_numerics(cfg.numerics, spec.dim)
        stationary = fpsolve.stationary_density(spec, grid)
        kind = "grid"
    provider = asympt.phi_ss_provider(spec, kind, stationary)
    n_points = cfg.landscape.get("n_points", 100)
    bounds = cfg.landscape.get("sample_bounds")
    if bounds is None:
        bounds = [[-1.0, 1.0]] * spec.dim
    elif not isinstance(bounds[0], list):
        bounds = [bounds]
    rng = np.random.default_rng(cfg.seed)
    pts = np.column_stack(
        [rng.uniform(lo, hi, size=n_points) for lo, hi in bounds]
    )
    checks = asympt.landscape_check(spec, provider, pts)
    header = (
        ",".join(f"x{i}" for i in range(spec.dim))
        + ",ortho,norm_dgradphi,norm_gamma,norm_b,pythagoras_residual"
    )
    rows = []
    for c in checks:
        pyth = c.norms[0] + c.norms[1] - c.norms[2] - 2.0 * c.ortho
        rows.append(tuple(c.point) + (c.ortho, *c.norms, pyth))
    _write_csv(outdir / "landscape.csv", header, rows)
    worst = max(abs(c.ortho) for c in checks)
    return f"landscape-check complete: max |gamma . grad phi| = {worst:.3e} ({provider.source})"


def _run_ensemble(cfg, outdir):
    spec = model.build_system(cfg.system)
    result = asympt.simulate_ensemble(
        spec,
        np.asarray(cfg.ensemble["x0"], dtype=float),
        cfg.ensemble.get("n_paths", 10000),
        cfg.ensemble.get("dt", 1e-3),
        cfg.ensemble["t_end"],
        cfg.seed,
        output_times=cfg.ensemble.get("output_times"),
    )
    dim = spec.dim
    header = "t," + ",".join(f"mean{i}" for i in range(dim)) + "," + ",".join(
        f"cov{i}{j}" for i in range(dim) for j in range(dim)
    )
    rows = [
        (t, *m, *c.ravel())
        for t, m, c in zip(result.times, result.means, result.covs)
    ]
    _write_csv(outdir / "ensemble.csv", header, rows)
    return f"ensemble complete: {result.n_paths} paths, {len(result.times)} output times"


_RUNNERS = {
    "fp-run": _run_fp,
    "ou-run": _run_ou,
    "alpha-sweep": _run_sweep,
    "markov": _run_markov,
    "landscape-check": _run_landscape,
    "ensemble": _run_ensemble,
}


def run(cfg, outdir, config_text="", overwrite=False):
    """Execute a validated RunConfig, writing artifacts into outdir."""
    outdir = Path(outdir)
    if outdir.exists() and not overwrite:
        if any(outdir.iterdir()):
            raise OSError(
                f"output directory '{outdir}' already exists; pass --overwrite "
                "or choose a fresh directory"
            )
    outdir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    summary = _RUNNERS[cfg.command](cfg, outdir)
    wall = time.perf_counter() - started
    manifest = [
        f"command = {cfg.command}",
        f"fplab_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"python = {sys.version.split()[0]}",
        f"seed = {cfg.seed}",
        f"abs_tol = {_fmt(cfg.numerics['abs_tol'])}",
        f"rel_tol = {_fmt(cfg.numerics['rel_tol'])}",
        f"dt = {_fmt(cfg.numerics['dt'])}",
        f"wall_time_s = {wall:.3f}",
        "[config]",
        config_text.rstrip("\n"),
    ]
    (outdir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return summary


def report(run_dir):
    """Summarize a finished run directory against its configured tolerances.

    Returns (text, ok); missing manifests raise OSError.
    """
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.txt"
    if not manifest_path.exists():
        raise OSError(f"no manifest in '{run_dir}'")
    meta = {}
    for line in manifest_path.read_text().splitlines():
        if line.strip() == "[config]":
            break
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    lines = [f"run: {meta.get('command', '?')} (seed {meta.get('seed', '?')})"]
    ok = True
    thermo_path = run_dir / "thermo.csv"
    if thermo_path.exists():
        abs_tol = float(meta.get("abs_tol", 1e-3))
        rel_tol = float(meta.get("rel_tol", 1e-2))
        dt = float(meta.get("dt", 1e-3))
        burn_in = 10.0 * dt
        rows = []
        with open(thermo_path) as fh:
            header = fh.readline().strip().split(",")
            for line in fh:
                rows.append(dict(zip(header, map(float, line.split(",")))))
        interior = rows[1:-1]
        judged = [r for r in interior if r["t"] >= burn_in - 1e-12]
        neg = sum(1 for r in rows if r["ep"] < -1e-10 or r["qhk"] < -1e-10
                  or r["F"] < -1e-10)
        lines.append(f"nonnegativity violations: {neg}")
        if neg:
            ok = False
        for res_key in ("res_entropy", "res_freeenergy"):
            worst = max((r[res_key] for r in judged), default=0.0)
            bad = next(
                (r for r in judged
                 if r[res_key] > max(abs_tol, rel_tol * (abs(r["ep"]) + abs(r["qex"])))),
                None,
            )
            if bad is None:
                lines.append(f"PASS: max {res_key} {worst:.3e}")
            else:
                ok = False
                lines.append(
                    f"FAIL: {res_key} {bad[res_key]:.3e} exceeds tolerance at t={bad['t']:g}"
                )
    else:
        lines.append("no thermo.csv; nothing to judge")
    return "\n".join(lines), ok


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="fplab",
        description="Diffusion dynamics with entropy and free-energy balance instrumentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--out", default=None, help="run directory (default: ./<command>-out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--overwrite", action="store_true")
    rep = sub.add_parser("report")
    rep.add_argument("run_dir")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            text, ok = report(args.run_dir)
            print(text)
            return 0 if ok else 1
        try:
            config_text = Path(args.config).read_text()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 4
        cfg = parse_config(config_text, args.command)
        if args.seed is not None:
            cfg.seed = args.seed
        outdir = args.out if args.out is not None else f"{args.command}-out"
        summary = run(cfg, outdir, config_text, overwrite=args.overwrite)
        print(summary)
        return 0
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericsError, RegimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
