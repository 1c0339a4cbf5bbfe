"""Command line front end: ``beltrami <subcommand> [options]``.

Subcommands
    run       execute every run in a config file
    classify  classification runs (config runs with mode=classify, or --field)
    simulate  particle (sde) runs
    solve     grid (fpe) runs
    catalog   classify the whole catalog and compare with the expected classes
    report    print the summaries stored in run output directories

Exit status: 0 when every configured assertion passes, 1 when an assertion
fails, 2 for configuration errors, 3 for solver failures (non-convergence,
non-finite values, positivity violations under --strict).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__, catalog, kernels
from .config import RunConfig, parse_config
from .diagnostics import (boltzmann_residual, energy, entropy_grid, entropy_particles, entropy_production,
                          h0_rate_average, histogram, plugin_entropy_bias, plugin_entropy_stderr, TimeSeries,
                          write_summary)
from .errors import BeltramiError, ConfigError, DomainError, SimulationError
from .expr import resolve_h0
from .fpe import FpeOperator
from .grid import DensityField, Grid3, density_records, write_density_csv
from .operators import TimeDependentField, classify, field_at
from .sde import BinaryWriter, DomainSpec, EnsembleState, SdeParams, iterate

OUT_ENV = "BELTRAMI_OUT"
DEFAULT_OUT = "beltrami-out"
CSV_PARTICLE_LIMIT = 10_000
EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SUBCOMMAND_MODES = {"classify": "classify", "simulate": "sde", "solve": "fpe", "catalog": "catalog-report"}


class RunFailure(BeltramiError):
    """A run could not produce a trustworthy result."""

    def __init__(self, message: str, summary: dict):
        super().__init__(message)
        self.summary = summary


# -- run executors --------------------------------------------------------------


def _entry(cfg: RunConfig):
    return catalog.get_entry(cfg.field)


def _h0(cfg: RunConfig):
    return resolve_h0(cfg.H0)


def execute_classify(cfg: RunConfig, out: Path, strict: bool) -> dict:
    entry = _entry(cfg)
    x = entry.samples(cfg.samples, seed=cfg.seed)
    report = classify(entry.operator, x, tol=cfg.class_tol)
    verdicts = report.verdicts()
    summary = dict(report.to_dict())
    summary["field"] = entry.name
    summary["expected"] = entry.expected_class
    summary["matches_expected"] = all(verdicts[k] == v for k, v in entry.expected_class.items())
    summary["tolerances"] = {"classification": report.tolerance}
    with open(out / "report.json", "w") as fh:
        json.dump(_plain(summary), fh, indent=2, sort_keys=True)
    return summary


def execute_catalog(cfg: RunConfig, out: Path, strict: bool) -> dict:
    entries = {}
    for name in catalog.names():
        entry = catalog.get_entry(name)
        x = entry.samples(cfg.samples, seed=cfg.seed)
        report = classify(entry.operator, x, tol=cfg.class_tol)
        rec = {"verdicts": report.verdicts(), "expected": entry.expected_class,
               "residuals": {k: v for k, v in report.to_dict().items() if k.startswith("max_")},
               "matches_expected": all(report.verdicts()[k] == v for k, v in entry.expected_class.items())}
        if entry.proportionality is not None:
            w = entry.field
            rec["proportionality_residual"] = float(np.max(np.abs(w.curl(x) - entry.proportionality(x)[..., None] * w(x))))
        entries[name] = rec
    summary = {"entries": entries, "all_match": all(e["matches_expected"] for e in entries.values()),
               "tolerances": {"classification": report.tolerance}, "samples": cfg.samples}
    with open(out / "catalog.json", "w") as fh:
        json.dump(_plain(summary), fh, indent=2, sort_keys=True)
    return summary


def _sde_domain(cfg: RunConfig) -> DomainSpec:
    kinds = tuple("reflecting" if k == "zero-flux" else k for k in cfg.boundary)
    return DomainSpec(cfg.lower, cfg.upper, kinds)


def _grid(cfg: RunConfig) -> Grid3:
    kinds = tuple("zero-flux" if k == "reflecting" else k for k in cfg.boundary)
    return Grid3(cfg.grid, cfg.lower, cfg.upper, kinds)


def _center(cfg: RunConfig):
    if cfg.bump_center is not None:
        return np.asarray(cfg.bump_center, float)
    return 0.5 * (np.asarray(cfg.lower) + np.asarray(cfg.upper))


def execute_sde(cfg: RunConfig, out: Path, strict: bool) -> dict:
    entry = _entry(cfg)
    H0 = _h0(cfg)
    params = SdeParams(D=cfg.D, gamma=cfg.gamma, kappa=cfg.kappa, dt=cfg.dt, steps=cfg.steps, seed=cfg.seed,
                       scheme=cfg.scheme)
    domain = _sde_domain(cfg)
    if cfg.initial == "bump":
        state = EnsembleState.gaussian(domain, cfg.N, _center(cfg), cfg.bump_width, seed=cfg.seed)
    else:
        state = EnsembleState.uniform(domain, cfg.N, seed=cfg.seed)
    stride = cfg.stride or max(cfg.steps, 1)
    use_csv = cfg.format == "csv" or (cfg.format == "auto" and cfg.N <= CSV_PARTICLE_LIMIT)
    h_initial = field_at(H0, 0.0)(state.positions)
    rate_series = []
    snapshots = 0
    try:
        if use_csv:
            fh = open(out / "snapshots.csv", "w")
            fh.write("t,particle_id," + ",".join(f"x{i + 1}" for i in range(state.dimension)) + "\n")
        else:
            writer = BinaryWriter(out / "snapshots.bin", cfg.N, state.dimension, stride)
        last = state
        for snap in iterate(state, entry.operator, H0, params, domain, stride):
            last = snap
            snapshots += 1
            if use_csv:
                for pid, row in zip(snap.particle_ids, snap.positions):
                    fh.write(f"{snap.time!r},{int(pid)}," + ",".join(repr(float(v)) for v in row) + "\n")
            else:
                writer.write(snap.time, snap.positions)
            if isinstance(H0, TimeDependentField) and H0.rate is not None:
                rate_series.append((snap.time, h0_rate_average(snap, H0)))
    except SimulationError as exc:
        raise RunFailure(str(exc), {"error": str(exc)}) from None
    finally:
        (fh if use_csv else writer).close()

    h_final = field_at(H0, last.time)(last.positions)
    summary = {
        "steps": cfg.steps, "final_time": last.time, "N": cfg.N, "snapshots": snapshots,
        "snapshot_file": "snapshots.csv" if use_csv else "snapshots.bin",
        "E_initial": float(np.mean(h_initial)), "E_final": float(np.mean(h_final)),
        "E_drift": float(np.mean(h_final) - np.mean(h_initial)),
        "max_abs_dH0": float(np.max(np.abs(h_final - h_initial))) if cfg.N else 0.0,
        "tolerances": {"dt": cfg.dt, "scheme": cfg.scheme},
    }
    if rate_series:
        TimeSeries(*zip(*rate_series), label="h0_rate_average").to_csv(out / "h0_rate.csv")
        summary["h0_rate_average_final"] = rate_series[-1][1]
    try:
        grid = _grid(cfg)
        h = histogram(last, grid)
        expected = cfg.N / h.counts.size
        sd = math.sqrt(expected * (1 - 1 / h.counts.size))
        summary.update({
            "S_particles": entropy_particles(h), "S_bias": plugin_entropy_bias(h), "S_stderr": plugin_entropy_stderr(h),
            "S_uniform": math.log(grid.volume), "max_bin_zscore": float(np.max(np.abs(h.counts - expected)) / sd),
        })
    except (ValueError, DomainError):
        pass
    return summary


def _reference(cfg: RunConfig, entry, H0, grid: Grid3):
    """Analytic equilibrium for the run, when one is known."""
    x = grid.centers()
    if cfg.H0 == "zero" and entry.equilibrium is not None and cfg.kappa == 0:
        return entry.equilibrium(x), "catalog equilibrium"
    if entry.expected_class.get("is_beltrami"):
        if cfg.H0 == "zero":
            return np.ones(grid.shape), "uniform"
        if cfg.beta > 0 and math.isclose(cfg.kappa, 1.0 / cfg.beta, rel_tol=1e-12):
            return np.exp(-cfg.beta * H0(x)), "exp(-beta H0)"
    return None, None


def _initial_density(cfg: RunConfig, grid: Grid3) -> DensityField:
    if cfg.initial == "uniform":
        return DensityField.uniform(grid)
    c = _center(cfg)
    ext = np.asarray(grid.upper) - np.asarray(grid.lower)
    d = grid.centers() - c
    for a, per in enumerate(grid.periodic):
        if per:
            d[..., a] -= ext[a] * np.round(d[..., a] / ext[a])
    return DensityField(np.exp(-0.5 * np.sum(d * d, axis=-1) / cfg.bump_width ** 2), grid).normalized()


def execute_fpe(cfg: RunConfig, out: Path, strict: bool) -> dict:
    entry = _entry(cfg)
    H0 = _h0(cfg)
    if isinstance(H0, TimeDependentField):
        raise ConfigError([f"[{cfg.name}] H0: the grid solver needs a time-independent H0"])
    grid = _grid(cfg)
    op = FpeOperator(grid, entry.field, H0, cfg.D, cfg.gamma, cfg.kappa)
    f0 = _initial_density(cfg, grid)
    every = cfg.stride or 100
    dt = cfg.dt if cfg.dt is not None else op.stable_dt()
    try:
        with open(out / "progress.jsonl", "w") as log:
            res = op.steady_state(f0, cfg.tol, cfg.max_steps, dt=dt, record_every=every, log=log,
                                  log_every=every, strict=strict)
    except SimulationError as exc:
        raise RunFailure(str(exc), {"error": str(exc)}) from None

    f = res.density
    write_density_csv(f, out / "density.csv")
    with BinaryWriter(out / "density.bin", f.values.size, 4, every) as w:
        w.write(res.time, density_records(f))
    times = res.series("time")
    keep = np.concatenate([[True], np.diff(times) > 0])
    TimeSeries(times[keep], res.series("entropy")[keep], "entropy").to_csv(out / "entropy.csv")
    TimeSeries(times[keep], res.series("mass")[keep], "mass").to_csv(out / "mass.csv")

    summary = {
        "converged": res.converged, "residual": res.residual, "steps": res.steps, "time": res.time, "dt": res.dt,
        "S_final": entropy_grid(f), "E_initial": energy(f0, H0), "E_final": energy(f, H0),
        "mass_drift": abs(f.mass - f0.mass) / f0.mass, "min_f": f.min, "clip_events": len(res.clip_events),
        "tolerances": {"steady_state": cfg.tol, "stability_dt": op.stable_dt(), "dt": res.dt},
    }
    summary["E_drift"] = summary["E_final"] - summary["E_initial"]
    ref, label = _reference(cfg, entry, H0, grid)
    if ref is not None:
        ref = DensityField(ref, grid).normalized()
        summary["linf_error"] = float(np.max(np.abs(f.values - ref.values)) / np.max(ref.values))
        summary["reference"] = label
    if f.min > 0:
        weight = ref.values if label == "catalog equilibrium" else None
        summary["boltzmann_residual"] = boltzmann_residual(f, H0, op.beta, entry.field, weight=weight)
        summary["entropy_production"] = entropy_production(f, entry.field, H0, op.beta, cfg.D)
    if not res.converged:
        raise RunFailure(f"no steady state within {cfg.max_steps} steps (residual {res.residual:.3e})", summary)
    return summary


EXECUTORS = {"classify": execute_classify, "sde": execute_sde, "fpe": execute_fpe, "catalog-report": execute_catalog}


# -- orchestration --------------------------------------------------------------


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _lookup(summary: dict, metric: str):
    cur = summary
    for part in metric.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


def manifest(cfg: RunConfig, argv, wall: float, summary: dict) -> dict:
    return {
        "run": cfg.name, "mode": cfg.mode, "config": cfg.raw, "resolved": cfg.to_dict(),
        "versions": {"beltrami": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "backend": kernels.BACKEND, "threads": kernels.get_threads(), "seed": cfg.seed,
        "wall_time_s": wall, "tolerances": summary.get("tolerances", {}), "command": list(argv),
        "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }


def execute(cfg: RunConfig, out_root: Path, strict: bool = False, argv=()) -> int:
    """Run one configuration; returns its exit status and writes all artifacts."""
    out = out_root / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status = EXIT_OK
    try:
        summary = EXECUTORS[cfg.mode](cfg, out, strict)
    except RunFailure as exc:
        summary = dict(exc.summary)
        summary["error"] = str(exc)
        status = EXIT_RUNTIME
        with open(out / "error.json", "w") as fh:
            json.dump(_plain({"run": cfg.name, "mode": cfg.mode, "error": str(exc), "diagnostics": exc.summary}),
                      fh, indent=2, sort_keys=True)
    checks = []
    for a in cfg.assertions:
        actual = _lookup(summary, a.metric)
        ok = a.check(actual)
        checks.append({"assertion": str(a), "actual": actual, "passed": ok})
    summary["assertions"] = checks
    summary["passed"] = status == EXIT_OK and all(c["passed"] for c in checks)
    if status == EXIT_OK and not summary["passed"]:
        status = EXIT_ASSERT
    wall = time.perf_counter() - start
    write_summary(out / "summary.json", summary)
    with open(out / "manifest.json", "w") as fh:
        json.dump(_plain(manifest(cfg, argv, wall, summary)), fh, indent=2, sort_keys=True)
    for c in checks:
        print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {cfg.name}: {c['assertion']} (actual {c['actual']})")
    print(f"{cfg.name}: {cfg.mode} {'ok' if status == EXIT_OK else 'exit ' + str(status)} in {wall:.2f}s -> {out}")
    return status


def _adhoc_config(args, mode: str) -> str:
    lines = [f"[run.{args.name or mode}]", f"mode = {mode}"]
    if args.field:
        lines.append(f"field = {args.field}")
    for kv in args.set or []:
        if "=" not in kv:
            raise ConfigError([f"--set expects KEY=VALUE, got {kv!r}"])
        k, v = kv.split("=", 1)
        lines.append(f"{k.strip()} = {v.strip()}")
    return "\n".join(lines) + "\n"


def _load_runs(args, mode):
    if args.config:
        with open(args.config) as fh:
            runs = parse_config(fh.read())
        if mode is not None:
            runs = [r for r in runs if r.mode == mode]
        return runs
    if mode is None:
        raise ConfigError(["--config is required for 'run'"])
    if mode != "catalog-report" and not args.field:
        raise ConfigError(["either --config or --field is required"])
    return parse_config(_adhoc_config(args, mode))


def cmd_report(args) -> int:
    status = EXIT_OK
    for d in args.dirs:
        path = Path(d) / "summary.json"
        if not path.exists():
            print(f"{d}: no summary.json")
            status = max(status, EXIT_CONFIG)
            continue
        summary = json.loads(path.read_text())
        flag = "PASS" if summary.get("passed") else "FAIL"
        print(f"{d}: {flag}")
        for c in summary.get("assertions", []):
            print(f"  [{'PASS' if c['passed'] else 'FAIL'}] {c['assertion']} (actual {c['actual']})")
        if "error" in summary:
            print(f"  error: {summary['error']}")
        if not summary.get("passed"):
            status = max(status, EXIT_ASSERT)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beltrami", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="override the seed of every run")
        p.add_argument("--threads", type=int, default=1, help="threads for the compiled kernels")
        p.add_argument("--strict", action="store_true", help="fail on any positivity clipping")

    for name, helptext in (("run", "execute all runs of a config"), ("classify", "classification runs"),
                           ("simulate", "particle runs"), ("solve", "grid runs"),
                           ("catalog", "classify every catalog field")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        if name != "run":
            p.add_argument("--field", help="catalog field for a run without config")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config key for a run without config")
            p.add_argument("--name", help="run name for a run without config")
    p = sub.add_parser("report", help="summarize run output directories")
    p.add_argument("dirs", nargs="+")
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return cmd_report(args)
    if args.command == "catalog" and not args.config:
        args.field = None
        print("\n".join(f"{n:14s} {catalog.get_entry(n).notes}" for n in catalog.names()))
    mode = SUBCOMMAND_MODES.get(args.command)
    try:
        runs = _load_runs(args, mode)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not runs:
        print("no matching runs in config", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        for r in runs:
            r.seed = args.seed
    kernels.set_threads(args.threads)
    out_root = Path(args.out or os.environ.get(OUT_ENV, DEFAULT_OUT))
    status = EXIT_OK
    for cfg in runs:
        try:
            status = max(status, execute(cfg, out_root, args.strict, argv))
        except ConfigError as exc:
            for e in exc.errors:
                print(f"config error: {e}", file=sys.stderr)
            status = max(status, EXIT_CONFIG)
    return status


if __name__ == "__main__":
    sys.exit(main())
