"""Command-line entry point.

Exit codes: 0 success, 1 domain error (divergence, stiffness refusal, failed
check), 2 usage error (bad arguments, invalid configuration, missing file).
The ``--workers`` flag only changes parallelism; outputs and manifests are
identical for any worker count.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bounds_diagnostics import coupled_path_statistics, moment_bound_finite, moment_statistics, stability_bound_finite
from .config import ConfigError, RunConfig, dump_config, load_config
from .csvio import (BOUNDS_HEADER, CONDITIONS_HEADER, GALERKIN_MODES_HEADER, GALERKIN_SWEEP_HEADER, PICARD_HEADER,
                    fmt, read_ensemble_csv, read_paths_csv, write_ensemble_csv, write_manifest, write_moments_csv,
                    write_path_csv, write_paths_csv, write_rows)
from .empirical_law import GroundMetric, LawFlow, w2
from .galerkin_spde import (STABILITY_LIMIT, GelfandSpec, SpectralField, SpectralSegment, galerkin_integrate,
                            uniform_bound_sweep)
from .mckean_fixed_point import particle_solve, picard_solve
from .models import (LinearMeanFieldParams, PorousMediumParams, linear_meanfield_model, probe_conditions,
                     probe_psi_conditions, zero_model)
from .sdde_euler import NoisePlan, integrate_ensemble
from .segment_core import Segment, TimeGrid


class UsageError(Exception):
    pass


class DomainError(Exception):
    pass


# --- building blocks from a config --------------------------------------------


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace("solver", seed=args.seed)
    if getattr(args, "particles", None) is not None:
        cfg = cfg.replace("solver", N=args.particles)
    k = getattr(args, "dt_exponent", None)
    if k is not None:
        r0 = cfg.grid.m * cfg.grid.dt
        cfg = cfg.replace("grid", m=2**k, dt=r0 / 2**k)
        try:
            cfg.time_grid()
        except ValueError as exc:
            raise UsageError(f"--dt-exponent {k}: {exc}") from None
    return cfg


def build_model(cfg: RunConfig):
    mc = cfg.model
    if mc.kind == "porous_medium":
        raise UsageError("porous_medium is a Galerkin model; use the galerkin subcommand")
    if mc.kind == "zero":
        return zero_model(mc.dim), None
    sigma = np.array(mc.sigma) if isinstance(mc.sigma, tuple) else mc.sigma * np.eye(mc.dim)
    params = LinearMeanFieldParams(mc.a_self, mc.b_delay, mc.c_mean, mc.e_mean_delay, sigma)
    return linear_meanfield_model(params, horizon=cfg.grid.T), params


def build_psi(cfg: RunConfig, grid: TimeGrid, dim: int) -> Segment:
    v, s = cfg.initial.value, cfg.initial.slope
    return Segment.from_function(grid, lambda th: v + s * th, dim)


def _load(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required")
    return apply_overrides(load_config(args.config), args)


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(out: Path, cfg: RunConfig, files: list[str]):
    (out / "config.toml").write_text(dump_config(cfg), encoding="utf-8")
    write_manifest(out, cfg.digest(), cfg.solver.seed, __version__, files + ["config.toml"])


# --- subcommands ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    grid = cfg.time_grid()
    model, _ = build_model(cfg)
    psi = build_psi(cfg, grid, model.dim)
    n = args.particles or 1
    flow = LawFlow.constant(grid, psi, n)
    run = integrate_ensemble(model, psi, flow, grid, cfg.solver.seed, n, workers=args.workers)
    target = args.out or sys.stdout
    if n == 1:
        write_path_csv(run.path(0), target)
    else:
        write_ensemble_csv(run.law_flow.at_step(grid.n_horizon), target)
    return 0


def _write_solution(out: Path, cfg: RunConfig, sol, p: float) -> list[str]:
    grid = sol.grid
    files = ["moments.csv", "final_ensemble.csv"]
    write_moments_csv(sol.paths, grid.m, grid.dt, p, out / "moments.csv")
    write_ensemble_csv(sol.law_flow.at_step(grid.n_horizon), out / "final_ensemble.csv")
    if cfg.output.save_paths:
        write_paths_csv(sol.paths, out / "paths.csv")
        files.append("paths.csv")
    if cfg.output.snapshots:
        flow = LawFlow(grid, sol.paths, cfg.solver.macro_stride)
        for j in range(len(flow)):
            name = f"snapshot_{j:05d}.csv"
            write_ensemble_csv(flow.snapshot(j), out / name)
            files.append(name)
    return files


def cmd_particles(args) -> int:
    cfg = _load(args)
    grid = cfg.time_grid()
    model, _ = build_model(cfg)
    psi = build_psi(cfg, grid, model.dim)
    sol = particle_solve(model, psi, grid, cfg.solver.seed, cfg.solver.N, workers=args.workers,
                         macro_stride=cfg.solver.macro_stride)
    out = _out_dir(args, cfg)
    _finish(out, cfg, _write_solution(out, cfg, sol, model.p))
    return 0


def cmd_picard(args) -> int:
    cfg = _load(args)
    grid = cfg.time_grid()
    model, _ = build_model(cfg)
    psi = build_psi(cfg, grid, model.dim)
    s = cfg.solver
    sol, report = picard_solve(model, psi, grid, s.seed, s.N, max_iters=s.max_iters, tol=s.tol,
                               workers=args.workers, w2_cap=s.w2_cap, metric_stride=s.metric_stride or None,
                               macro_stride=s.macro_stride)
    out = _out_dir(args, cfg)
    write_rows(out / "picard_report.csv", PICARD_HEADER,
               ((r.iter, r.flow_distance, r.path_distance) for r in report.records))
    files = ["picard_report.csv"] + _write_solution(out, cfg, sol, model.p)
    _finish(out, cfg, files)
    if not report.converged:
        print(f"picard: not converged after {len(report.records)} iterations", file=sys.stderr)
    return 0


def cmd_galerkin(args) -> int:
    cfg = _load(args)
    g = cfg.galerkin
    overrides = {}
    if args.modes is not None:
        overrides["n_modes"] = args.modes
    if args.modes_sweep is not None:
        try:
            overrides["modes_sweep"] = tuple(int(v) for v in args.modes_sweep.split(",") if v.strip())
        except ValueError:
            raise UsageError(f"--modes-sweep expects integers, got {args.modes_sweep!r}") from None
    if args.p is not None:
        overrides["p"] = args.p
    if args.L is not None:
        overrides["L"] = args.L
    if args.force:
        overrides["force"] = True
    if overrides:
        cfg = cfg.replace("galerkin", **overrides)
        g = cfg.galerkin
    if g.p < 2 or g.L <= 0 or g.n_modes < 1:
        raise UsageError("galerkin needs p >= 2, L > 0 and at least one mode")
    grid = cfg.time_grid()
    params = PorousMediumParams(p=g.p, domain_length=g.L)
    spec = GelfandSpec(g.L, g.p, g.n_modes, g.n_x or None)
    n_max = max((g.n_modes,) + tuple(g.modes_sweep))
    stiffness = grid.dt * (n_max * math.pi / g.L) ** 2
    if stiffness > STABILITY_LIMIT and not g.force:
        raise DomainError(f"dt * lambda_n = {stiffness:.4g} > {STABILITY_LIMIT}; reduce dt or pass --force")

    width = max(n_max, 1)
    field0 = SpectralField.mode(1, width, cfg.initial.value)
    psi0 = SpectralSegment.constant(grid, field0)
    seed = cfg.solver.seed
    run = galerkin_integrate(params, spec, SpectralSegment(psi0.r0, psi0.dt, psi0.m, psi0.values[:, : g.n_modes]),
                             grid, seed, g.replicas, workers=args.workers)
    out = _out_dir(args, cfg)
    st = run.mode_statistics()
    write_rows(out / "galerkin_modes.csv", GALERKIN_MODES_HEADER,
               zip(st["k"], st["lambda_k"], st["mean"], st["var"], st["var_theory"]))
    write_rows(out / "galerkin_moments.csv", ("t", "h_moment", "v_moment", "psi_moment"),
               zip(run.times(), run.h_moment, run.v_moment, run.psi_moment))
    files = ["galerkin_modes.csv", "galerkin_moments.csv"]
    if g.modes_sweep:
        table = uniform_bound_sweep(params, g.modes_sweep, psi0, grid, seed, g.replicas, workers=args.workers)
        write_rows(out / "galerkin_sweep.csv", GALERKIN_SWEEP_HEADER,
                   ((r.n, r.v_integral, r.a_dual, r.b_hs, r.b_count, r.h_sup) for r in table.rows))
        files.append("galerkin_sweep.csv")
    _finish(out, cfg, files)
    return 0


def cmd_w2(args) -> int:
    a = read_ensemble_csv(args.a, r0=args.r0)
    b = read_ensemble_csv(args.b, r0=args.r0)
    print(fmt(w2(a, b, GroundMetric.parse(args.metric), cap=args.cap)))
    return 0


def cmd_check_conditions(args) -> int:
    cfg = _load(args)
    grid = cfg.time_grid()
    s = cfg.solver
    seeds = range(s.seed, s.seed + s.probe_seeds)
    if cfg.model.kind == "porous_medium":
        g = cfg.galerkin
        params = PorousMediumParams(p=g.p, domain_length=g.L)
        spec = GelfandSpec(g.L, g.p, g.n_modes, g.n_x or None)
        reports = [probe_psi_conditions(params, grid, spec, n_trials=s.probe_trials, seed=k) for k in seeds]
    else:
        model, _ = build_model(cfg)
        reports = [probe_conditions(model, grid, n_trials=s.probe_trials, seed=k) for k in seeds]
    names = list(reports[0].margins)
    rows = []
    for name in names:
        worst = min(r.margins[name] for r in reports)
        bad = sum(r.violations[name] for r in reports)
        rows.append((name, worst, bad, worst >= 0))
    target = Path(args.out) / "conditions.csv" if args.out else sys.stdout
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
    write_rows(target, CONDITIONS_HEADER, rows)
    return 0 if all(r[3] for r in rows) else 1


def _load_run(directory) -> tuple[RunConfig, np.ndarray]:
    directory = Path(directory)
    cfg = load_config(directory / "config.toml")
    paths_file = directory / "paths.csv"
    if not paths_file.exists():
        raise UsageError(f"{paths_file} missing; rerun with output.save_paths = true")
    paths = read_paths_csv(paths_file)
    if paths.shape[1] != cfg.time_grid().n_nodes:
        raise UsageError(f"{paths_file} does not match the run's grid")
    return cfg, paths


def cmd_check_bounds(args) -> int:
    cfg, paths = _load_run(args.run_dir)
    grid = cfg.time_grid()
    model, _ = build_model(cfg)
    k = model.constants
    p = model.p
    st = moment_statistics(paths, grid.m, grid.dt, p)
    reports = [moment_bound_finite(k.alpha, k.gamma, st["init_sup_sq"][0], st["init_lp"][0], grid.T,
                                   *st["G"])]
    if args.other_run_dir:
        cfg2, paths2 = _load_run(args.other_run_dir)
        if cfg2.grid != cfg.grid or cfg2.solver.seed != cfg.solver.seed or paths2.shape != paths.shape:
            raise DomainError("coupled runs must share grid, seed and particle count")
        cs = coupled_path_statistics(paths, paths2, grid.m, grid.dt, p)
        reports.append(stability_bound_finite(k.beta, cs["init_sup_sq"][0], cs["init_lp"][0], grid.T,
                                              *cs["sup_sq"]))
    rows = [(r.name, r.lhs, r.stderr, r.rhs, r.margin, r.passed) for r in reports]
    write_rows(args.out or sys.stdout, BOUNDS_HEADER, rows)
    return 0 if all(r.passed for r in reports) else 1


# --- parser ----------------------------------------------------------------------


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvsdde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory (default: output.directory)"):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=_seed)
        p.add_argument("--out", help=out_help)
        p.add_argument("--workers", type=_pos_int, default=1, help="worker threads (does not change results)")

    p = sub.add_parser("simulate", help="frozen-law Euler run started from the constant extension of psi")
    common(p, "CSV file (default: stdout)")
    p.add_argument("--particles", type=_pos_int)
    p.add_argument("--dt-exponent", type=_nonneg_int, help="dt = r0 / 2^k")
    p.set_defaults(func=cmd_simulate)

    for name, func, text in (("particles", cmd_particles, "interacting-particle solve"),
                             ("picard", cmd_picard, "Picard iteration on law flows")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--particles", type=_pos_int)
        p.add_argument("--dt-exponent", type=_nonneg_int, help="dt = r0 / 2^k")
        p.set_defaults(func=func)

    p = sub.add_parser("galerkin", help="spectral Galerkin run of the porous-medium example")
    common(p)
    p.add_argument("--modes", type=_pos_int)
    p.add_argument("--modes-sweep", help="comma-separated mode counts, e.g. 8,16,32")
    p.add_argument("--p", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--force", action="store_true", help="run even if dt * lambda_n exceeds the stability limit")
    p.add_argument("--dt-exponent", type=_nonneg_int, help="dt = r0 / 2^k")
    p.set_defaults(func=cmd_galerkin)

    p = sub.add_parser("w2", help="W2 distance between two ensemble CSV files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metric", choices=("sup", "l2"), default="sup")
    p.add_argument("--r0", type=float, default=1.0, help="delay length used for node spacing (l2 metric)")
    p.add_argument("--cap", type=_pos_int, default=512, help="largest N solved exactly")
    p.set_defaults(func=cmd_w2)

    p = sub.add_parser("check-conditions", help="probe the coercivity, monotonicity and growth conditions")
    common(p, "directory for conditions.csv (default: stdout)")
    p.set_defaults(func=cmd_check_conditions)

    p = sub.add_parser("check-bounds", help="evaluate moment and stability bounds on run directories")
    p.add_argument("run_dir")
    p.add_argument("other_run_dir", nargs="?")
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_check_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (ConfigError, UsageError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"mvsdde {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"mvsdde {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
