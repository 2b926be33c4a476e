"""Experiment runner: method comparisons, step-size sweeps, sparsity and self-tests.

Usage::

    kinetic-magnus compare --family langevin-constant --d 50 --M 10
    kinetic-magnus sweep --d 100 --dts 0.05,0.1,0.2
    kinetic-magnus sparsity --d 50 --patterns
    kinetic-magnus --selftest
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sparse
from .analysis import error_report
from .benchmark import LangevinParams, exact_ensemble, gaussian_datum
from .config import ExperimentConfig, MethodSpec, build_config, parse_method_flag
from .errors import ConfigurationError, KineticMagnusError, ReferenceFailedError
from .euler import EulerConfig, solve_euler
from .grid import GridSpec, build_grid
from .magnus import MagnusConfig, SolutionEnsemble, solve_iterated_magnus
from .operators import (
    assemble_diffusion,
    assemble_drift,
    precompute_commutators,
    sample_coefficients,
    sparsity_report,
)
from .stochastics import BrownianBatch, dump_path, simulate_brownian, steps_between

log = logging.getLogger("kinetic_magnus")

RESULTS_HEADER = ("method", "order", "d", "dt", "dt_leb", "M", "seed", "kappa",
                  "err", "ame", "time_per_sim_s", "blowups")
SWEEP_HEADER = ("dt", "err_m2", "err_m3", "time_m2", "time_m3", "blowups")


@dataclass
class Problem:
    """Grid, sampled coefficients, operators and initial datum for one config."""

    grid: GridSpec
    fields: object
    A: object
    B: object
    phi: np.ndarray

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> "Problem":
        grid = GridSpec(build_grid(cfg.a_x, cfg.b_x, cfg.d), build_grid(cfg.a_v, cfg.b_v, cfg.d))
        fields = sample_coefficients(cfg.coefficient_family(), grid)
        return cls(grid, fields, assemble_diffusion(fields, grid), assemble_drift(fields, grid),
                   gaussian_datum(grid))


def run_method(method: MethodSpec, problem: Problem, batch: BrownianBatch, cfg: ExperimentConfig,
               comms=None) -> SolutionEnsemble:
    if method.kind == "euler":
        ens = solve_euler(EulerConfig(method.dt, cfg.record_times, cfg.blowup_norm_cap),
                          problem.fields, problem.grid, problem.phi, batch, cfg.T)
    else:
        adaptive = method.kind == "m3-adaptive"
        mc = MagnusConfig(order=method.order, dt=method.dt, expmv_tol=cfg.expmv_tol,
                          blowup_norm_cap=cfg.blowup_norm_cap, adaptive=adaptive,
                          adaptive_tol=method.adaptive_tol, shrink=method.shrink)
        if comms is None or comms.order < method.order:
            comms = precompute_commutators(problem.A, problem.B, method.order)
        ens = solve_iterated_magnus(mc, comms, problem.phi, batch, cfg.T, grid=problem.grid,
                                    record_times=cfg.record_times, workers=cfg.workers)
    ens.method = method.label
    log.info("%s: %.3f s per trajectory, %d blow-ups", method.label, ens.time_per_sim, ens.blowups)
    return ens


def _reference(cfg: ExperimentConfig, problem: Problem, batch: BrownianBatch, results: dict):
    """Exact benchmark for constant coefficients, otherwise the finest Euler run."""
    if cfg.family == "langevin-constant":
        ref = exact_ensemble(problem.grid, batch, LangevinParams(cfg.a, cfg.sigma), cfg.record_times, cfg.T)
        label = "exact"
    else:
        euler = [m for m in cfg.methods if m.kind == "euler"]
        finest = min(euler, key=lambda m: m.dt)
        ref, label = results[finest.label], finest.label
    if ref.blowups:
        raise ReferenceFailedError(
            f"reference {label} blew up on {ref.blowups} of {ref.M} trajectories; errors are undefined"
        )
    return ref, label


def _fmt(x) -> str:
    return "" if x is None else f"{x:.10g}" if isinstance(x, float) else str(x)


def _time_tag(t: float) -> str:
    return f"{t:g}"


def write_matrix(path, matrix) -> None:
    np.savetxt(path, matrix, fmt="%.10e")


def run_compare(cfg: ExperimentConfig, out: Path | None = None) -> list[dict]:
    """Run all methods on one shared Brownian batch and write the report files.

    Writes ``results.csv`` (one row per method and kappa) and one
    ``me_<method>_<t>.txt`` full-grid (kappa = 0) error matrix per method and
    recorded time.
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = Problem.from_config(cfg)
    batch = simulate_brownian(cfg.T, cfg.dt_leb, cfg.M, cfg.seed)
    max_order = max((m.order for m in cfg.methods if m.is_magnus), default=0)
    comms = precompute_commutators(problem.A, problem.B, max_order) if max_order else None

    results = {}
    for method in cfg.methods:  # sequential: keeps timings uncontaminated
        results[method.label] = run_method(method, problem, batch, cfg, comms)
    ref, ref_label = _reference(cfg, problem, batch, results)
    log.info("reference: %s", ref_label)

    rows = []
    for method in cfg.methods:
        ens = results[method.label]
        for kappa in cfg.kappa:
            rep = error_report(ref, ens, kappa)
            rows.append({
                "method": method.label, "order": method.order, "d": cfg.d,
                "dt": method.dt, "dt_leb": cfg.dt_leb, "M": cfg.M, "seed": cfg.seed, "kappa": kappa,
                "err": rep.err, "ame": rep.ame, "time_per_sim_s": rep.time_per_sim, "blowups": rep.blowups,
            })
        for t in ens.times:
            me = error_report(ref, ens, 0, t).me
            write_matrix(out / f"me_{method.label}_{_time_tag(t)}.txt", me)

    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in RESULTS_HEADER])
    return rows


def run_stepsize_sweep(cfg: ExperimentConfig, dts, out: Path | None = None) -> list[dict]:
    """Orders 2 and 3 at every step in ``dts`` against the configured reference.

    ``blowups`` counts blown-up trajectories of both orders together.
    """
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    problem = Problem.from_config(cfg)
    batch = simulate_brownian(cfg.T, cfg.dt_leb, cfg.M, cfg.seed)
    comms = precompute_commutators(problem.A, problem.B, 3)
    kappa = cfg.kappa[0]

    for dt in dts:
        steps_between(cfg.T, float(dt), f"sweep step {dt}")
        steps_between(float(dt), cfg.dt_leb, f"sweep step {dt}")
    results = {}
    if cfg.family != "langevin-constant":
        finest = min((m for m in cfg.methods if m.kind == "euler"), key=lambda m: m.dt)
        results[finest.label] = run_method(finest, problem, batch, cfg)
    ref, _ = _reference(cfg, problem, batch, results)

    rows = []
    for dt in dts:
        row = {"dt": float(dt), "blowups": 0}
        for order in (2, 3):
            spec = MethodSpec(f"m{order}@{dt:g}", f"m{order}", float(dt))
            ens = run_method(spec, problem, batch, cfg, comms)
            rep = error_report(ref, ens, kappa)
            row[f"err_m{order}"] = rep.err
            row[f"time_m{order}"] = rep.time_per_sim
            row["blowups"] += rep.blowups
        rows.append(row)

    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in SWEEP_HEADER])
    return rows


def run_sparsity(cfg: ExperimentConfig, out: Path | None = None, patterns: bool = False,
                 stream=None) -> dict:
    """Print nnz and nonzero-diagonal counts of A, B and the commutators."""
    stream = stream or sys.stdout
    problem = Problem.from_config(cfg)
    comms = precompute_commutators(problem.A, problem.B, 3)
    report = sparsity_report(comms)
    print(f"{'matrix':<8}{'nnz':>10}{'diagonals':>11}", file=stream)
    for name, (nnz, diags) in report.items():
        print(f"{name:<8}{nnz:>10}{diags:>11}", file=stream)
    if patterns:
        target = Path(out or cfg.out)
        target.mkdir(parents=True, exist_ok=True)
        for name in report:
            sparse.write_triplets(getattr(comms, name), target / f"pattern_{name}.txt")
    return report


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinetic-magnus", description=__doc__.split("\n")[0])
    p.add_argument("command", nargs="?", default="compare", choices=("compare", "sweep", "sparsity", "selftest"))
    p.add_argument("--config", help="key = value file with optional [method:LABEL] blocks")
    p.add_argument("--family", choices=("langevin-constant", "langevin-variable"))
    p.add_argument("--d", type=int, help="interior points per axis")
    p.add_argument("--T", type=float, help="time horizon")
    p.add_argument("--dt", type=float, help="default Magnus step for methods without one")
    p.add_argument("--dt-leb", dest="dt_leb", type=float, help="Brownian sampling step")
    p.add_argument("--order", type=int, choices=(1, 2, 3), help="run only m<order> (plus euler) by default")
    p.add_argument("--method", action="append", default=[], metavar="KIND[:DT]",
                   help="euler, m1, m2, m3 or m3-adaptive; repeatable")
    p.add_argument("--M", type=int, help="trajectories")
    p.add_argument("--seed", type=int)
    p.add_argument("--kappa", type=int, action="append", help="central-region level; repeatable")
    p.add_argument("--a", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--selftest", action="store_true", help="run the self-test suites and exit")
    p.add_argument("--dts", help="comma-separated step sizes for sweep")
    p.add_argument("--patterns", action="store_true", help="sparsity: write pattern_<name>.txt triplets")
    p.add_argument("--dump-path", dest="dump_path", type=int, metavar="M",
                   help="also write trajectory M of the Brownian batch to path_<M>.txt")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in ("family", "d", "T", "dt", "dt_leb", "order", "M", "seed",
                                                  "a", "sigma", "out")}
    if args.kappa:
        overrides["kappa"] = tuple(args.kappa)
    methods = [parse_method_flag(text) for text in args.method]
    return build_config(args.config, overrides, methods)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.selftest or args.command == "selftest":
        from .selftest import run_selftest

        return 0 if run_selftest() else 1
    try:
        cfg = config_from_args(args)
        if args.dump_path is not None:
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            if not 0 <= args.dump_path < cfg.M:
                raise ConfigurationError(f"--dump-path {args.dump_path} outside 0..{cfg.M - 1}")
            batch = simulate_brownian(cfg.T, cfg.dt_leb, cfg.M, cfg.seed)
            dump_path(batch, args.dump_path, out / f"path_{args.dump_path}.txt")
        if args.command == "sparsity":
            run_sparsity(cfg, patterns=args.patterns)
        elif args.command == "sweep":
            if not args.dts:
                raise ConfigurationError("sweep needs --dts")
            dts = [float(s) for s in args.dts.split(",") if s.strip()]
            rows = run_stepsize_sweep(cfg, dts)
            _print_rows(rows, SWEEP_HEADER)
        else:
            rows = run_compare(cfg)
            _print_rows(rows, RESULTS_HEADER)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KineticMagnusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _print_rows(rows, header):
    print(",".join(header))
    for row in rows:
        print(",".join(_fmt(row[k]) for k in header))


if __name__ == "__main__":
    sys.exit(main())
