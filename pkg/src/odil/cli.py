"""Experiment runner: ``odil run`` and ``odil sweep``.

``run`` executes one configured experiment and writes ``history.csv``,
``solution_<field>.json/.raw`` per unknown field, ``summary.json``, and
(by default) rendered figures next to them. ``sweep`` repeats the
experiment over a list of values for one numeric spec field, one
subdirectory per value, and collects ``sweep.csv``.

Exit codes: 0 success, 1 configuration error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import figures
from .config import SPEC_KEYS, ConfigError, ExperimentConfig, load_config, parse_config
from .grid import Field, load_field, save_field
from .optimize import minimize
from .problems import (
    build_cavity_forward,
    build_cavity_reconstruct,
    build_tracer,
    build_wave,
    complexity_Kmin,
    reference_flow,
    sample_data_points,
    tracer_warm_start,
)
from .problems.cavity import CavitySpec, velocity_dof_indices
from .problems.complexity import best_reconstruction

FAILURE_TERMINATIONS = {
    "singular_system",
    "non_finite_loss",
    "line_search_failed",
    "backtracking_failed",
}


def _load_reference_vector(problem, ref_dir: Path):
    """Assemble a reference dof vector from solution dumps in a directory."""
    ref = np.full(problem.total_dofs, np.nan)
    found = []
    for name, sl in problem.layout.field_slices.items():
        base = ref_dir / f"solution_{name}"
        if base.with_suffix(".json").exists():
            f = load_field(base)
            if f.grid != problem.fields[name]:
                raise ConfigError(f"reference field {name!r} is on a different grid")
            ref[sl] = f.values
            found.append(name)
    if not found:
        raise ConfigError(f"no solution_<field>.json/.raw pairs found in {ref_dir}")
    idx = np.flatnonzero(np.isfinite(ref))
    return ref, idx


def _build_run(cfg: ExperimentConfig):
    """Problem + start vector + error tracking for one experiment."""
    reference = None
    error_indices = None
    if cfg.problem == "wave":
        problem, exact = build_wave(cfg.spec)
        x0 = problem.initial_vector()
        reference = np.array(exact.values)
    elif cfg.problem == "cavity":
        problem = build_cavity_forward(cfg.spec)
        x0 = problem.initial_vector()
    elif cfg.problem == "cavity_reconstruct":
        spec = cfg.spec
        n_from_forward = cfg.extras.get("n_data_from_forward")
        if n_from_forward:
            fwd_spec = CavitySpec(n=spec.n, Re=spec.Re, lid_velocity=spec.lid_velocity)
            fwd = build_cavity_forward(fwd_spec)
            from .config import default_optimizer

            fwd_report = minimize(fwd, fwd.initial_vector(), default_optimizer("cavity"))
            fields, _ = fwd.split(fwd_report.x)
            spec.data_points = sample_data_points(
                fields["u"], fields["v"], int(n_from_forward), cfg.seed
            )
            reference = np.array(fwd_report.x)
        problem = build_cavity_reconstruct(spec)
        x0 = problem.initial_vector()
    elif cfg.problem == "tracer":
        problem = build_tracer(cfg.spec)
        if cfg.extras.get("warm_start", True):
            x0 = tracer_warm_start(cfg.spec, problem)
        else:
            x0 = problem.initial_vector()
    else:
        raise ConfigError(f"problem {cfg.problem!r} is not a single-run experiment")

    if cfg.reference is not None:
        reference, error_indices = _load_reference_vector(problem, cfg.reference)
    if cfg.problem in ("cavity", "cavity_reconstruct") and reference is not None:
        vel = velocity_dof_indices(problem)
        error_indices = vel if error_indices is None else np.intersect1d(error_indices, vel)
    return problem, x0, reference, error_indices


def _dump_solution(problem, x, out_dir: Path, tag: str = "") -> None:
    fields, _ = problem.split(x)
    for name, f in fields.items():
        save_field(f, out_dir / f"solution_{name}{tag}")


def _render_figures(problem, x, report, out_dir: Path) -> None:
    figures.history_figure(report.records, out_dir / "history.png")
    fields, _ = problem.split(x)
    for name, f in fields.items():
        figures.field_figure(f, out_dir / f"solution_{name}.png", title=name)
    if {"u", "v"} <= set(fields) and fields["u"].grid.ndim == 2:
        figures.velocity_figure(fields["u"], fields["v"], out_dir / "velocity.png")


def _write_summary(out_dir: Path, payload: dict) -> None:
    (out_dir / "summary.json").write_text(json.dumps(payload, indent=1) + "\n")


def run_experiment(cfg: ExperimentConfig, render: bool = True) -> int:
    out_dir = cfg.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.problem == "complexity":
        return _run_complexity(cfg, render)

    problem, x0, reference, error_indices = _build_run(cfg)

    callback = None
    if cfg.dump_every > 0:

        def callback(epoch, x):
            if epoch % cfg.dump_every == 0:
                _dump_solution(problem, x, out_dir, tag=f"_{epoch:06d}")

    t0 = time.perf_counter()
    report = minimize(
        problem, x0, cfg.optimizer, reference=reference,
        error_indices=error_indices, callback=callback,
    )
    wall = time.perf_counter() - t0
    report.to_csv(out_dir / "history.csv")
    _dump_solution(problem, report.x, out_dir)
    _write_summary(
        out_dir,
        {
            "final_loss": report.final_loss,
            "final_error": None if math.isnan(report.final_error) else report.final_error,
            "epochs": report.epochs,
            "termination": report.termination,
            "wall_time_s": wall,
        },
    )
    if render:
        _render_figures(problem, report.x, report, out_dir)
    return 2 if report.termination in FAILURE_TERMINATIONS else 0


def _run_complexity(cfg: ExperimentConfig, render: bool) -> int:
    out_dir = cfg.output_dir
    spec = cfg.spec
    spec.seed = cfg.seed
    t0 = time.perf_counter()
    reference = reference_flow(spec)
    result = complexity_Kmin(spec, k_cap=cfg.extras.get("k_cap", 64), reference=reference)
    wall = time.perf_counter() - t0
    ks = sorted(result.estimates)
    with open(out_dir / "history.csv", "w") as fh:
        fh.write("epoch,loss,grad_inf,error,time_s\n")
        for k in ks:
            e = result.estimates[k]
            fh.write(f"{k},{e:.17g},nan,{e:.17g},nan\n")
    with open(out_dir / "complexity.csv", "w") as fh:
        fh.write("k,best_error\n")
        for k in ks:
            fh.write(f"{k},{result.estimates[k]:.17g}\n")
    problem, x, _ = best_reconstruction(spec, result.k, reference=reference)
    _dump_solution(problem, x, out_dir)
    _write_summary(
        out_dir,
        {
            "final_loss": result.estimates[result.k],
            "final_error": result.estimates[result.k],
            "epochs": result.k,
            "termination": "k_cap" if result.capped else "converged",
            "wall_time_s": wall,
            "k_min": result.k,
            "capped": result.capped,
            "eps": spec.eps,
        },
    )
    if render:
        figures.scan_figure(ks, [result.estimates[k] for k in ks], spec.eps, out_dir / "scan.png")
        fields, _ = problem.split(x)
        figures.velocity_figure(fields["u"], fields["v"], out_dir / "velocity.png")
    return 0


def _sweep_worker(args) -> dict:
    raw, base_dir, axis, value, out_dir, seed, render = args
    raw = dict(raw)
    raw[axis] = value
    raw["output_dir"] = str(out_dir)
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = parse_config(raw, base_dir=Path(base_dir))
        code = run_experiment(cfg, render=render)
        if code != 0:
            raise RuntimeError(f"solver failure (exit {code})")
        summary = json.loads((Path(out_dir) / "summary.json").read_text())
        return {
            "value": value,
            "final_loss": summary["final_loss"],
            "final_error": summary["final_error"],
            "epochs": summary["epochs"],
            "time_s": summary["wall_time_s"],
        }
    except Exception as exc:  # a failed entry records NaN and the sweep continues
        print(f"sweep entry {axis}={value} failed: {exc}", file=sys.stderr)
        return {
            "value": value,
            "final_loss": math.nan,
            "final_error": math.nan,
            "epochs": 0,
            "time_s": math.nan,
        }


def run_sweep(config_path: Path, axis: str, values: list, out: Path | None,
              seed: int | None, jobs: int, render: bool) -> int:
    cfg = load_config(config_path)
    if axis not in SPEC_KEYS[cfg.problem]:
        raise ConfigError(
            f"axis {axis!r} is not a spec field of {cfg.problem!r}; "
            f"options: {', '.join(sorted(SPEC_KEYS[cfg.problem]))}"
        )
    root = out or cfg.output_dir
    root.mkdir(parents=True, exist_ok=True)
    tasks = [
        (cfg.raw, str(config_path.parent), axis, v, str(root / f"{axis}_{v}"), seed, render)
        for v in values
    ]
    for _, _, _, v, d, _, _ in tasks:
        Path(d).mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_worker, tasks))
    else:
        rows = [_sweep_worker(t) for t in tasks]
    with open(root / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["value", "final_loss", "final_error", "epochs", "time_s"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    if render:
        errs = [math.nan if r["final_error"] is None else r["final_error"] for r in rows]
        figures.sweep_figure([r["value"] for r in rows], errs, root / "sweep.png", axis_name=axis)
    return 0


def _parse_values(text: str) -> list:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(int(part))
        except ValueError:
            out.append(float(part))
    if not out:
        raise ConfigError("--values: expected a comma-separated list of numbers")
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="odil", description="discrete-loss PDE experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--out", type=Path, default=None, help="override output_dir")
    p_run.add_argument("--seed", type=int, default=None, help="override seed")
    p_run.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    p_sweep = sub.add_parser("sweep", help="run the experiment for each value of one spec field")
    p_sweep.add_argument("config", type=Path)
    p_sweep.add_argument("--axis", required=True, help="numeric spec field, e.g. nx")
    p_sweep.add_argument("--values", required=True, help="comma-separated values, e.g. 17,33,65")
    p_sweep.add_argument("--out", type=Path, default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_sweep.add_argument("--no-figures", action="store_true")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.out is not None:
                cfg.output_dir = args.out
            if args.seed is not None:
                cfg.seed = args.seed
            return run_experiment(cfg, render=not args.no_figures)
        values = _parse_values(args.values)
        return run_sweep(
            args.config, args.axis, values, args.out, args.seed, args.jobs,
            render=not args.no_figures,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
