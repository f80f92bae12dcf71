"""Command-line front end: run experiments, sweep parameter grids, and
render reports with figures from trajectory logs."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import product
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, build_experiment, config_from_dict, load_config
from .reporting import (
    constraint_names_from,
    load_trajectory,
    render_figures,
    summary_dict,
    write_summary_json,
    write_trajectory_csv,
)
from .simulation import safety_report, simulate
from .solvers import FilterBackend

WORKERS_ENV = "ZOCBF_WORKERS"

SWEEP_FIELDS = ("gamma_c", "delta", "T", "backend")


def run_experiment(cfg: ExperimentConfig):
    """Build and simulate one configuration; returns (log, report)."""
    exp = build_experiment(cfg)
    log = simulate(
        exp.sys,
        exp.h_list,
        exp.params,
        cfg.backend,
        exp.policy,
        exp.x0,
        exp.box,
        steps=cfg.steps,
        substeps=cfg.substeps,
        u_init=exp.u_init,
    )
    return log, safety_report(log)


def _apply_overrides(cfg: ExperimentConfig, out_dir, backend, steps, substeps) -> ExperimentConfig:
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    if backend is not None:
        cfg = replace(cfg, backend=FilterBackend(kind=backend))
    if steps is not None:
        cfg = replace(cfg, steps=steps)
    if substeps is not None:
        cfg = replace(cfg, substeps=substeps)
    return cfg


@click.group()
@click.version_option(__version__)
def main():
    """Sampled-data safety-filter toolkit."""


@main.command("run")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Output directory override.")
@click.option("--backend", type=str, default=None, help="Backend kind override.")
@click.option("--steps", type=int, default=None, help="Number of sampling steps override.")
@click.option("--substeps", type=int, default=None, help="Fine-grid substeps override.")
def run_cmd(config_path, out_dir, backend, steps, substeps):
    """Run one experiment; write trajectory CSV and JSON summary.

    Exits 0 only when the run completed with no safety violation and no
    infeasible filter step.
    """
    try:
        cfg = _apply_overrides(load_config(config_path), out_dir, backend, steps, substeps)
        build_experiment(cfg)  # validate model-dependent fields up front
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc)) from exc

    log, report = run_experiment(cfg)
    out = Path(cfg.out_dir)
    write_trajectory_csv(log, out / "trajectory.csv")
    summary = summary_dict(cfg.to_dict(), report, log, __version__)
    write_summary_json(summary, out / "summary.json")

    click.echo(
        f"model={cfg.model} backend={cfg.backend.kind} steps={len(log.times)} "
        f"min_h={min(report.min_h):.6g} violations="
        f"{'none' if report.first_violation_time is None else f'{report.first_violation_time:.3g}s'} "
        f"interventions={report.interventions} infeasible_steps={report.infeasible_steps}"
    )
    ok = report.first_violation_time is None and report.infeasible_steps == 0 and log.complete
    raise SystemExit(0 if ok else 1)


def _parse_grid(spec: str) -> dict:
    grid = {}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        if "=" not in part:
            raise click.ClickException(f"grid entry {part!r} must look like field=v1,v2")
        key, vals = part.split("=", 1)
        key = key.strip()
        if key not in SWEEP_FIELDS:
            raise click.ClickException(f"grid field {key!r} not sweepable; choose from {SWEEP_FIELDS}")
        items = [v.strip() for v in vals.split(",") if v.strip()]
        grid[key] = items if key == "backend" else [float(v) for v in items]
    return grid


def _sweep_cell(cfg_dict: dict):
    """Run one sweep cell; importable at module level for worker pools."""
    try:
        cfg = config_from_dict(cfg_dict)
        log, report = run_experiment(cfg)
        return {
            "min_h": float(min(report.min_h)),
            "interventions": report.interventions,
            "max_intervention": report.max_intervention,
            "mean_solve_time": report.mean_solve_time,
            "infeasible_steps": report.infeasible_steps,
            "first_violation_time": report.first_violation_time,
            "error": "",
        }
    except Exception as exc:  # per-cell failures recorded, sweep continues
        return {
            "min_h": "",
            "interventions": "",
            "max_intervention": "",
            "mean_solve_time": "",
            "infeasible_steps": "",
            "first_violation_time": "",
            "error": f"{type(exc).__name__}: {exc}",
        }


@main.command("sweep")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--grid", "grid_spec", required=True,
              help="Semicolon-separated grid, e.g. 'gamma_c=0.25,0.5,1.0;delta=0.01,0.5'.")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
def sweep_cmd(config_path, grid_spec, out_dir):
    """Run the cross product of a parameter grid; one summary row per cell.

    Cells may run concurrently; set the ZOCBF_WORKERS environment
    variable to the desired pool size.  Row order is deterministic.
    """
    try:
        base = load_config(config_path)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    if out_dir is not None:
        base = replace(base, out_dir=str(out_dir))
    grid = _parse_grid(grid_spec)

    keys = [k for k in SWEEP_FIELDS if k in grid]
    cells = list(product(*(grid[k] for k in keys))) if keys else []
    cfgs = []
    for values in cells:
        d = base.to_dict()
        for k, v in zip(keys, values):
            d[k] = v
        cfgs.append(d)

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    if workers > 1 and cfgs:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cfgs))
    else:
        results = [_sweep_cell(d) for d in cfgs]

    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sweep_path = out / "sweep.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            list(keys)
            + [
                "min_h",
                "interventions",
                "max_intervention",
                "mean_solve_time",
                "infeasible_steps",
                "first_violation_time",
                "error",
            ]
        )
        for values, res in zip(cells, results):
            writer.writerow(list(values) + [res[c] for c in (
                "min_h", "interventions", "max_intervention", "mean_solve_time",
                "infeasible_steps", "first_violation_time", "error")])
    click.echo(f"wrote {sweep_path} ({len(cells)} cells)")
    raise SystemExit(0)


@main.command("report")
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="Where to write figures and the summary table (default: alongside the log).")
def report_cmd(log_path, out_dir):
    """Summarize a trajectory CSV and render figures next to it."""
    log_path = Path(log_path)
    out = Path(out_dir) if out_dir is not None else log_path.parent
    try:
        df = load_trajectory(log_path)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc

    names = constraint_names_from(df)
    rows = []
    for name in names:
        cols = [c for c in df.columns if c.startswith(f"h_{name}_s")]
        vals = df[cols].to_numpy()
        rows.append(
            {
                "constraint": name,
                "min_h": float(vals.min()),
                "violations": int(np.count_nonzero(vals < -1e-12)),
            }
        )
    out.mkdir(parents=True, exist_ok=True)
    table_path = out / "report_summary.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["constraint", "min_h", "violations"])
        writer.writeheader()
        writer.writerows(rows)

    figures = render_figures(df, out)
    click.echo(f"wrote {table_path}")
    for p in figures:
        click.echo(f"wrote {p}")
    raise SystemExit(0)


if __name__ == "__main__":
    main()
