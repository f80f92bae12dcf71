"""Log serialization (CSV trajectories, JSON summaries) and figure
rendering for the report path."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .simulation import SafetyReport, SimulationLog


def trajectory_header(log: SimulationLog) -> List[str]:
    n = log.states.shape[1]
    m = log.inputs.shape[1]
    cols = ["time"]
    cols += [f"x{i}" for i in range(n)]
    cols += [f"u{i}" for i in range(m)]
    cols += [f"u_nom{i}" for i in range(m)]
    cols += [f"margin_{name}" for name in log.constraint_names]
    cols += ["status", "solve_time"]
    for name in log.constraint_names:
        cols += [f"h_{name}_s{j}" for j in range(log.substeps)]
    return cols


def write_trajectory_csv(log: SimulationLog, path) -> None:
    """One row per sampling step; the fine-grid constraint values of the
    step are flattened into h_<name>_s<j> columns (j-th substep)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(log))
        for k in range(len(log.times)):
            row = [log.times[k]]
            row += list(log.states[k])
            row += list(log.inputs[k])
            row += list(log.nominal_inputs[k])
            row += list(log.margins[k])
            row += [log.statuses[k], log.solve_times[k]]
            for c in range(len(log.constraint_names)):
                row += list(log.fine_h[c, k * log.substeps : (k + 1) * log.substeps])
            writer.writerow(row)


def summary_dict(cfg_dict: dict, report: SafetyReport, log: SimulationLog, version: str) -> dict:
    return {
        "toolkit_version": version,
        "config": cfg_dict,
        "min_h": {name: float(v) for name, v in zip(log.constraint_names, report.min_h)},
        "min_h_time": {name: float(v) for name, v in zip(log.constraint_names, report.min_h_time)},
        "first_violation_time": report.first_violation_time,
        "interventions": report.interventions,
        "max_intervention": report.max_intervention,
        "mean_solve_time": report.mean_solve_time,
        "infeasible_steps": report.infeasible_steps,
        "steps_completed": int(len(log.times)),
        "complete": log.complete,
    }


def write_summary_json(summary: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")


def load_trajectory(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    if "time" not in df.columns:
        raise ValueError(f"{path} is not a trajectory log (missing 'time' column)")
    return df


def _fine_series(df: pd.DataFrame, name: str):
    """Reassemble the fine-grid time/value series of one constraint from
    the flattened substep columns."""
    cols = sorted(
        (c for c in df.columns if c.startswith(f"h_{name}_s")),
        key=lambda c: int(c.rsplit("s", 1)[1]),
    )
    substeps = len(cols)
    times = df["time"].to_numpy()
    T = times[1] - times[0] if len(times) > 1 else 1.0
    fine_t = (times[:, None] + np.arange(substeps)[None, :] * (T / substeps)).ravel()
    fine_v = df[cols].to_numpy().ravel()
    return fine_t, fine_v


def constraint_names_from(df: pd.DataFrame) -> List[str]:
    return [c[len("margin_") :] for c in df.columns if c.startswith("margin_")]


def render_figures(df: pd.DataFrame, out_dir, prefix: str = "") -> List[Path]:
    """Render the standard report figures from a trajectory table and
    return the written paths: constraint evolution, inputs vs nominal,
    and the state trajectory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    names = constraint_names_from(df)
    times = df["time"].to_numpy()

    fig, ax = plt.subplots(figsize=(7, 4))
    for name in names:
        fine_t, fine_v = _fine_series(df, name)
        ax.plot(fine_t, fine_v, label=name)
    ax.axhline(0.0, color="k", lw=0.8, ls="--")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("constraint value")
    ax.legend()
    fig.tight_layout()
    p = out_dir / f"{prefix}constraints.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    written.append(p)

    u_cols = [c for c in df.columns if c.startswith("u") and not c.startswith("u_nom")]
    nom_cols = [c for c in df.columns if c.startswith("u_nom")]
    fig, ax = plt.subplots(figsize=(7, 4))
    for uc, nc in zip(u_cols, nom_cols):
        ax.step(times, df[uc], where="post", label=f"{uc} (filtered)")
        ax.step(times, df[nc], where="post", ls="--", label=f"{uc} (nominal)")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("input")
    ax.legend()
    fig.tight_layout()
    p = out_dir / f"{prefix}inputs.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    written.append(p)

    x_cols = [c for c in df.columns if c.startswith("x") and c[1:].isdigit()]
    fig, ax = plt.subplots(figsize=(7, 4))
    if len(x_cols) >= 3:
        # planar vehicle: plot the path
        ax.plot(df[x_cols[0]], df[x_cols[1]], marker=".", ms=2)
        ax.set_xlabel(x_cols[0])
        ax.set_ylabel(x_cols[1])
        ax.set_aspect("equal", adjustable="datalim")
    else:
        for xc in x_cols:
            ax.plot(times, df[xc], label=xc)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("state")
        ax.legend()
    fig.tight_layout()
    p = out_dir / f"{prefix}trajectory.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    written.append(p)
    return written
