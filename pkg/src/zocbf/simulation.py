"""Closed-loop sampled-data simulator with per-step safety filtering,
fine-grid constraint logging, and safety reporting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .conditions import exact_margin
from .core import ConstraintFunction, ControlAffineSystem, InputBox, ZocbfParams
from .integrators import DivergenceError, flow_step
from .solvers import FilterBackend, safety_filter_step

NominalPolicy = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class SimulationLog:
    """Per-step record of a closed-loop run.

    ``states`` has one more row than ``inputs`` (the terminal state);
    ``fine_times``/``fine_h`` hold the inter-sample grid used for
    safety verification, with ``fine_h`` shaped (constraints, points).
    ``step_h`` is the barrier value h(x_k, u_{k-1}) entering each filter
    step.
    """

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    nominal_inputs: np.ndarray
    margins: np.ndarray
    step_h: np.ndarray
    fine_times: np.ndarray
    fine_h: np.ndarray
    statuses: List[str]
    solve_times: np.ndarray
    constraint_names: List[str]
    substeps: int
    complete: bool = True


@dataclass
class SafetyReport:
    min_h: np.ndarray
    min_h_time: np.ndarray
    first_violation_time: Optional[float]
    interventions: int
    max_intervention: float
    mean_solve_time: float
    infeasible_steps: int


def simulate(
    sys: ControlAffineSystem,
    h_list: Sequence[ConstraintFunction],
    params: ZocbfParams,
    backend: FilterBackend,
    policy: NominalPolicy,
    x0: np.ndarray,
    box: InputBox,
    steps: int,
    substeps: int = 10,
    u_init: Optional[np.ndarray] = None,
) -> SimulationLog:
    """Run ``steps`` sampling periods of the filtered closed loop.

    The input is held constant over each period and the plant is
    propagated on a fine grid of ``substeps`` RK4 steps, which doubles
    as the inter-sample logging grid for every constraint.  ``u_init``
    plays the role of the input active just before t=0 and defaults to
    the nominal input at the initial state.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.asarray(x0, dtype=float).copy()
    T = params.T
    n_h = len(h_list)

    if u_init is None:
        u_prev = box.project(np.atleast_1d(np.asarray(policy(x, 0.0), dtype=float)))
    else:
        u_prev = np.atleast_1d(np.asarray(u_init, dtype=float))

    times = np.arange(steps) * T
    states = np.empty((steps + 1, sys.n))
    inputs = np.empty((steps, box.dim))
    nominals = np.empty((steps, box.dim))
    margins = np.empty((steps, n_h))
    step_h = np.empty((steps, n_h))
    statuses: List[str] = []
    solve_times = np.empty(steps)
    fine_times = np.empty(steps * substeps + 1)
    fine_h = np.empty((n_h, steps * substeps + 1))
    states[0] = x
    complete = True
    k_done = 0

    try:
        for k in range(steps):
            t_k = k * T
            u_nom = np.atleast_1d(np.asarray(policy(x, t_k), dtype=float))
            for j, h in enumerate(h_list):
                step_h[k, j] = h.value(x, u_prev)
            res = safety_filter_step(backend, sys, h_list, params, x, u_prev, u_nom, box)
            u = res.u
            inputs[k] = u
            nominals[k] = u_nom
            for j, h in enumerate(h_list):
                margins[k, j] = exact_margin(sys, h, params, x, u_prev, u)
            statuses.append(res.status)
            solve_times[k] = res.stats.get("wall_time", 0.0)

            dt = T / substeps
            for j in range(substeps):
                fine_times[k * substeps + j] = t_k + j * dt
                for c, h in enumerate(h_list):
                    fine_h[c, k * substeps + j] = h.value(x, u)
                x = flow_step(sys, x, u, dt)
            states[k + 1] = x
            u_prev = u
            k_done = k + 1
    except DivergenceError:
        complete = False

    fine_times[k_done * substeps] = k_done * T
    for c, h in enumerate(h_list):
        fine_h[c, k_done * substeps] = h.value(states[k_done], u_prev)

    if not complete:
        last = k_done * substeps + 1
        times = times[:k_done]
        states = states[: k_done + 1]
        inputs = inputs[:k_done]
        nominals = nominals[:k_done]
        margins = margins[:k_done]
        step_h = step_h[:k_done]
        solve_times = solve_times[:k_done]
        fine_times = fine_times[:last]
        fine_h = fine_h[:, :last]

    return SimulationLog(
        times=times,
        states=states,
        inputs=inputs,
        nominal_inputs=nominals,
        margins=margins,
        step_h=step_h,
        fine_times=fine_times,
        fine_h=fine_h,
        statuses=statuses,
        solve_times=solve_times,
        constraint_names=[h.name for h in h_list],
        substeps=substeps,
        complete=complete,
    )


def safety_report(log: SimulationLog, tolerance: float = 1e-9) -> SafetyReport:
    """Summarize a run: worst constraint values, first violation, filter
    intervention counts, and solver timing."""
    n_h = log.fine_h.shape[0]
    min_h = log.fine_h.min(axis=1)
    min_h_time = log.fine_times[log.fine_h.argmin(axis=1)]

    violating = np.flatnonzero(np.any(log.fine_h < -1e-12, axis=0))
    first_violation = float(log.fine_times[violating[0]]) if violating.size else None

    deviations = np.linalg.norm(log.inputs - log.nominal_inputs, axis=1) if len(log.inputs) else np.zeros(0)
    interventions = int(np.count_nonzero(deviations > tolerance))
    max_intervention = float(deviations.max()) if deviations.size else 0.0
    mean_solve = float(log.solve_times.mean()) if log.solve_times.size else 0.0
    infeasible = sum(1 for s in log.statuses if s == "infeasible")

    return SafetyReport(
        min_h=min_h,
        min_h_time=min_h_time,
        first_violation_time=first_violation,
        interventions=interventions,
        max_intervention=max_intervention,
        mean_solve_time=mean_solve,
        infeasible_steps=infeasible,
    )
