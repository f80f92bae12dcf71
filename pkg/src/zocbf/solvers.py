"""Minimum-deviation input selection subject to barrier feasibility.

Four interchangeable backends: an exact active-set QP for halfspace-box
problems, a concave-QCQP solver, a sequential-quadratic solver for the
nonlinear RK-predicted condition, and a deterministic sampling search.
A pass-through backend applies the nominal input unfiltered so unsafe
baselines can be simulated with the same machinery.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.optimize

from .conditions import (
    LinearConstraint,
    QuadraticConstraint,
    exact_margin,
    linear_constraint,
    quadratic_constraint,
)
from .core import ConstraintFunction, ControlAffineSystem, InputBox, ZocbfParams
from .integrators import flow_reference, flow_step, tableau_for_order
from .linearization import affine_model, discretize

TOL_FEAS = 1e-9

OPTIMAL = "optimal"
FEASIBLE_SUBOPTIMAL = "feasible_suboptimal"
INFEASIBLE = "infeasible"


class NonconvexConstraintError(ValueError):
    """A quadratic constraint is not concave; use the rk_nonlinear backend."""


@dataclass(frozen=True)
class FilterBackend:
    """Selects how the barrier condition is enforced.

    kind: one of "no_filter", "linearized_linear", "linearized_quadratic",
    "rk_nonlinear", "sampling".  ``order`` is the RK order for
    rk_nonlinear; ``samples`` the grid resolution per input dimension and
    ``substeps`` the reference-flow resolution for sampling.
    """

    kind: str
    order: int = 4
    samples: int = 41
    substeps: int = 10

    _KINDS = ("no_filter", "linearized_linear", "linearized_quadratic", "rk_nonlinear", "sampling")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}; choose from {self._KINDS}")
        if self.order not in (1, 2, 4):
            raise ValueError(f"RK order must be 1, 2 or 4, got {self.order}")
        if self.samples < 3:
            raise ValueError(f"samples per dimension must be >= 3, got {self.samples}")


@dataclass
class FilterResult:
    u: np.ndarray
    margin: float
    objective: float
    status: str
    stats: dict = field(default_factory=dict)


def project_box(u: np.ndarray, box: InputBox) -> np.ndarray:
    """Componentwise clamp of ``u`` into the admissible box."""
    return box.project(u)


def _result(u, margin, u_nom, status, **stats) -> FilterResult:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return FilterResult(
        u=u,
        margin=float(margin),
        objective=float(np.linalg.norm(u - np.atleast_1d(u_nom))),
        status=status,
        stats=stats,
    )


def _box_halfspaces(box: InputBox) -> List[LinearConstraint]:
    rows = []
    m = box.dim
    eye = np.eye(m)
    for j in range(m):
        rows.append(LinearConstraint(a=eye[j], b=-box.lower[j]))
        rows.append(LinearConstraint(a=-eye[j], b=box.upper[j]))
    return rows


def _grid_candidates(box: InputBox, points_per_dim: int, extra: Sequence[np.ndarray] = ()) -> np.ndarray:
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(box.lower, box.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cands = np.stack([g.ravel() for g in mesh], axis=-1)
    if extra:
        cands = np.vstack([cands, np.atleast_2d(np.asarray(extra, dtype=float))])
    return cands


def _least_violating_grid(
    margin_fns: Sequence[Callable[[np.ndarray], float]],
    box: InputBox,
    u_nom: np.ndarray,
    points_per_dim: int = 201,
) -> tuple:
    """Grid search for the candidate maximizing the worst margin.

    Ties broken by distance to the nominal input, then lexicographically.
    """
    cands = _grid_candidates(box, points_per_dim, extra=[box.project(u_nom)])
    worst = np.full(len(cands), np.inf)
    for fn in margin_fns:
        vals = _eval_margins(fn, cands)
        worst = np.minimum(worst, vals)
    best = np.max(worst)
    idx = np.flatnonzero(worst >= best - 1e-12)
    dists = np.linalg.norm(cands[idx] - np.atleast_1d(u_nom), axis=1)
    idx = idx[dists <= dists.min() + 1e-12]
    order = np.lexsort(cands[idx].T[::-1])
    pick = idx[order[0]]
    return cands[pick], float(worst[pick])


def _eval_margins(fn: Callable, cands: np.ndarray) -> np.ndarray:
    """Evaluate a margin function on a candidate batch, falling back to a
    per-candidate loop when the function is not vectorized."""
    try:
        vals = np.asarray(fn(cands), dtype=float)
        if vals.shape == (len(cands),):
            return vals
    except Exception:
        pass
    return np.array([float(fn(c)) for c in cands])


def solve_qp_halfspace_box(
    u_nom: np.ndarray,
    constraints: Sequence[LinearConstraint],
    box: InputBox,
) -> FilterResult:
    """Exact minimum-deviation QP over halfspaces intersected with a box.

    Strictly convex objective, so the optimum is the unique KKT point of
    some active set of at most m independent constraints; all such
    candidate sets are enumerated.
    """
    t0 = time.perf_counter()
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    m = box.dim

    rows: List[LinearConstraint] = []
    for con in constraints:
        a = np.atleast_1d(np.asarray(con.a, dtype=float))
        if np.linalg.norm(a) < 1e-14:
            if con.b < -TOL_FEAS:  # unsatisfiable regardless of u
                u_lv, worst = _least_violating_grid([c.margin for c in constraints], box, u_nom)
                return _result(u_lv, worst, u_nom, INFEASIBLE, wall_time=time.perf_counter() - t0)
            continue  # trivially satisfied
        rows.append(LinearConstraint(a=a, b=float(con.b)))
    all_rows = rows + _box_halfspaces(box)

    def worst_margin(u: np.ndarray) -> float:
        vals = [c.margin(u) for c in constraints] if constraints else [np.inf]
        return float(min(vals))

    u0 = box.project(u_nom)
    if all(c.margin(u0) >= -TOL_FEAS for c in rows):
        return _result(u0, worst_margin(u0), u_nom, OPTIMAL, iterations=0,
                       wall_time=time.perf_counter() - t0)

    best_u, best_obj = None, np.inf
    n_rows = len(all_rows)
    for size in range(1, m + 1):
        for subset in itertools.combinations(range(n_rows), size):
            G = np.stack([all_rows[i].a for i in subset])
            bs = np.array([all_rows[i].b for i in subset])
            GGt = G @ G.T
            if abs(np.linalg.det(GGt)) < 1e-12:
                continue
            mu = np.linalg.solve(GGt, -(G @ u_nom + bs))
            if np.any(mu < -1e-9):
                continue
            u_c = u_nom + G.T @ mu
            if not all(c.margin(u_c) >= -TOL_FEAS for c in all_rows):
                continue
            obj = np.linalg.norm(u_c - u_nom)
            if obj < best_obj - 1e-12 or (
                abs(obj - best_obj) <= 1e-12
                and best_u is not None
                and tuple(u_c) < tuple(best_u)
            ):
                best_u, best_obj = u_c, obj

    if best_u is None:
        u_lv, worst = _least_violating_grid([c.margin for c in all_rows], box, u_nom)
        return _result(u_lv, worst_margin(u_lv), u_nom, INFEASIBLE,
                       wall_time=time.perf_counter() - t0)
    return _result(best_u, worst_margin(best_u), u_nom, OPTIMAL,
                   wall_time=time.perf_counter() - t0)


def _qcqp_interval_1d(
    u_nom: float, quad: Sequence[QuadraticConstraint], lin: Sequence[LinearConstraint], box: InputBox
) -> Optional[tuple]:
    """Feasible interval [lo, hi] of a 1-D concave-QCQP, or None if empty."""
    lo, hi = float(box.lower[0]), float(box.upper[0])
    for con in lin:
        a, b = float(con.a[0]), con.b
        if abs(a) < 1e-14:
            if b < -TOL_FEAS:
                return None
            continue
        bound = -b / a
        if a > 0:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    for con in quad:
        Q, q, c = float(con.Q[0, 0]), float(con.q[0]), con.c
        if abs(Q) < 1e-14:
            if abs(q) < 1e-14:
                if c < -TOL_FEAS:
                    return None
                continue
            bound = -c / q
            if q > 0:
                lo = max(lo, bound)
            else:
                hi = min(hi, bound)
            continue
        # Q < 0: feasible set is the interval between the two roots.
        disc = q * q - 4.0 * Q * c
        if disc < 0.0:
            return None
        r1 = (-q + np.sqrt(disc)) / (2.0 * Q)
        r2 = (-q - np.sqrt(disc)) / (2.0 * Q)
        lo, hi = max(lo, min(r1, r2)), min(hi, max(r1, r2))
    if lo > hi + TOL_FEAS:
        return None
    return lo, min(hi, max(lo, hi))


def solve_qcqp_box(
    u_nom: np.ndarray,
    quad: Sequence[QuadraticConstraint],
    lin: Sequence[LinearConstraint] = (),
    box: InputBox = None,
) -> FilterResult:
    """Minimum-deviation input over concave quadratic constraints.

    Every Q must be negative semidefinite (the feasible set is then
    convex); a positive eigenvalue beyond tolerance raises
    NonconvexConstraintError.  One-dimensional problems are solved
    exactly by interval intersection, higher dimensions by SLSQP with
    analytic gradients.
    """
    t0 = time.perf_counter()
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    quad = list(quad)
    lin = list(lin)
    for con in quad:
        eigmax = float(np.max(np.linalg.eigvalsh(con.Q))) if con.Q.size else 0.0
        if eigmax > 1e-8:
            raise NonconvexConstraintError(
                f"quadratic constraint has positive eigenvalue {eigmax:.3e}; "
                "the feasible set may be nonconvex -- use the rk_nonlinear backend"
            )

    if all(np.max(np.abs(con.Q)) < 1e-14 for con in quad):
        reduced = lin + [LinearConstraint(a=con.q, b=con.c) for con in quad]
        return solve_qp_halfspace_box(u_nom, reduced, box)

    margins = [con.margin for con in quad] + [con.margin for con in lin]

    def worst(u):
        return min(fn(u) for fn in margins)

    u0 = box.project(u_nom)
    if worst(u0) >= -TOL_FEAS:
        return _result(u0, worst(u0), u_nom, OPTIMAL, iterations=0,
                       wall_time=time.perf_counter() - t0)

    if box.dim == 1:
        interval = _qcqp_interval_1d(float(u_nom[0]), quad, lin, box)
        if interval is None:
            u_lv, wv = _least_violating_grid(margins, box, u_nom)
            return _result(u_lv, wv, u_nom, INFEASIBLE, wall_time=time.perf_counter() - t0)
        u_c = np.array([np.clip(u_nom[0], interval[0], interval[1])])
        return _result(u_c, worst(u_c), u_nom, OPTIMAL, wall_time=time.perf_counter() - t0)

    cons = []
    for con in quad:
        cons.append(
            {
                "type": "ineq",
                "fun": lambda u, c=con: c.margin(u),
                "jac": lambda u, c=con: 2.0 * c.Q @ u + c.q,
            }
        )
    for con in lin:
        cons.append({"type": "ineq", "fun": lambda u, c=con: c.margin(u), "jac": lambda u, c=con: c.a})
    bounds = list(zip(box.lower, box.upper))
    best = None
    for start in (u0, 0.5 * (box.lower + box.upper)):
        res = scipy.optimize.minimize(
            lambda u: float(np.sum((u - u_nom) ** 2)),
            start,
            jac=lambda u: 2.0 * (u - u_nom),
            method="SLSQP",
            bounds=bounds,
            constraints=cons,
            options={"maxiter": 100, "ftol": 1e-12},
        )
        u_c = box.project(res.x)
        if worst(u_c) >= -1e-8:
            cand = _result(u_c, worst(u_c), u_nom, OPTIMAL, iterations=int(res.nit),
                           wall_time=time.perf_counter() - t0)
            if best is None or cand.objective < best.objective:
                best = cand
    if best is not None:
        return best
    u_lv, wv = _least_violating_grid(margins, box, u_nom)
    return _result(u_lv, wv, u_nom, INFEASIBLE, wall_time=time.perf_counter() - t0)


def solve_sqp_box(
    u_nom: np.ndarray,
    margin_fns: Sequence[Callable[[np.ndarray], float]],
    box: InputBox,
    warm_start: Optional[np.ndarray] = None,
    tol_feas: float = 1e-6,
    max_iter: int = 50,
) -> FilterResult:
    """Sequential-quadratic solve of the nonlinear filter problem.

    Warm-started at the projected nominal input and restarted from the
    previously accepted input on failure; when no feasible point is
    found the least-violating input is reported with infeasible status.
    """
    t0 = time.perf_counter()
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))

    def worst(u):
        return min(float(fn(u)) for fn in margin_fns)

    u0 = box.project(u_nom)
    if worst(u0) >= -tol_feas:
        return _result(u0, worst(u0), u_nom, OPTIMAL, iterations=0, evaluations=len(margin_fns),
                       wall_time=time.perf_counter() - t0)

    bounds = list(zip(box.lower, box.upper))
    cons = [{"type": "ineq", "fun": fn} for fn in margin_fns]
    starts = [u0]
    if warm_start is not None:
        starts.append(box.project(warm_start))
    starts.append(0.5 * (box.lower + box.upper))

    evaluations = 0
    for start in starts:
        res = scipy.optimize.minimize(
            lambda u: float(np.sum((u - u_nom) ** 2)),
            start,
            jac=lambda u: 2.0 * (u - u_nom),
            method="SLSQP",
            bounds=bounds,
            constraints=cons,
            options={"maxiter": max_iter, "ftol": 1e-10},
        )
        evaluations += int(res.nfev)
        u_c = box.project(res.x)
        if worst(u_c) >= -tol_feas:
            return _result(u_c, worst(u_c), u_nom, OPTIMAL, iterations=int(res.nit),
                           evaluations=evaluations, wall_time=time.perf_counter() - t0)

    # Maximize the worst margin through a slack variable to report a
    # least-violating input.
    def neg_slack(z):
        return -z[-1]

    slack_cons = [
        {"type": "ineq", "fun": lambda z, fn=fn: float(fn(z[:-1])) - z[-1]} for fn in margin_fns
    ]
    z0 = np.concatenate([u0, [worst(u0)]])
    res = scipy.optimize.minimize(
        neg_slack,
        z0,
        method="SLSQP",
        bounds=bounds + [(None, None)],
        constraints=slack_cons,
        options={"maxiter": 2 * max_iter, "ftol": 1e-10},
    )
    u_lv = box.project(res.x[:-1])
    if worst(u_lv) < worst(u0):
        u_lv = u0
    wv = worst(u_lv)
    status = FEASIBLE_SUBOPTIMAL if wv >= -tol_feas else INFEASIBLE
    return _result(u_lv, wv, u_nom, status, evaluations=evaluations + int(res.nfev),
                   wall_time=time.perf_counter() - t0)


def solve_sampling(
    u_nom: np.ndarray,
    margin_fns: Sequence[Callable[[np.ndarray], float]],
    box: InputBox,
    S: int,
) -> FilterResult:
    """Deterministic grid search over the input box.

    The uniform grid (S points per dimension, box corners included by
    construction) is augmented with the projected nominal input; among
    feasible candidates the one closest to the nominal wins, ties broken
    by lexicographically smallest input.  The result does not depend on
    evaluation order.
    """
    t0 = time.perf_counter()
    if S < 3:
        raise ValueError("S must be >= 3")
    if box.dim > 3:
        raise ValueError("sampling backend supports at most 3 input dimensions")
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    u0 = box.project(u_nom)
    cands = _grid_candidates(box, S, extra=[u0])

    worst = np.full(len(cands), np.inf)
    for fn in margin_fns:
        worst = np.minimum(worst, _eval_margins(fn, cands))

    feasible = worst >= -TOL_FEAS
    n_eval = len(cands) * len(margin_fns)
    if not np.any(feasible):
        idx = np.flatnonzero(worst >= np.max(worst) - 1e-12)
        order = np.lexsort(cands[idx].T[::-1])
        pick = idx[order[0]]
        return _result(cands[pick], worst[pick], u_nom, INFEASIBLE, evaluations=n_eval,
                       wall_time=time.perf_counter() - t0)

    idx = np.flatnonzero(feasible)
    dists = np.linalg.norm(cands[idx] - u_nom, axis=1)
    idx = idx[dists <= dists.min() + 1e-12]
    order = np.lexsort(cands[idx].T[::-1])
    pick = idx[order[0]]
    u_c = cands[pick]
    status = OPTIMAL if np.allclose(u_c, u0) else FEASIBLE_SUBOPTIMAL
    return _result(u_c, worst[pick], u_nom, status, evaluations=n_eval,
                   wall_time=time.perf_counter() - t0)


def _rk_margin_fns(sys, h_list, params, x_k, u_prev, tab):
    def make(h):
        def fn(u):
            return exact_margin(
                sys, h, params, x_k, u_prev, u,
                flow=lambda x, v: flow_step(sys, x, v, params.T, tab),
            )

        return fn

    return [make(h) for h in h_list]


def _sampling_margin_fns(sys, h_list, params, x_k, u_prev, substeps):
    """Batch-capable margin functions using the reference flow.

    A candidate batch of shape (k, m) is propagated jointly when the
    system supports vectorized evaluation.
    """
    x_k = np.asarray(x_k, dtype=float)

    def make(h):
        h_now = h.value(x_k, u_prev)
        offset = (h_now - params.gamma(h_now)) + params.delta + params.mismatch

        def fn(u):
            u = np.asarray(u, dtype=float)
            if u.ndim == 2 and sys.vectorized:
                X = np.broadcast_to(x_k, (len(u), x_k.size)).copy()
                X_next = flow_reference(sys, X, u, params.T, substeps)
                return np.asarray(h.value(X_next, u), dtype=float) - offset
            u1 = np.atleast_1d(u)
            x_next = flow_reference(sys, x_k, u1, params.T, substeps)
            return float(h.value(x_next, u1)) - offset

        return fn

    return [make(h) for h in h_list]


def safety_filter_step(
    backend: FilterBackend,
    sys: ControlAffineSystem,
    h_list: Sequence[ConstraintFunction],
    params: ZocbfParams,
    x_k: np.ndarray,
    u_prev: np.ndarray,
    u_nom: np.ndarray,
    box: InputBox,
) -> FilterResult:
    """Run one filter step with the selected backend and return the
    applied input together with its worst margin and solve statistics."""
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))

    if backend.kind == "no_filter":
        u = box.project(u_nom)
        margins = [exact_margin(sys, h, params, x_k, u_prev, u) for h in h_list]
        return _result(u, min(margins), u_nom, OPTIMAL)

    if backend.kind == "linearized_linear":
        model = affine_model(sys, x_k)
        dm = discretize(model, params.T)
        cons = [linear_constraint(h, dm, model, params, x_k, u_prev) for h in h_list]
        return solve_qp_halfspace_box(u_nom, cons, box)

    if backend.kind == "linearized_quadratic":
        model = affine_model(sys, x_k)
        dm = discretize(model, params.T)
        cons = [quadratic_constraint(h, dm, model, params, x_k, u_prev) for h in h_list]
        return solve_qcqp_box(u_nom, cons, [], box)

    if backend.kind == "rk_nonlinear":
        tab = tableau_for_order(backend.order)
        fns = _rk_margin_fns(sys, h_list, params, x_k, u_prev, tab)
        return solve_sqp_box(u_nom, fns, box, warm_start=u_prev)

    # sampling
    fns = _sampling_margin_fns(sys, h_list, params, x_k, u_prev, backend.substeps)
    return solve_sampling(u_nom, fns, box, backend.samples)
