"""The sampled-data barrier condition and its tractable surrogates.

The exact condition compares the constraint value predicted one sampling
period ahead against a shaped version of its current value.  The
surrogates replace the flow by a zero-order-hold linear prediction and
the constraint by a first- or second-order Taylor model, yielding a
linear or a convex-quadratic constraint on the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import ClassKappa, ConstraintFunction, ControlAffineSystem, ZocbfParams, finite_diff_grad
from .integrators import ButcherTableau, flow_reference, flow_step
from .linearization import AffineModel, DiscreteModel


@dataclass(frozen=True)
class LinearConstraint:
    """Halfspace constraint on the input:  a . u + b >= 0."""

    a: np.ndarray
    b: float

    def margin(self, u: np.ndarray) -> float:
        return float(self.a @ np.atleast_1d(np.asarray(u, dtype=float)) + self.b)


@dataclass(frozen=True)
class QuadraticConstraint:
    """Quadratic constraint on the input:  u' Q u + q . u + c >= 0."""

    Q: np.ndarray
    q: np.ndarray
    c: float

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")

    def margin(self, u: np.ndarray) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(u @ self.Q @ u + self.q @ u + self.c)


FlowMap = Callable[[np.ndarray, np.ndarray], np.ndarray]


def exact_margin(
    sys: ControlAffineSystem,
    h: ConstraintFunction,
    params: ZocbfParams,
    x_k: np.ndarray,
    u_prev: np.ndarray,
    u: np.ndarray,
    flow: Optional[FlowMap] = None,
) -> float:
    """Margin of the barrier condition at candidate input ``u``.

    Returns h(x_next, u) - (Id - gamma)(h(x_k, u_prev)) - delta - mismatch
    where x_next is the flow over one sampling period; ``u`` is feasible
    iff the result is nonnegative.  ``flow`` defaults to the reference
    integrator; pass a single RK step for the numerical-integration
    backend.
    """
    if flow is None:
        flow = lambda x, v: flow_reference(sys, x, v, params.T)
    h_now = h.value(np.asarray(x_k, dtype=float), u_prev)
    x_next = flow(np.asarray(x_k, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)))
    h_next = h.value(x_next, u)
    return float(h_next - (h_now - params.gamma(h_now)) - params.delta - params.mismatch)


def delta_lower_bound(hbar_x: float, M: float, T: float) -> float:
    """Smallest robustness buffer with a guaranteed inter-sample bound:
    (gradient bound) * (velocity bound) * (sampling period)."""
    if hbar_x < 0.0 or M < 0.0:
        raise ValueError("bounds must be nonnegative")
    return hbar_x * M * T


def taylor1_h(
    h: ConstraintFunction, x_k: np.ndarray, u_prev: np.ndarray
) -> Callable[[np.ndarray, np.ndarray], float]:
    """First-order Taylor model of h about (x_k, u_prev)."""
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    h0 = h.value(x_k, u_prev)
    gx = h.grad_x_at(x_k, u_prev)
    gu = h.grad_u_at(x_k, u_prev)

    def approx(x: np.ndarray, u: np.ndarray) -> float:
        dx = np.asarray(x, dtype=float) - x_k
        du = np.atleast_1d(np.asarray(u, dtype=float)) - u_prev
        return float(h0 + gx @ dx + gu @ du)

    return approx


def taylor2_h(
    h: ConstraintFunction, x_k: np.ndarray, u_prev: np.ndarray
) -> Callable[[np.ndarray, np.ndarray], float]:
    """Second-order Taylor model of h about (x_k, u_prev).

    Exact for quadratic h, e.g. the bundled position-squared constraint.
    """
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    lin = taylor1_h(h, x_k, u_prev)
    H = h.hess_at(x_k, u_prev)

    def approx(x: np.ndarray, u: np.ndarray) -> float:
        d = np.concatenate(
            [np.asarray(x, dtype=float) - x_k, np.atleast_1d(np.asarray(u, dtype=float)) - u_prev]
        )
        return lin(x, u) + 0.5 * float(d @ H @ d)

    return approx


def _kappa_offset(
    h: ConstraintFunction,
    dm: DiscreteModel,
    model: AffineModel,
    params: ZocbfParams,
    x_k: np.ndarray,
    u_prev: np.ndarray,
    gx: np.ndarray,
    gu: np.ndarray,
) -> float:
    """Input-independent part of the linearized barrier condition."""
    drift = dm.A_D @ x_k + dm.B_D @ model.C - x_k
    h0 = h.value(x_k, u_prev)
    return float(gx @ drift - gu @ u_prev + params.gamma(h0) - params.delta - params.mismatch)


def linear_constraint(
    h: ConstraintFunction,
    dm: DiscreteModel,
    model: AffineModel,
    params: ZocbfParams,
    x_k: np.ndarray,
    u_prev: np.ndarray,
) -> LinearConstraint:
    """Barrier condition with linear prediction and first-order h model:
    a halfspace constraint on the input."""
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    gx = h.grad_x_at(x_k, u_prev)
    gu = h.grad_u_at(x_k, u_prev)
    a = gx @ (dm.B_D @ model.B) + gu
    b = _kappa_offset(h, dm, model, params, x_k, u_prev, gx, gu)
    return LinearConstraint(a=a, b=b)


def quadratic_constraint(
    h: ConstraintFunction,
    dm: DiscreteModel,
    model: AffineModel,
    params: ZocbfParams,
    x_k: np.ndarray,
    u_prev: np.ndarray,
) -> QuadraticConstraint:
    """Barrier condition with linear prediction and second-order h model:
    a quadratic constraint on the input, convex whenever h is concave."""
    x_k = np.asarray(x_k, dtype=float)
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    n, m = model.B.shape
    gx = h.grad_x_at(x_k, u_prev)
    gu = h.grad_u_at(x_k, u_prev)
    J = 0.5 * h.hess_at(x_k, u_prev)  # quadratic-form matrix of the Taylor model

    # Stacked deviation (x_next - x_k, u - u_prev) is affine in u: P u + r.
    P = np.vstack([dm.B_D @ model.B, np.eye(m)])
    r = np.concatenate([dm.A_D @ x_k + dm.B_D @ model.C - x_k, -u_prev])

    a = gx @ (dm.B_D @ model.B) + gu
    b = _kappa_offset(h, dm, model, params, x_k, u_prev, gx, gu)

    Q = P.T @ J @ P
    q = 2.0 * (P.T @ (J @ r)) + a
    c = float(r @ J @ r) + b
    return QuadraticConstraint(Q=0.5 * (Q + Q.T), q=q, c=c)


def conventional_cbf_margin(
    sys: ControlAffineSystem,
    b_fn: ConstraintFunction,
    gamma: ClassKappa,
    T: float,
    x: np.ndarray,
    u: np.ndarray,
) -> float:
    """Continuous-time barrier condition recovered in the small-T limit:
    grad b . (f + g u) + gamma(b)/T.  Baseline for comparisons; ``b_fn``
    must be state-only."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    grad = b_fn.grad_x_at(x, u)
    return float(grad @ sys.rhs(x, u) + gamma(b_fn.value(x, u)) / T)


def input_sensitivity(
    sys: ControlAffineSystem,
    h: ConstraintFunction,
    x_k: np.ndarray,
    u0: np.ndarray,
    T: float,
    tab: ButcherTableau,
) -> np.ndarray:
    """Finite-difference gradient, with respect to the held input, of the
    predicted constraint value one RK step ahead.

    For a state-only constraint of relative degree rho this is exactly
    zero when the RK order is below rho and nonzero once it reaches it.
    """
    x_k = np.asarray(x_k, dtype=float)
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))

    def predicted(u: np.ndarray) -> float:
        return h.value(flow_step(sys, x_k, u, T, tab), u)

    return finite_diff_grad(predicted, u0)
