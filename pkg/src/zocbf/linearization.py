"""Affine model about the current state and its exact zero-order-hold
discretization; state prediction that is linear in the input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import ControlAffineSystem, finite_diff_jacobian


class LinearizationError(RuntimeError):
    """The local affine model could not be formed."""


@dataclass(frozen=True)
class AffineModel:
    """Local model  x' = A x + B u + C  about an operating state.

    The operating state need not be an equilibrium; C absorbs the
    affine remainder f(x_k) - A x_k.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray


@dataclass(frozen=True)
class DiscreteModel:
    """Zero-order-hold transition matrices over one sampling period:
    A_D = exp(A T), B_D = integral of exp(A s) ds over [0, T]."""

    A_D: np.ndarray
    B_D: np.ndarray


def affine_model(sys: ControlAffineSystem, x_k: np.ndarray) -> AffineModel:
    """Linearize the dynamics about ``x_k`` (not necessarily an equilibrium).

    Uses the analytic Jacobian when provided, central finite differences
    otherwise.
    """
    x_k = np.asarray(x_k, dtype=float)
    if sys.df_dx is not None:
        A = np.asarray(sys.df_dx(x_k), dtype=float)
    else:
        A = finite_diff_jacobian(sys.f, x_k)
    B = np.asarray(sys.g(x_k), dtype=float).reshape(sys.n, sys.m)
    fx = np.asarray(sys.f(x_k), dtype=float)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B)) and np.all(np.isfinite(fx))):
        raise LinearizationError(f"non-finite linearization at x={x_k}")
    return AffineModel(A=A, B=B, C=fx - A @ x_k)


def expm(M: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling-and-squaring Pade, via scipy)."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix exponential of non-finite matrix")
    E = scipy.linalg.expm(M)
    if not np.all(np.isfinite(E)):
        raise OverflowError("matrix exponential overflowed")
    return E


def discretize(model: AffineModel, T: float) -> DiscreteModel:
    """Exact zero-order-hold discretization via the augmented exponential
    of [[A, I], [0, 0]] * T, valid for singular A as well."""
    if T <= 0.0:
        raise ValueError("sampling period T must be positive")
    n = model.A.shape[0]
    aug = np.zeros((2 * n, 2 * n))
    aug[:n, :n] = model.A
    aug[:n, n:] = np.eye(n)
    E = expm(aug * T)
    return DiscreteModel(A_D=E[:n, :n], B_D=E[:n, n:])


def predict_state_linear(
    dm: DiscreteModel, model: AffineModel, x_k: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """One-step prediction  A_D x_k + B_D B u + B_D C  (linear in u)."""
    x_k = np.asarray(x_k, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return dm.A_D @ x_k + dm.B_D @ (model.B @ u) + dm.B_D @ model.C
