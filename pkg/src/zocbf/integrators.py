"""Explicit Runge-Kutta flow maps under a held input, plus an
inter-sample minimum checker used to verify safety between samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import ConstraintFunction, ControlAffineSystem


class DivergenceError(RuntimeError):
    """An integrator stage produced a non-finite state."""

    def __init__(self, stage: int):
        super().__init__(f"non-finite state at RK stage {stage}")
        self.stage = stage


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an explicit Runge-Kutta method.

    ``coeffs`` must be strictly lower triangular and the stage weights
    must sum to one.
    """

    order: int
    weights: Tuple[float, ...]
    coeffs: Tuple[Tuple[float, ...], ...]

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("stage weights must sum to 1")
        for i, row in enumerate(self.coeffs):
            if len(row) != len(self.weights):
                raise ValueError("coefficient rows must match stage count")
            if any(row[j] != 0.0 for j in range(i, len(row))):
                raise ValueError("tableau must be strictly lower triangular (explicit method)")

    @property
    def stages(self) -> int:
        return len(self.weights)


EULER = ButcherTableau(order=1, weights=(1.0,), coeffs=((0.0,),))

MIDPOINT = ButcherTableau(
    order=2,
    weights=(0.0, 1.0),
    coeffs=((0.0, 0.0), (0.5, 0.0)),
)

RK4 = ButcherTableau(
    order=4,
    weights=(1 / 6, 1 / 3, 1 / 3, 1 / 6),
    coeffs=(
        (0.0, 0.0, 0.0, 0.0),
        (0.5, 0.0, 0.0, 0.0),
        (0.0, 0.5, 0.0, 0.0),
        (0.0, 0.0, 1.0, 0.0),
    ),
)

_TABLEAUX = {1: EULER, 2: MIDPOINT, 4: RK4}


def tableau_for_order(p: int) -> ButcherTableau:
    """Bundled tableau of order ``p`` (1, 2 or 4)."""
    try:
        return _TABLEAUX[p]
    except KeyError:
        raise ValueError(f"no bundled tableau of order {p}; choose from {sorted(_TABLEAUX)}") from None


def flow_step(
    sys: ControlAffineSystem,
    x: np.ndarray,
    u: np.ndarray,
    T: float,
    tab: ButcherTableau = RK4,
) -> np.ndarray:
    """One explicit RK step of length ``T`` with ``u`` held constant.

    Supports batched ``x``/``u`` (leading dimensions broadcast) when the
    system is vectorized.
    """
    if T <= 0.0:
        raise ValueError("step length T must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    ks = []
    for i in range(tab.stages):
        xi = x
        for j in range(i):
            lam = tab.coeffs[i][j]
            if lam != 0.0:
                xi = xi + T * lam * ks[j]
        k = sys.rhs(xi, u)
        if not np.all(np.isfinite(k)):
            raise DivergenceError(i)
        ks.append(k)
    out = x
    for w, k in zip(tab.weights, ks):
        if w != 0.0:
            out = out + T * w * k
    return out


def flow_reference(
    sys: ControlAffineSystem,
    x: np.ndarray,
    u: np.ndarray,
    T: float,
    substeps: int = 10,
) -> np.ndarray:
    """High-accuracy flow: ``substeps`` RK4 steps of length T/substeps.

    Serves as the ground-truth propagation for simulation and tests.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    dt = T / substeps
    for _ in range(substeps):
        x = flow_step(sys, x, u, dt, RK4)
    return x


def min_h_intersample(
    sys: ControlAffineSystem,
    h: ConstraintFunction,
    x: np.ndarray,
    u: np.ndarray,
    T: float,
    grid: int = 10,
) -> Tuple[float, float]:
    """Minimum of h along the held-input flow on {0, T/grid, ..., T}.

    Returns (minimum value, time of the minimum).  Grid sampling is a
    deliberate test instrument, not a certified bound.
    """
    if grid < 2:
        raise ValueError("grid must be >= 2")
    dt = T / grid
    best_val = h.value(np.asarray(x, dtype=float), u)
    best_t = 0.0
    xi = np.asarray(x, dtype=float)
    for k in range(1, grid + 1):
        xi = flow_step(sys, xi, u, dt, RK4)
        val = h.value(xi, u)
        if val < best_val:
            best_val, best_t = val, k * dt
    return float(best_val), float(best_t)
