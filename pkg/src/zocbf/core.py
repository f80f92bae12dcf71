"""Shared domain types: systems, constraints, input boxes, filter parameters."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


class EvaluationError(ValueError):
    """A user-supplied map returned a non-finite value."""


@dataclass(frozen=True)
class ControlAffineSystem:
    """Continuous-time system  x' = f(x) + g(x) u.

    ``f`` maps a state of shape (n,) to (n,), ``g`` maps it to (n, m).
    When ``vectorized`` is set, both must also accept stacked states of
    shape (..., n) and broadcast, which lets the sampling backend batch
    flow evaluations.  ``df_dx`` is the optional Jacobian of ``f``.
    """

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    df_dx: Optional[Callable[[np.ndarray], np.ndarray]] = None
    vectorized: bool = False

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"state/input dimensions must be positive, got n={self.n}, m={self.m}")

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """f(x) + g(x) u, supporting batched x/u when ``vectorized``."""
        fx = np.asarray(self.f(x), dtype=float)
        gx = np.asarray(self.g(x), dtype=float)
        if fx.ndim == 1 and gx.ndim == 2:
            return fx + gx @ np.asarray(u, dtype=float)
        return fx + np.einsum("...ij,...j->...i", gx, np.asarray(u, dtype=float))


@dataclass(frozen=True)
class InputBox:
    """Axis-aligned admissible input set {u : lower <= u <= upper}."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower/upper must have matching shapes")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def project(self, u: np.ndarray) -> np.ndarray:
        """Componentwise clamp of ``u`` into the box."""
        return np.clip(np.atleast_1d(np.asarray(u, dtype=float)), self.lower, self.upper)

    def contains(self, u: np.ndarray, tol: float = 0.0) -> bool:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def corners(self) -> np.ndarray:
        """All 2^m vertices, one per row."""
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass(frozen=True)
class ClassKappa:
    """Extended class-K shaping function, currently the linear family
    gamma(s) = gamma_c * s with gamma_c in (0, 1].

    The ``kind`` tag leaves room for other families without changing
    call sites.
    """

    gamma_c: float
    kind: str = "linear"

    def __post_init__(self):
        if self.kind != "linear":
            raise ValueError(f"unsupported class-K kind {self.kind!r}")
        if not (0.0 < self.gamma_c <= 1.0):
            raise ValueError(f"gamma_c must lie in (0, 1], got {self.gamma_c}")

    def __call__(self, s: float) -> float:
        return self.gamma_c * s


@dataclass(frozen=True)
class ZocbfParams:
    """Parameters of the sampled-data barrier condition.

    ``T`` is the sampling period, ``delta`` the robustness buffer that
    covers inter-sample excursions, ``mismatch`` a constant bound on the
    prediction discrepancy of the chosen numerical backend.
    """

    T: float
    delta: float
    gamma: ClassKappa
    mismatch: float = 0.0

    def __post_init__(self):
        if self.T <= 0.0:
            raise ValueError(f"sampling period T must be positive, got {self.T}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if self.mismatch < 0.0:
            raise ValueError(f"mismatch must be nonnegative, got {self.mismatch}")


def _fd_step(value: float) -> float:
    return 1e-6 * max(1.0, abs(value))


def finite_diff_grad(fn: Callable[[np.ndarray], float], point: np.ndarray) -> np.ndarray:
    """Central-difference gradient of a scalar map at ``point``.

    Step per coordinate is 1e-6 * max(1, |coordinate|).
    """
    point = np.asarray(point, dtype=float)
    grad = np.empty_like(point)
    for i in range(point.size):
        step = _fd_step(point[i])
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        f_hi, f_lo = fn(hi), fn(lo)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise EvaluationError(f"non-finite map value while differencing coordinate {i}")
        grad[i] = (f_hi - f_lo) / (2.0 * step)
    return grad


def finite_diff_jacobian(fn: Callable[[np.ndarray], np.ndarray], point: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vector map at ``point``."""
    point = np.asarray(point, dtype=float)
    cols = []
    for i in range(point.size):
        step = _fd_step(point[i])
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = np.asarray(fn(hi), dtype=float)
        f_lo = np.asarray(fn(lo), dtype=float)
        if not (np.all(np.isfinite(f_hi)) and np.all(np.isfinite(f_lo))):
            raise EvaluationError(f"non-finite map value while differencing coordinate {i}")
        cols.append((f_hi - f_lo) / (2.0 * step))
    return np.stack(cols, axis=-1)


def finite_diff_hessian(fn: Callable[[np.ndarray], float], point: np.ndarray) -> np.ndarray:
    """Symmetric central-difference Hessian; second-difference step 1e-4."""
    point = np.asarray(point, dtype=float)
    k = point.size
    H = np.empty((k, k))
    steps = np.array([1e-4 * max(1.0, abs(c)) for c in point])
    f0 = fn(point)
    for i in range(k):
        for j in range(i, k):
            hi, hj = steps[i], steps[j]
            if i == j:
                p = point.copy()
                p[i] += hi
                f_pp = fn(p)
                p = point.copy()
                p[i] -= hi
                f_mm = fn(p)
                H[i, i] = (f_pp - 2.0 * f0 + f_mm) / hi**2
            else:
                vals = []
                for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    p = point.copy()
                    p[i] += si * hi
                    p[j] += sj * hj
                    vals.append(fn(p))
                H[i, j] = H[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * hi * hj)
    if not np.all(np.isfinite(H)):
        raise EvaluationError("non-finite map value while forming Hessian")
    return H


@dataclass(frozen=True)
class ConstraintFunction:
    """Scalar safety constraint h(x, u) >= 0 with optional derivatives.

    Missing derivatives fall back to finite differences, so a model only
    has to supply ``h`` itself.  ``hess`` is the full second-derivative
    matrix with respect to the stacked (x, u) vector.
    """

    h: Callable[[np.ndarray, np.ndarray], float]
    grad_x: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    grad_u: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    name: str = "h"

    def value(self, x: np.ndarray, u: np.ndarray) -> float:
        return self.h(x, u)

    def grad_x_at(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.grad_x is not None:
            return np.asarray(self.grad_x(x, u), dtype=float)
        u = np.asarray(u, dtype=float)
        return finite_diff_grad(lambda xx: self.h(xx, u), np.asarray(x, dtype=float))

    def grad_u_at(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.grad_u is not None:
            return np.asarray(self.grad_u(x, u), dtype=float)
        x = np.asarray(x, dtype=float)
        return finite_diff_grad(lambda uu: self.h(x, uu), np.atleast_1d(np.asarray(u, dtype=float)))

    def hess_at(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.hess is not None:
            H = np.asarray(self.hess(x, u), dtype=float)
        else:
            x = np.asarray(x, dtype=float)
            u = np.atleast_1d(np.asarray(u, dtype=float))
            n = x.size
            H = finite_diff_hessian(lambda z: self.h(z[:n], z[n:]), np.concatenate([x, u]))
        return 0.5 * (H + H.T)
