"""Bundled experiment models: a double integrator with two
high-relative-degree position constraints, and a differential-drive
robot on uneven terrain with a tip-over (ZMP) constraint and a
waypoint-following nominal controller."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import ConstraintFunction, ControlAffineSystem, InputBox, finite_diff_grad


class TerrainError(RuntimeError):
    """The terrain gradient evaluated to a non-finite value."""


# ---------------------------------------------------------------------------
# Double integrator
# ---------------------------------------------------------------------------

def double_integrator() -> ControlAffineSystem:
    """p' = v, v' = u with state (p, v) and scalar input."""

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1], np.zeros_like(x[..., 0])], axis=-1)

    def g(x):
        x = np.asarray(x, dtype=float)
        col = np.array([[0.0], [1.0]])
        return np.broadcast_to(col, x.shape[:-1] + (2, 1))

    def df_dx(x):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    return ControlAffineSystem(n=2, m=1, f=f, g=g, df_dx=df_dx, vectorized=True)


def double_integrator_box() -> InputBox:
    return InputBox(lower=np.array([-10.0]), upper=np.array([10.0]))


def position_limit_constraint(limit: float = 10.0) -> ConstraintFunction:
    """h(x) = limit - p, relative degree two."""

    def h(x, u):
        x = np.asarray(x, dtype=float)
        return limit - x[..., 0]

    return ConstraintFunction(
        h=h,
        grad_x=lambda x, u: np.array([-1.0, 0.0]),
        grad_u=lambda x, u: np.zeros(1),
        hess=lambda x, u: np.zeros((3, 3)),
        name="h1",
    )


def position_square_constraint(limit: float = 10.0) -> ConstraintFunction:
    """h(x) = limit - p^2, concave and of relative degree two."""

    def h(x, u):
        x = np.asarray(x, dtype=float)
        return limit - x[..., 0] ** 2

    def grad_x(x, u):
        return np.array([-2.0 * float(np.asarray(x)[0]), 0.0])

    def hess(x, u):
        H = np.zeros((3, 3))
        H[0, 0] = -2.0
        return H

    return ConstraintFunction(
        h=h, grad_x=grad_x, grad_u=lambda x, u: np.zeros(1), hess=hess, name="h2"
    )


# ---------------------------------------------------------------------------
# Terrain and rollover robot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Terrain:
    """Height field z(x, y) with optional analytic gradient.

    Slope magnitudes must stay below one so roll and pitch remain
    bounded away from +-pi/2.
    """

    height: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]] = None

    def grad_at(self, x, y):
        if self.gradient is not None:
            zx, zy = self.gradient(x, y)
        else:
            point = np.array([float(x), float(y)])
            zx, zy = finite_diff_grad(lambda p: float(self.height(p[0], p[1])), point)
        zx = np.asarray(zx, dtype=float)
        zy = np.asarray(zy, dtype=float)
        if not (np.all(np.isfinite(zx)) and np.all(np.isfinite(zy))):
            raise TerrainError(f"non-finite terrain gradient at ({x}, {y})")
        return zx, zy


def flat_terrain() -> Terrain:
    return Terrain(
        height=lambda x, y: np.zeros_like(np.asarray(x, dtype=float)),
        gradient=lambda x, y: (
            np.zeros_like(np.asarray(x, dtype=float)),
            np.zeros_like(np.asarray(y, dtype=float)),
        ),
    )


def default_terrain(amplitude: float = 0.35, omega_x: float = 0.8, omega_y: float = 0.8) -> Terrain:
    """Undulating surface z = a sin(wx x) sin(wy y) with analytic gradient.

    Default parameters keep the maximum slope at a*w = 0.28, so roll and
    pitch stay well inside (-pi/2, pi/2), while the bundled reference
    path still induces rollover under the unfiltered controller.
    """

    def height(x, y):
        return amplitude * np.sin(omega_x * np.asarray(x, dtype=float)) * np.sin(
            omega_y * np.asarray(y, dtype=float)
        )

    def gradient(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        zx = amplitude * omega_x * np.cos(omega_x * x) * np.sin(omega_y * y)
        zy = amplitude * omega_y * np.sin(omega_x * x) * np.cos(omega_y * y)
        return zx, zy

    return Terrain(height=height, gradient=gradient)


def slope_angles(terrain: Terrain, x, y, theta):
    """Roll and pitch implied by ground contact at position (x, y) with
    heading ``theta``: pitch is the slope along the heading, roll the
    slope across it.  Returns (alpha, beta) in radians."""
    zx, zy = terrain.grad_at(x, y)
    ct, st = np.cos(theta), np.sin(theta)
    beta = np.arctan(zx * ct + zy * st)
    alpha = np.arctan(np.cos(beta) * (-zx * st + zy * ct))
    return alpha, beta


@dataclass(frozen=True)
class RolloverRobot:
    """Differential-drive robot on a terrain with tip-over parameters.

    State is (x, y, theta) in the inertial frame, input (v, omega).
    ``b`` is the track width, ``h_cg`` the center-of-mass height.
    """

    terrain: Terrain
    b: float = 0.5
    h_cg: float = 0.25
    g_grav: float = 9.81
    K_v: float = 1.2
    K_omega: float = 2.5

    def __post_init__(self):
        if self.b <= 0 or self.h_cg <= 0 or self.g_grav <= 0:
            raise ValueError("robot geometry and gravity must be positive")
        if self.K_v < 0 or self.K_omega < 0:
            raise ValueError("controller gains must be nonnegative")

    def system(self) -> ControlAffineSystem:
        """Kinematics on the terrain; zero drift, input matrix from the
        contact-constrained roll/pitch angles."""
        terrain = self.terrain

        def f(x):
            return np.zeros_like(np.asarray(x, dtype=float))

        def g(x):
            x = np.asarray(x, dtype=float)
            theta = np.mod(x[..., 2], 2.0 * np.pi)
            alpha, beta = slope_angles(terrain, x[..., 0], x[..., 1], theta)
            zeros = np.zeros_like(theta)
            G = np.stack(
                [
                    np.stack([np.cos(theta) * np.cos(beta), zeros], axis=-1),
                    np.stack([np.sin(theta) * np.cos(beta), zeros], axis=-1),
                    np.stack([zeros, np.cos(alpha) / np.cos(beta)], axis=-1),
                ],
                axis=-2,
            )
            return G

        return ControlAffineSystem(n=3, m=2, f=f, g=g, vectorized=True)


def rollover_h_pair(robot: RolloverRobot) -> Tuple[ConstraintFunction, ConstraintFunction]:
    """The tip-over constraint split at its absolute value.

    h_pm(x, u) = -+ v*omega / (g cos(alpha)) + b/(2 h_cg) - tan(alpha);
    the original condition holds iff both halves are nonnegative, and
    each half is smooth in (x, u)."""
    static = robot.b / (2.0 * robot.h_cg)
    terrain = robot.terrain
    g_grav = robot.g_grav

    def make(sign: float, name: str) -> ConstraintFunction:
        def h(x, u):
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            alpha, _ = slope_angles(terrain, x[..., 0], x[..., 1], x[..., 2])
            vw = u[..., 0] * u[..., 1]
            return sign * vw / (g_grav * np.cos(alpha)) + static - np.tan(alpha)

        def grad_u(x, u):
            alpha, _ = slope_angles(terrain, x[0], x[1], x[2])
            scale = sign / (g_grav * np.cos(alpha))
            return np.array([scale * u[1], scale * u[0]])

        return ConstraintFunction(h=h, grad_u=grad_u, name=name)

    return make(-1.0, "h_plus"), make(+1.0, "h_minus")


def nominal_forward_controller(state, goal, K_v: float, K_omega: float) -> np.ndarray:
    """Forward-motion law toward a goal point.

    Longitudinal speed proportional to the along-heading distance; yaw
    rate from the two-argument arctangent of (along, across) distances,
    which matches atan(along/across) when the across component is
    positive and avoids its singularity otherwise.  Both commands vanish
    at the goal."""
    x, y, theta = float(state[0]), float(state[1]), float(state[2])
    dx, dy = float(goal[0]) - x, float(goal[1]) - y
    d_g = np.cos(theta) * dx + np.sin(theta) * dy
    d_bar = -np.sin(theta) * dx + np.cos(theta) * dy
    if abs(dx) < 1e-12 and abs(dy) < 1e-12:
        return np.array([0.0, 0.0])
    v = K_v * d_g
    omega = K_omega * np.arctan2(d_g, d_bar)
    return np.array([v, omega])


class WaypointTracker:
    """Nominal policy following a waypoint sequence.

    Advances to the next waypoint once within the switch radius and
    holds the last one.  The active index is internal state, so use a
    fresh tracker per simulation run."""

    def __init__(self, robot: RolloverRobot, waypoints: Sequence[Sequence[float]],
                 switch_radius: float = 0.5):
        if len(waypoints) == 0:
            raise ValueError("waypoint list must be nonempty")
        self.robot = robot
        self.waypoints = [np.asarray(w, dtype=float) for w in waypoints]
        self.switch_radius = float(switch_radius)
        self._index = 0

    def reset(self):
        self._index = 0

    def __call__(self, state, t: float) -> np.ndarray:
        pos = np.asarray(state[:2], dtype=float)
        while (
            self._index < len(self.waypoints) - 1
            and np.linalg.norm(self.waypoints[self._index] - pos) <= self.switch_radius
        ):
            self._index += 1
        goal = self.waypoints[self._index]
        return nominal_forward_controller(state, goal, self.robot.K_v, self.robot.K_omega)


def default_waypoints() -> List[np.ndarray]:
    """Reference path used by the bundled rollover experiment; chosen so
    the unfiltered controller tips the robot over on the default terrain."""
    return [np.array(w) for w in ((6.0, 0.5), (9.0, 4.0), (4.0, 7.5), (0.0, 4.0))]


def rollover_box(v_max: float = 2.5, omega_max: float = 4.0) -> InputBox:
    return InputBox(lower=np.array([-v_max, -omega_max]), upper=np.array([v_max, omega_max]))
