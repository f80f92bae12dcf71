"""Declarative experiment configuration: YAML schema, validation, and
construction of the bundled experiment setups."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import yaml

from .core import ClassKappa, ConstraintFunction, ControlAffineSystem, InputBox, ZocbfParams
from .models import (
    RolloverRobot,
    WaypointTracker,
    default_terrain,
    default_waypoints,
    double_integrator,
    double_integrator_box,
    position_limit_constraint,
    position_square_constraint,
    rollover_box,
)
from .simulation import NominalPolicy
from .solvers import FilterBackend

MODELS = ("double_integrator_h1", "double_integrator_h2", "rollover")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, fieldname: str, message: str):
        super().__init__(f"config field '{fieldname}': {message}")
        self.fieldname = fieldname


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    backend: FilterBackend = FilterBackend(kind="linearized_linear")
    T: float = 0.1
    delta: float = 0.01
    gamma_c: float = 1.0
    mismatch: float = 0.0
    x0: Optional[tuple] = None
    u_init: Optional[tuple] = None
    steps: int = 100
    substeps: int = 10
    box_lower: Optional[tuple] = None
    box_upper: Optional[tuple] = None
    model_params: dict = field(default_factory=dict)
    out_dir: str = "results"

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "backend": {
                "kind": self.backend.kind,
                "order": self.backend.order,
                "samples": self.backend.samples,
                "substeps": self.backend.substeps,
            },
            "T": self.T,
            "delta": self.delta,
            "gamma_c": self.gamma_c,
            "mismatch": self.mismatch,
            "x0": list(self.x0) if self.x0 is not None else None,
            "u_init": list(self.u_init) if self.u_init is not None else None,
            "steps": self.steps,
            "substeps": self.substeps,
            "box_lower": list(self.box_lower) if self.box_lower is not None else None,
            "box_upper": list(self.box_upper) if self.box_upper is not None else None,
            "model_params": dict(self.model_params),
            "out_dir": self.out_dir,
        }


def _parse_backend(raw) -> FilterBackend:
    if isinstance(raw, str):
        raw = {"kind": raw}
    if not isinstance(raw, dict):
        raise ConfigError("backend", f"expected string or mapping, got {type(raw).__name__}")
    try:
        return FilterBackend(
            kind=raw.get("kind", "linearized_linear"),
            order=int(raw.get("order", 4)),
            samples=int(raw.get("samples", 41)),
            substeps=int(raw.get("substeps", 10)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError("backend", str(exc)) from exc


def _number(raw: dict, name: str, default, positive=False, nonnegative=False):
    val = raw.get(name, default)
    try:
        val = float(val)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {raw.get(name)!r}") from None
    if positive and val <= 0:
        raise ConfigError(name, f"must be positive, got {val}")
    if nonnegative and val < 0:
        raise ConfigError(name, f"must be nonnegative, got {val}")
    return val


def _vector(raw: dict, name: str):
    val = raw.get(name)
    if val is None:
        return None
    try:
        vec = tuple(float(v) for v in val)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a numeric sequence, got {val!r}") from None
    if not all(np.isfinite(vec)):
        raise ConfigError(name, "entries must be finite")
    return vec


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    model = raw.get("model")
    if model not in MODELS:
        raise ConfigError("model", f"must be one of {MODELS}, got {model!r}")

    gamma_c = _number(raw, "gamma_c", 1.0, positive=True)
    steps = raw.get("steps", 100)
    if not isinstance(steps, int) or steps < 1:
        raise ConfigError("steps", f"must be a positive integer, got {steps!r}")
    substeps = raw.get("substeps", 10)
    if not isinstance(substeps, int) or substeps < 1:
        raise ConfigError("substeps", f"must be a positive integer, got {substeps!r}")
    model_params = raw.get("model_params", {}) or {}
    if not isinstance(model_params, dict):
        raise ConfigError("model_params", "must be a mapping")

    return ExperimentConfig(
        model=model,
        backend=_parse_backend(raw.get("backend", "linearized_linear")),
        T=_number(raw, "T", 0.1, positive=True),
        delta=_number(raw, "delta", 0.01, nonnegative=True),
        gamma_c=gamma_c,
        mismatch=_number(raw, "mismatch", 0.0, nonnegative=True),
        x0=_vector(raw, "x0"),
        u_init=_vector(raw, "u_init"),
        steps=steps,
        substeps=substeps,
        box_lower=_vector(raw, "box_lower"),
        box_upper=_vector(raw, "box_upper"),
        model_params=model_params,
        out_dir=str(raw.get("out_dir", "results")),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        try:
            raw = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"YAML parse error: {exc}") from exc
    return config_from_dict(raw or {})


@dataclass
class Experiment:
    """Fully constructed experiment: everything ``simulate`` needs."""

    sys: ControlAffineSystem
    h_list: List[ConstraintFunction]
    params: ZocbfParams
    policy: NominalPolicy
    box: InputBox
    x0: np.ndarray
    u_init: Optional[np.ndarray]


def build_experiment(cfg: ExperimentConfig) -> Experiment:
    """Instantiate the model, constraints, nominal policy and box for a
    validated configuration.

    ``gamma_c`` is a per-second decay rate; the per-step shaping
    coefficient entering the barrier condition is gamma_c * T, which
    must land in (0, 1].
    """
    step_gamma = cfg.gamma_c * cfg.T
    if not (0.0 < step_gamma <= 1.0):
        raise ConfigError("gamma_c", f"gamma_c * T must lie in (0, 1], got {step_gamma}")
    params = ZocbfParams(
        T=cfg.T, delta=cfg.delta, gamma=ClassKappa(gamma_c=step_gamma), mismatch=cfg.mismatch
    )
    mp = cfg.model_params

    if cfg.model in ("double_integrator_h1", "double_integrator_h2"):
        sys = double_integrator()
        limit = float(mp.get("limit", 10.0))
        if cfg.model == "double_integrator_h1":
            h_list = [position_limit_constraint(limit)]
        else:
            h_list = [position_square_constraint(limit)]
        box = double_integrator_box()
        u_nom = float(mp.get("u_nom", 0.0))
        policy = lambda x, t: np.array([u_nom])
        x0 = np.asarray(cfg.x0 if cfg.x0 is not None else (0.0, 2.0), dtype=float)
    else:
        terrain = default_terrain(
            amplitude=float(mp.get("terrain_amplitude", 0.35)),
            omega_x=float(mp.get("terrain_omega_x", 0.8)),
            omega_y=float(mp.get("terrain_omega_y", 0.8)),
        )
        robot = RolloverRobot(
            terrain=terrain,
            b=float(mp.get("b", 0.5)),
            h_cg=float(mp.get("h_cg", 0.25)),
            g_grav=float(mp.get("g_grav", 9.81)),
            K_v=float(mp.get("K_v", 1.2)),
            K_omega=float(mp.get("K_omega", 2.5)),
        )
        sys = robot.system()
        from .models import rollover_h_pair

        h_plus, h_minus = rollover_h_pair(robot)
        h_list = [h_plus, h_minus]
        waypoints = mp.get("waypoints", default_waypoints())
        policy = WaypointTracker(robot, waypoints, switch_radius=float(mp.get("switch_radius", 0.5)))
        box = rollover_box(
            v_max=float(mp.get("v_max", 2.5)), omega_max=float(mp.get("omega_max", 4.0))
        )
        x0 = np.asarray(cfg.x0 if cfg.x0 is not None else (0.0, 0.0, 0.0), dtype=float)

    if cfg.box_lower is not None or cfg.box_upper is not None:
        lower = np.asarray(cfg.box_lower if cfg.box_lower is not None else box.lower, dtype=float)
        upper = np.asarray(cfg.box_upper if cfg.box_upper is not None else box.upper, dtype=float)
        try:
            box = InputBox(lower=lower, upper=upper)
        except ValueError as exc:
            raise ConfigError("box_lower/box_upper", str(exc)) from exc

    if x0.size != sys.n:
        raise ConfigError("x0", f"expected {sys.n} entries for model {cfg.model}, got {x0.size}")
    u_init = None
    if cfg.u_init is not None:
        u_init = np.asarray(cfg.u_init, dtype=float)
        if u_init.size != box.dim:
            raise ConfigError("u_init", f"expected {box.dim} entries, got {u_init.size}")

    return Experiment(
        sys=sys, h_list=h_list, params=params, policy=policy, box=box, x0=x0, u_init=u_init
    )
