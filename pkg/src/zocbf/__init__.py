"""Sampled-data safety-filter toolkit built on zero-order control
barrier conditions: next-sample constraint prediction, interchangeable
filter backends, and a closed-loop simulator with inter-sample
verification."""

__version__ = "0.1.0"

from .conditions import (
    LinearConstraint,
    QuadraticConstraint,
    conventional_cbf_margin,
    delta_lower_bound,
    exact_margin,
    input_sensitivity,
    linear_constraint,
    quadratic_constraint,
    taylor1_h,
    taylor2_h,
)
from .core import (
    ClassKappa,
    ConstraintFunction,
    ControlAffineSystem,
    EvaluationError,
    InputBox,
    ZocbfParams,
    finite_diff_grad,
)
from .integrators import (
    EULER,
    MIDPOINT,
    RK4,
    ButcherTableau,
    DivergenceError,
    flow_reference,
    flow_step,
    min_h_intersample,
    tableau_for_order,
)
from .linearization import (
    AffineModel,
    DiscreteModel,
    affine_model,
    discretize,
    expm,
    predict_state_linear,
)
from .simulation import SafetyReport, SimulationLog, safety_report, simulate
from .solvers import (
    FilterBackend,
    FilterResult,
    NonconvexConstraintError,
    project_box,
    safety_filter_step,
    solve_qcqp_box,
    solve_qp_halfspace_box,
    solve_sampling,
    solve_sqp_box,
)
