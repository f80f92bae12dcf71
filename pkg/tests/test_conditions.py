import numpy as np
import pytest

from zocbf import (
    ClassKappa,
    ConstraintFunction,
    ControlAffineSystem,
    EULER,
    MIDPOINT,
    RK4,
    ZocbfParams,
    affine_model,
    conventional_cbf_margin,
    delta_lower_bound,
    discretize,
    exact_margin,
    input_sensitivity,
    linear_constraint,
    predict_state_linear,
    quadratic_constraint,
    taylor1_h,
    taylor2_h,
)
from zocbf.conditions import QuadraticConstraint
from zocbf.models import (
    double_integrator,
    position_limit_constraint,
    position_square_constraint,
)


def _params(T=0.1, delta=0.01, gamma_c=0.1, mismatch=0.0):
    return ZocbfParams(T=T, delta=delta, gamma=ClassKappa(gamma_c), mismatch=mismatch)


def _discrete(sys, x):
    model = affine_model(sys, x)
    return discretize(model, 0.1), model


class TestExactMargin:
    def setup_method(self):
        self.sys = double_integrator()
        self.h1 = position_limit_constraint()

    def test_frozen_example(self):
        params = _params(gamma_c=0.1, delta=0.01)
        m = exact_margin(
            self.sys, self.h1, params, np.array([0.0, 2.0]), np.array([0.0]), np.array([0.0])
        )
        # h drops from 10 to 9.8; margin = 9.8 - 0.9*10 - 0.01
        assert abs(m - 0.79) < 1e-9

    def test_stationary_state(self):
        # x stays put, so the margin reduces to gamma(h) - delta
        params = _params(gamma_c=1.0, delta=0.0)
        m = exact_margin(
            self.sys, self.h1, params, np.array([5.0, 0.0]), np.array([0.0]), np.array([0.0])
        )
        assert abs(m - 5.0) < 1e-12

    def test_mismatch_shifts_margin(self):
        x, up, u = np.array([0.0, 2.0]), np.array([0.0]), np.array([1.0])
        base = exact_margin(self.sys, self.h1, _params(), x, up, u)
        shifted = exact_margin(self.sys, self.h1, _params(mismatch=0.25), x, up, u)
        assert abs((base - shifted) - 0.25) < 1e-12

    def test_custom_flow(self):
        # a frozen flow makes the margin independent of u
        params = _params(gamma_c=1.0, delta=0.0)
        frozen = lambda x, u: x
        m = exact_margin(
            self.sys, self.h1, params, np.array([0.0, 2.0]), np.array([0.0]),
            np.array([7.0]), flow=frozen,
        )
        assert abs(m - 10.0) < 1e-12


class TestDeltaLowerBound:
    def test_example(self):
        assert abs(delta_lower_bound(1.0, np.sqrt(200.0), 0.1) - np.sqrt(2.0)) < 1e-12

    def test_scales_linearly(self):
        assert delta_lower_bound(2.0, 3.0, 0.5) == 3.0
        assert delta_lower_bound(0.0, 5.0, 0.1) == 0.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            delta_lower_bound(-1.0, 1.0, 0.1)


class TestTaylorModels:
    def test_affine_constraint_exact(self):
        h1 = position_limit_constraint()
        approx = taylor1_h(h1, np.array([0.0, 2.0]), np.array([0.0]))
        for p in (0.0, 0.2, 3.0):
            assert abs(approx(np.array([p, 2.0]), np.array([0.0])) - (10.0 - p)) < 1e-12

    def test_first_order_misses_curvature(self):
        h2 = position_square_constraint()
        approx = taylor1_h(h2, np.array([0.0, 2.0]), np.array([0.0]))
        # h(1) = 9 but the tangent at p=0 is flat
        assert abs(approx(np.array([1.0, 2.0]), np.array([0.0])) - 10.0) < 1e-12

    def test_second_order_exact_for_quadratic(self):
        h2 = position_square_constraint()
        approx = taylor2_h(h2, np.array([0.0, 2.0]), np.array([0.0]))
        rng = np.random.default_rng(2)
        for _ in range(50):
            x = rng.uniform(-3, 3, size=2)
            u = rng.uniform(-3, 3, size=1)
            assert abs(approx(x, u) - (10.0 - x[0] ** 2)) < 1e-9

    def test_expansion_point_identity(self):
        h2 = position_square_constraint()
        x0, u0 = np.array([1.5, -0.3]), np.array([0.7])
        for make in (taylor1_h, taylor2_h):
            assert abs(make(h2, x0, u0)(x0, u0) - h2.value(x0, u0)) < 1e-12


class TestLinearConstraint:
    def setup_method(self):
        self.sys = double_integrator()
        self.h1 = position_limit_constraint()

    def test_frozen_example(self):
        dm, model = _discrete(self.sys, np.array([0.0, 2.0]))
        con = linear_constraint(self.h1, dm, model, _params(), np.array([0.0, 2.0]), np.array([0.0]))
        assert abs(con.a[0] + 0.005) < 1e-12
        assert abs(con.b - 0.79) < 1e-9

    def test_boundary_at_rest(self):
        # on the boundary with zero velocity only delta is owed
        x = np.array([10.0, 0.0])
        dm, model = _discrete(self.sys, x)
        con = linear_constraint(self.h1, dm, model, _params(), x, np.array([0.0]))
        assert abs(con.a[0] + 0.005) < 1e-12
        assert abs(con.b + 0.01) < 1e-12

    def test_constant_h(self):
        h = ConstraintFunction(
            h=lambda x, u: 3.0,
            grad_x=lambda x, u: np.zeros(2),
            grad_u=lambda x, u: np.zeros(1),
        )
        dm, model = _discrete(self.sys, np.zeros(2))
        con = linear_constraint(h, dm, model, _params(gamma_c=0.1, delta=0.01), np.zeros(2), np.zeros(1))
        assert np.allclose(con.a, 0.0, atol=1e-12)
        assert abs(con.b - (0.3 - 0.01)) < 1e-12

    def test_matches_taylor_of_prediction(self):
        # the halfspace margin is the first-order model evaluated at the
        # linear state prediction, shifted by the barrier offset
        rng = np.random.default_rng(4)
        params = _params()
        for _ in range(100):
            x = rng.uniform(-5, 5, size=2)
            u_prev = rng.uniform(-5, 5, size=1)
            u = rng.uniform(-10, 10, size=1)
            dm, model = _discrete(self.sys, x)
            con = linear_constraint(self.h1, dm, model, params, x, u_prev)
            approx = taylor1_h(self.h1, x, u_prev)
            x_pred = predict_state_linear(dm, model, x, u)
            h0 = self.h1.value(x, u_prev)
            expected = approx(x_pred, u) - (h0 - params.gamma(h0)) - params.delta
            assert abs(con.margin(u) - expected) < 1e-10

    def test_margin_matches_exact_for_affine_h(self):
        # linear prediction is exact for the double integrator, so for an
        # affine h the surrogate and the exact margin coincide
        rng = np.random.default_rng(9)
        params = _params()
        for _ in range(50):
            x = rng.uniform(-5, 5, size=2)
            u_prev = rng.uniform(-5, 5, size=1)
            u = rng.uniform(-10, 10, size=1)
            dm, model = _discrete(self.sys, x)
            con = linear_constraint(self.h1, dm, model, params, x, u_prev)
            exact = exact_margin(self.sys, self.h1, params, x, u_prev, u)
            assert abs(con.margin(u) - exact) < 1e-9


class TestQuadraticConstraint:
    def setup_method(self):
        self.sys = double_integrator()
        self.h2 = position_square_constraint()

    def test_frozen_example(self):
        x = np.array([0.0, 2.0])
        dm, model = _discrete(self.sys, x)
        con = quadratic_constraint(self.h2, dm, model, _params(gamma_c=1.0), x, np.array([0.0]))
        # margin(u) = 9.99 - (0.005 u + 0.2)^2; 9.95 at u = 0
        for u in (-10.0, -3.0, 0.0, 2.5, 10.0):
            expected = 9.99 - (0.005 * u + 0.2) ** 2
            assert abs(con.margin(np.array([u])) - expected) < 1e-9
        assert abs(con.margin(np.array([0.0])) - 9.95) < 1e-9

    def test_negative_semidefinite_for_concave_h(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            x = rng.uniform(-5, 5, size=2)
            u_prev = rng.uniform(-5, 5, size=1)
            dm, model = _discrete(self.sys, x)
            con = quadratic_constraint(self.h2, dm, model, _params(), x, u_prev)
            assert np.max(np.linalg.eigvalsh(con.Q)) <= 1e-12

    def test_reduces_to_linear_for_affine_h(self):
        h1 = position_limit_constraint()
        rng = np.random.default_rng(8)
        for _ in range(50):
            x = rng.uniform(-5, 5, size=2)
            u_prev = rng.uniform(-5, 5, size=1)
            u = rng.uniform(-10, 10, size=1)
            dm, model = _discrete(self.sys, x)
            qcon = quadratic_constraint(h1, dm, model, _params(), x, u_prev)
            lcon = linear_constraint(h1, dm, model, _params(), x, u_prev)
            assert np.max(np.abs(qcon.Q)) < 1e-12
            assert abs(qcon.margin(u) - lcon.margin(u)) < 1e-10

    def test_exact_for_quadratic_h_on_linear_system(self):
        # both prediction and Taylor model are exact here
        rng = np.random.default_rng(10)
        params = _params()
        for _ in range(50):
            x = rng.uniform(-3, 3, size=2)
            u_prev = rng.uniform(-3, 3, size=1)
            u = rng.uniform(-10, 10, size=1)
            dm, model = _discrete(self.sys, x)
            con = quadratic_constraint(self.h2, dm, model, params, x, u_prev)
            exact = exact_margin(self.sys, self.h2, params, x, u_prev, u)
            assert abs(con.margin(u) - exact) < 1e-8

    def test_rejects_asymmetric_Q(self):
        with pytest.raises(ValueError):
            QuadraticConstraint(Q=np.array([[0.0, 1.0], [0.0, 0.0]]), q=np.zeros(2), c=0.0)


class TestConventionalMargin:
    def test_frozen_example(self):
        sys = double_integrator()
        h1 = position_limit_constraint()
        m = conventional_cbf_margin(
            sys, h1, ClassKappa(1.0), 0.1, np.array([0.0, 2.0]), np.array([0.0])
        )
        # -v + h/T = -2 + 100
        assert abs(m - 98.0) < 1e-9

    def test_zero_on_static_boundary(self):
        sys = double_integrator()
        h1 = position_limit_constraint()
        m = conventional_cbf_margin(
            sys, h1, ClassKappa(1.0), 0.1, np.array([10.0, 0.0]), np.array([0.0])
        )
        assert abs(m) < 1e-12

    def test_small_T_limit_of_sampled_condition(self):
        # per-step margin divided by T approaches the continuous condition
        # on a relative-degree-one problem
        sys = ControlAffineSystem(
            n=1, m=1, f=lambda x: np.zeros(1), g=lambda x: np.ones((1, 1))
        )
        h = ConstraintFunction(h=lambda x, u: 10.0 - np.asarray(x, dtype=float)[..., 0], name="h")
        x, u = np.array([4.0]), np.array([1.5])
        T = 1e-4
        params = ZocbfParams(T=T, delta=0.0, gamma=ClassKappa(1.0 * T))
        sampled = exact_margin(sys, h, params, x, np.zeros(1), u) / T
        continuous = conventional_cbf_margin(sys, h, ClassKappa(1.0), 1.0, x, u)
        assert abs(sampled - continuous) / abs(continuous) < 0.05


class TestInputSensitivity:
    def setup_method(self):
        self.sys = double_integrator()
        self.h1 = position_limit_constraint()

    def test_euler_blind_to_input(self):
        s = input_sensitivity(self.sys, self.h1, np.array([0.0, 2.0]), np.zeros(1), 0.1, EULER)
        assert s[0] == 0.0

    def test_midpoint_sees_input(self):
        s = input_sensitivity(self.sys, self.h1, np.array([0.0, 2.0]), np.zeros(1), 0.1, MIDPOINT)
        assert abs(s[0] + 0.005) < 1e-8

    def test_relative_degree_one(self):
        h_v = ConstraintFunction(h=lambda x, u: 10.0 - np.asarray(x, dtype=float)[..., 1])
        s = input_sensitivity(self.sys, h_v, np.array([0.0, 2.0]), np.zeros(1), 0.1, EULER)
        assert abs(s[0] + 0.1) < 1e-8

    def test_order_versus_degree_law(self):
        # an order-p method exposes the input exactly when p reaches the
        # relative degree (two for both bundled position constraints)
        rng = np.random.default_rng(12)
        h2 = position_square_constraint()
        for _ in range(100):
            x = rng.uniform(-5, 5, size=2)
            u0 = rng.uniform(-5, 5, size=1)
            p_pred = x[0] + 0.1 * x[1] + 0.005 * u0[0]
            for h in (self.h1, h2):
                assert input_sensitivity(self.sys, h, x, u0, 0.1, EULER)[0] == 0.0
                if h is self.h1 or abs(p_pred) > 0.05:
                    assert abs(input_sensitivity(self.sys, h, x, u0, 0.1, MIDPOINT)[0]) > 1e-6
                    assert abs(input_sensitivity(self.sys, h, x, u0, 0.1, RK4)[0]) > 1e-6
