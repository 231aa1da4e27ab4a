import numpy as np
import pytest

from pintuq.core import NonConvergenceError, SolverConfig, TimeGrid, make_time_grid
from pintuq.models import AdvectionDiffusion2D, Burgers1D
from pintuq.propagators import (
    backward_euler_step,
    backward_euler_step_generic,
    fine_reference,
    propagate_coarse,
    propagate_fine,
)

from conftest import ScalarDecay, sample
from oracles import picard_burgers_step


class TestBackwardEulerStep:
    def test_scalar_stability_function(self, scalar_model, cfg):
        # one step of u' = -u from 1 with dt = 1: R(1) = 1/2
        v = backward_euler_step(scalar_model, np.ones(1), 0.0, 1.0, sample(1.0), cfg)
        assert v[0] == pytest.approx(0.5, rel=1e-14)

    @pytest.mark.parametrize("lam,dt", [(3.0, 0.25), (10.0, 0.1)])
    def test_scalar_general_rate(self, scalar_model, cfg, lam, dt):
        v = backward_euler_step(scalar_model, np.ones(1), 0.0, dt, sample(lam), cfg)
        assert v[0] == pytest.approx(1.0 / (1.0 + lam * dt), rel=1e-14)

    def test_defining_residual_bound(self, cfg):
        model = Burgers1D()
        xi = sample(2.0)
        rng = np.random.default_rng(0)
        u = 0.7 * rng.uniform(-1, 1, model.nx)
        dt = 0.002
        v = backward_euler_step(model, u, 0.0, dt, xi, cfg)
        residual = v - u - dt * model.rhs(v, dt, xi)
        assert np.max(np.abs(residual)) <= cfg.newton_tol
        # scaled form of the same statement
        assert np.max(np.abs(residual / dt - 0 * residual)) <= cfg.newton_tol / dt

    def test_matches_picard_split_oracle(self, cfg):
        model = Burgers1D()
        xi = sample(2.0)
        rng = np.random.default_rng(9)
        u = 0.8 * rng.uniform(-1, 1, model.nx)
        dt = 0.002
        v_newton = backward_euler_step(model, u, 0.0, dt, xi, cfg)
        v_picard = picard_burgers_step(u, dt, Burgers1D.viscosity(2.0), model.dx, tol=1e-13)
        np.testing.assert_allclose(v_newton, v_picard, atol=1e-10)

    def test_rejects_nonpositive_step(self, scalar_model, cfg):
        with pytest.raises(ValueError):
            backward_euler_step(scalar_model, np.ones(1), 0.0, 0.0, sample(1.0), cfg)

    def test_nonconvergence_carries_last_iterate(self):
        model = Burgers1D()
        xi = sample(3.0)
        cfg = SolverConfig(max_newton_iters=1, newton_tol=1e-14)
        u = 5.0 * np.sin(2 * np.pi * model.x)
        with pytest.raises(NonConvergenceError) as info:
            backward_euler_step(model, u, 0.0, 0.5, xi, cfg)
        assert info.value.last_iterate is not None
        # generic path raises the same way
        with pytest.raises(NonConvergenceError):
            backward_euler_step_generic(model, u, 0.0, 0.5, xi, cfg)


class TestPropagateFine:
    def test_degenerate_refinement_equals_single_step(self, scalar_model, cfg):
        grid = TimeGrid(1.0, 4, 1)  # J = 1, test-only degenerate grid
        xi = sample(2.0)
        u = np.array([0.7])
        a = propagate_fine(scalar_model, u, 0.0, 0.25, grid, xi, cfg)
        b = backward_euler_step(scalar_model, u, 0.0, 0.25, xi, cfg)
        np.testing.assert_array_equal(a, b)

    def test_scalar_power_oracle(self, scalar_model, cfg):
        # 50 implicit steps of u' = -u over [0, 1]: (1 + 1/50)^(-50)
        grid = make_time_grid(1.0, 1, 50)
        v = propagate_fine(scalar_model, np.ones(1), 0.0, 1.0, grid, sample(1.0), cfg)
        assert v[0] == pytest.approx((1 + 1 / 50.0) ** (-50), rel=1e-13)
        assert v[0] == pytest.approx(0.371528, abs=1e-6)

    def test_composition_is_bitwise(self, cfg):
        model = Burgers1D(dx=1 / 40)
        xi = sample(1.5)
        grid = make_time_grid(1.0, 4, 10)
        u = 0.5 * np.sin(2 * np.pi * model.x)
        two_hops = propagate_fine(model, u, 0.0, 0.25, grid, xi, cfg)
        two_hops = propagate_fine(model, two_hops, 0.25, 0.5, grid, xi, cfg)
        stepwise = u
        for j in range(20):
            stepwise = backward_euler_step(model, stepwise, j * grid.deltat, grid.deltat, xi, cfg)
        np.testing.assert_array_equal(two_hops, stepwise)

    def test_rejects_wrong_interval(self, scalar_model, cfg):
        grid = make_time_grid(1.0, 4, 10)
        with pytest.raises(ValueError):
            propagate_fine(scalar_model, np.ones(1), 0.0, 0.5, grid, sample(1.0), cfg)


class TestPropagateCoarse:
    def test_scalar_stability(self, scalar_model, cfg):
        v = propagate_coarse(scalar_model, np.ones(1), 0.0, 0.5, sample(4.0), cfg)
        assert v[0] == pytest.approx(1.0 / 3.0, rel=1e-14)

    def test_equals_degenerate_fine(self, scalar_model, cfg):
        grid = TimeGrid(2.0, 4, 1)
        xi = sample(1.3)
        u = np.array([0.4])
        np.testing.assert_array_equal(
            propagate_coarse(scalar_model, u, 0.0, 0.5, xi, cfg),
            propagate_fine(scalar_model, u, 0.0, 0.5, grid, xi, cfg),
        )

    def test_advdiff_against_dense_solve(self, cfg):
        # (I + dT*A) v = u + dT*g(dT) solved densely
        model = AdvectionDiffusion2D(h=1 / 10)
        xi = sample(2.5)
        dT = 1 / 24
        rng = np.random.default_rng(2)
        u = rng.normal(size=model.nx)
        got = propagate_coarse(model, u, 0.0, dT, xi, cfg)
        A, g = model.linear_system(xi)
        expected = np.linalg.solve(np.eye(model.nx) + dT * A.toarray(), u + dT * g(dT))
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_linearity_of_coarse_map(self, cfg):
        model = AdvectionDiffusion2D(h=1 / 10)
        xi = sample(3.7)
        rng = np.random.default_rng(4)
        u1, u2 = rng.normal(size=(2, model.nx))
        a, b = 0.7, -1.3

        def G(u):
            return propagate_coarse(model, u, 0.0, 1 / 24, xi, cfg)

        G0 = G(np.zeros(model.nx))
        lhs = G(a * u1 + b * u2) - G0
        rhs = a * (G(u1) - G0) + b * (G(u2) - G0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_fine_reference_shapes_and_finiteness(cfg):
    model = Burgers1D(dx=1 / 40)
    grid = make_time_grid(2.0, 5, 8)
    ref = fine_reference(model, sample(2.2), grid, cfg)
    assert ref.states.shape == (5, model.nx)
    assert np.all(np.isfinite(ref.states))
    np.testing.assert_array_equal(ref.initial, model.initial_condition(sample(2.2)))
