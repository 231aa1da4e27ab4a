from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pintuq.convergence import k_alpha_bound, model_spectrum, weighted_inf_norm
from pintuq.core import MaxItersExceededError, SolverConfig, make_time_grid
from pintuq.models import Diffusion1D
from pintuq.parareal import (
    coarse_sweep_init,
    fine_reference,
    parareal_solve,
    random_guess_init,
)
from pintuq.core import RngStream

from conftest import sample


@pytest.fixture(scope="module")
def setup():
    model = Diffusion1D(h=1 / 32)
    grid = make_time_grid(1.0, 10, 8)
    xi = sample(1.2)
    cfg = SolverConfig(seed=5, max_outer_iters=40)
    ref = fine_reference(model, xi, grid, cfg)
    return model, grid, xi, cfg, ref


def test_random_guess_scaling():
    model = Diffusion1D(h=1 / 16)
    grid = make_time_grid(1.0, 4, 4)
    init = random_guess_init(model, sample(1.0), grid, RngStream(7))
    scale = np.max(np.abs(model.initial_condition(sample(1.0))))
    assert np.max(np.abs(init.states)) <= scale
    assert np.max(np.abs(init.states)) > 0.5 * scale


def test_finite_termination(setup):
    """After iteration k the first k coarse values equal the fine reference."""
    model, grid, xi, cfg, ref = setup
    init = random_guess_init(model, xi, grid, RngStream(1))
    trace = parareal_solve(
        model, xi, grid, cfg, init, reference=ref, stop_on="reference",
        store_states=True, raise_on_max=False,
    )
    for k in range(1, min(6, len(trace.states_history))):
        err_head = np.max(np.abs(trace.states_history[k][:k] - ref.states[:k]))
        assert err_head <= 1e-12


def test_reference_is_fixed_point(setup):
    model, grid, xi, cfg, ref = setup
    one_iter = SolverConfig(seed=5, max_outer_iters=1, tol=1e-30)
    trace = parareal_solve(
        model, xi, grid, one_iter, ref.copy(), reference=ref,
        stop_on="reference", raise_on_max=False,
    )
    assert trace.records[-1].max_err_vs_ref <= 1e-12


def test_contraction_bounded_by_classical_factor(setup):
    """Weighted-norm error ratios stay below the spectral bound (alpha = 0)."""
    model, grid, xi, cfg, ref = setup
    spectrum = model_spectrum(model, xi, grid)
    bound = k_alpha_bound(spectrum.z, grid.n_fine_per_coarse, 0.0)
    init = random_guess_init(model, xi, grid, RngStream(2))
    trace = parareal_solve(
        model, xi, grid, cfg, init, reference=ref, stop_on="reference",
        store_states=True, raise_on_max=False,
    )
    errs = [
        weighted_inf_norm(states - ref.states, spectrum.transform)
        for states in trace.states_history
    ]
    for k in range(1, len(errs)):
        if errs[k - 1] <= 1e-13:
            break
        assert errs[k] / errs[k - 1] <= bound + 1e-6


def test_iteration_count_convention(setup):
    model, grid, xi, cfg, ref = setup
    # an initial guess that already meets the tolerance counts as 0 iterations
    trace = parareal_solve(
        model, xi, grid, cfg, ref.copy(), reference=ref, stop_on="reference",
    )
    assert trace.converged and trace.iters_to_tol(cfg.tol) == 0
    assert len(trace.records) == 1


def test_increment_stopping_metric(setup):
    model, grid, xi, cfg, ref = setup
    init = coarse_sweep_init(model, xi, grid, cfg)
    trace = parareal_solve(model, xi, grid, cfg, init, stop_on="increment")
    assert trace.converged
    assert trace.records[-1].increment_inf <= cfg.tol
    # increment metric tracks the true error closely at convergence
    final_err = np.max(np.abs(trace.trajectory.states - ref.states))
    assert final_err <= 10 * cfg.tol


def test_max_iters_exceeded_carries_trace(setup):
    model, grid, xi, _, ref = setup
    tight = SolverConfig(seed=5, max_outer_iters=2, tol=1e-12)
    init = random_guess_init(model, xi, grid, RngStream(3))
    with pytest.raises(MaxItersExceededError) as info:
        parareal_solve(model, xi, grid, tight, init, reference=ref, stop_on="reference")
    trace = info.value.trace
    assert trace is not None and len(trace.records) == 3  # k = 0, 1, 2


def test_subinterval_concurrency_is_deterministic(setup):
    model, grid, xi, cfg, ref = setup
    init = random_guess_init(model, xi, grid, RngStream(4))
    serial = parareal_solve(
        model, xi, grid, cfg, init.copy(), reference=ref, stop_on="reference",
        raise_on_max=False,
    )
    with ThreadPoolExecutor(max_workers=4) as pool:
        threaded = parareal_solve(
            model, xi, grid, cfg, init.copy(), reference=ref, stop_on="reference",
            raise_on_max=False, executor=pool,
        )
    np.testing.assert_array_equal(serial.trajectory.states, threaded.trajectory.states)


def test_mismatched_init_rejected(setup):
    model, grid, xi, cfg, _ = setup
    bad = random_guess_init(model, xi, make_time_grid(1.0, 5, 8), RngStream(0))
    with pytest.raises(ValueError):
        parareal_solve(model, xi, grid, cfg, bad)
