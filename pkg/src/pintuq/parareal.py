"""Classical parareal iteration with sequential coarse-grid correction."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CoarseTrajectory,
    MaxItersExceededError,
    ParameterSample,
    RngStream,
    SolverConfig,
    TimeGrid,
)
from .models import Model
from .propagators import fine_reference, propagate_coarse, propagate_fine


@dataclass
class IterationRecord:
    """One outer-iteration entry; k = 0 is the initial guess itself."""

    k: int
    increment_inf: float | None
    err_vs_ref: np.ndarray | None
    max_err_vs_ref: float | None
    wall_ms: float


@dataclass
class IterationTrace:
    """Append-only per-iteration history of an outer solve."""

    solver: str
    records: list = field(default_factory=list)
    trajectory: CoarseTrajectory | None = None
    converged: bool = False
    stop_on: str = "increment"
    states_history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        """Number of correction updates performed (excludes the k=0 guess)."""
        return len(self.records) - 1

    def iters_to_tol(self, tol: float) -> int | None:
        """First k whose error vs the reference is at or below tol."""
        for rec in self.records:
            if rec.max_err_vs_ref is not None and rec.max_err_vs_ref <= tol:
                return rec.k
        return None

    def max_errors(self) -> np.ndarray:
        return np.array([r.max_err_vs_ref for r in self.records], dtype=float)

    def error_vectors(self) -> np.ndarray:
        return np.array([r.err_vs_ref for r in self.records], dtype=float)


def random_guess_init(
    model: Model, xi: ParameterSample, grid: TimeGrid, rng: RngStream
) -> CoarseTrajectory:
    """Entrywise-uniform trajectory in [-1, 1], scaled by the sup norm of the
    true initial state; gives a reproducible O(|u0|) initial error."""
    u0 = model.initial_condition(xi)
    scale = np.max(np.abs(u0))
    states = scale * rng.uniform(-1.0, 1.0, size=(grid.n_coarse, model.nx))
    return CoarseTrajectory(u0, states)


def coarse_sweep_init(
    model: Model, xi: ParameterSample, grid: TimeGrid, cfg: SolverConfig
) -> CoarseTrajectory:
    """One serial coarse-propagator sweep from u0 (the classical default)."""
    u0 = model.initial_condition(xi)
    states = np.empty((grid.n_coarse, model.nx))
    v = u0
    for n in range(grid.n_coarse):
        v = propagate_coarse(model, v, grid.coarse_point(n), grid.coarse_point(n + 1), xi, cfg)
        states[n] = v
    return CoarseTrajectory(u0, states)


def _error_record(U, reference):
    if reference is None:
        return None, None
    err = np.max(np.abs(U - reference.states), axis=1)
    return err, float(np.max(err))


def _map_over_subintervals(executor, fn, count):
    if executor is None:
        return [fn(n) for n in range(count)]
    return list(executor.map(fn, range(count)))


def parareal_solve(
    model: Model,
    xi: ParameterSample,
    grid: TimeGrid,
    cfg: SolverConfig,
    init: CoarseTrajectory,
    reference: CoarseTrajectory | None = None,
    stop_on: str = "increment",
    store_states: bool = False,
    executor=None,
    raise_on_max: bool = True,
) -> IterationTrace:
    """Iterate the predictor-corrector update

        U_{n+1}^{k+1} = G(T_n, T_{n+1}, U_n^{k+1}) + F(T_n, T_{n+1}, U_n^k)
                        - G(T_n, T_{n+1}, U_n^k),

    with U_0 pinned to the true initial state, until the selected stopping
    metric falls at or below cfg.tol. The fine sweeps of each iteration are
    independent across subintervals (parallel via ``executor``); the coarse
    correction is sequential in n.
    """
    if stop_on not in ("increment", "reference"):
        raise ValueError(f"stop_on must be 'increment' or 'reference', not {stop_on!r}")
    if stop_on == "reference" and reference is None:
        raise ValueError("stop_on='reference' requires a reference trajectory")
    if init.n_coarse != grid.n_coarse:
        raise ValueError("initial guess length does not match the time grid")
    model.validate(xi)

    N = grid.n_coarse
    u0 = model.initial_condition(xi)
    U = init.states.copy()
    trace = IterationTrace(solver="parareal", stop_on=stop_on)
    err_vec, max_err = _error_record(U, reference)
    trace.records.append(IterationRecord(0, None, err_vec, max_err, 0.0))
    if store_states:
        trace.states_history.append(U.copy())
    if stop_on == "reference" and max_err is not None and max_err <= cfg.tol:
        trace.converged = True
        trace.trajectory = CoarseTrajectory(u0, U)
        return trace

    def starts(states):
        return np.vstack([u0, states[:-1]])

    def coarse_at(arr, n):
        return propagate_coarse(model, arr, grid.coarse_point(n), grid.coarse_point(n + 1), xi, cfg)

    # coarse values at the current iterate, reused as "old" values next round
    cur = starts(U)
    G_prev = np.array(_map_over_subintervals(executor, lambda n: coarse_at(cur[n], n), N))

    for k in range(1, cfg.max_outer_iters + 1):
        tic = time.perf_counter()
        from_states = starts(U)
        F_ends = np.array(
            _map_over_subintervals(
                executor,
                lambda n: propagate_fine(
                    model, from_states[n], grid.coarse_point(n), grid.coarse_point(n + 1), grid, xi, cfg
                ),
                N,
            )
        )
        U_new = np.empty_like(U)
        G_new = np.empty_like(U)
        prev = u0
        for n in range(N):
            G_new[n] = coarse_at(prev, n)
            U_new[n] = G_new[n] + F_ends[n] - G_prev[n]
            prev = U_new[n]
        increment = float(np.max(np.abs(U_new - U)))
        U, G_prev = U_new, G_new
        wall_ms = 1e3 * (time.perf_counter() - tic)
        err_vec, max_err = _error_record(U, reference)
        trace.records.append(IterationRecord(k, increment, err_vec, max_err, wall_ms))
        if store_states:
            trace.states_history.append(U.copy())
        metric = increment if stop_on == "increment" else max_err
        if metric <= cfg.tol:
            trace.converged = True
            break

    trace.trajectory = CoarseTrajectory(u0, U)
    trace.trajectory.assert_finite()
    if not trace.converged and raise_on_max:
        raise MaxItersExceededError(
            f"parareal did not reach tol {cfg.tol:.1e} within {cfg.max_outer_iters} iterations",
            trace=trace,
        )
    return trace


__all__ = [
    "IterationRecord",
    "IterationTrace",
    "coarse_sweep_init",
    "fine_reference",
    "parareal_solve",
    "random_guess_init",
]
