"""Shared domain types: time grids, parameter samples, solver configuration,
seeded random streams and the coarse-trajectory container."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class PintuqError(Exception):
    """Base class for all library errors."""


class ConfigError(PintuqError):
    """Invalid configuration value or file."""


class NonConvergenceError(PintuqError):
    """An inner Newton iteration failed to meet its tolerance.

    Carries the last iterate and the residual norm at abort time.
    """

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class MaxItersExceededError(PintuqError):
    """An outer solver iteration hit its cap; carries the full trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SingularShiftError(PintuqError):
    """A shifted system in the diagonalized correction is numerically singular."""


class RankDeficientError(PintuqError):
    """The regression matrix of a least-squares fit is rank deficient."""


class SnapshotError(PintuqError):
    """Snapshot collection failed for one or more samples.

    ``failures`` maps sample id -> exception.
    """

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class TimeGrid:
    """Uniform two-level time grid: N coarse subintervals of size deltaT,
    each refined into J fine steps of size deltat."""

    t_final: float
    n_coarse: int
    n_fine_per_coarse: int

    @property
    def deltaT(self) -> float:
        return self.t_final / self.n_coarse

    @property
    def deltat(self) -> float:
        return self.deltaT / self.n_fine_per_coarse

    def coarse_point(self, n: int) -> float:
        """T_n = n * deltaT for n = 0..N."""
        return n * self.deltaT

    def coarse_points(self) -> np.ndarray:
        return np.arange(self.n_coarse + 1) * self.deltaT


def make_time_grid(t_final: float, n_coarse: int, n_fine_per_coarse: int) -> TimeGrid:
    """Build a uniform time grid; rejects empty or unrefined grids."""
    if t_final <= 0:
        raise ConfigError(f"t_final must be positive, got {t_final}")
    if n_coarse < 1:
        raise ConfigError(f"need at least one coarse subinterval, got {n_coarse}")
    if n_fine_per_coarse < 2:
        raise ConfigError(
            f"fine refinement must be at least 2, got {n_fine_per_coarse}"
        )
    return TimeGrid(float(t_final), int(n_coarse), int(n_fine_per_coarse))


@dataclass(frozen=True)
class ParameterSample:
    """One realization of the random input vector."""

    values: np.ndarray
    id: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.atleast_1d(np.asarray(self.values, dtype=float))
        )

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def key(self) -> tuple:
        """Hashable identity used for caching per-sample factorizations."""
        return (self.id, self.values.tobytes())


class InitMode(enum.Enum):
    RANDOM_GUESS = "random"
    COARSE_SWEEP = "coarse"
    SURROGATE = "surrogate"


@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by the iterative solvers.

    ``alpha`` couples the first and last coarse values in the diagonalized
    correction; ``tol`` is the outer stopping tolerance; ``newton_tol``
    bounds the residual of each implicit solve.
    """

    alpha: float = 0.1
    tol: float = 1e-10
    max_outer_iters: int = 50
    max_newton_iters: int = 50
    newton_tol: float = 1e-12
    init_mode: InitMode = InitMode.RANDOM_GUESS
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tol <= 0:
            raise ConfigError(f"tol must be positive, got {self.tol}")
        if self.newton_tol <= 0:
            raise ConfigError(f"newton_tol must be positive, got {self.newton_tol}")


@dataclass
class CoarseTrajectory:
    """Coarse-point states U_1..U_N plus the initial state at T_0.

    ``states`` has shape (N, N_x); ``initial`` has shape (N_x,).
    """

    initial: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise ValueError("states must be a (N, N_x) array")
        if self.initial.shape != (self.states.shape[1],):
            raise ValueError("initial state dimension does not match states")

    @property
    def n_coarse(self) -> int:
        return self.states.shape[0]

    @property
    def nx(self) -> int:
        return self.states.shape[1]

    def copy(self) -> "CoarseTrajectory":
        return CoarseTrajectory(self.initial.copy(), self.states.copy())

    def assert_finite(self):
        if not (np.all(np.isfinite(self.initial)) and np.all(np.isfinite(self.states))):
            raise ValueError("trajectory contains non-finite entries")


class RngStream:
    """Reproducible random stream with deterministic sub-stream splitting.

    A stream is single-owner: share sub-streams (via :meth:`split`) across
    workers, never the stream itself. ``counter`` tracks the number of
    drawing calls made so far.
    """

    def __init__(self, seed: int, _seq: np.random.SeedSequence | None = None):
        self.seed = int(seed)
        self._seq = np.random.SeedSequence(self.seed) if _seq is None else _seq
        self._gen = np.random.default_rng(self._seq)
        self.counter = 0

    def split(self, count: int) -> list["RngStream"]:
        """Derive ``count`` independent child streams (deterministic)."""
        children = self._seq.spawn(count)
        return [RngStream(self.seed, _seq=c) for c in children]

    def uniform(self, lo: float, hi: float, size=None) -> np.ndarray:
        self.counter += 1
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, mu: float, sigma: float, size=None) -> np.ndarray:
        self.counter += 1
        return self._gen.normal(mu, sigma, size=size)


def sample_uniform(lo: float, hi: float, count: int, rng: RngStream) -> list[ParameterSample]:
    """Draw ``count`` one-dimensional uniform samples on [lo, hi]."""
    if not lo < hi:
        raise ConfigError(f"empty interval [{lo}, {hi}]")
    draws = rng.uniform(lo, hi, size=count)
    return [ParameterSample(np.array([v]), id=i) for i, v in enumerate(draws)]


def sample_truncated_gaussian(
    mu: float,
    sigma: float,
    lo: float,
    hi: float,
    count: int,
    rng: RngStream,
) -> list[ParameterSample]:
    """Draw from a Gaussian restricted to [lo, hi] by rejection.

    Aborts when the acceptance mass of the window falls below 1e-6.
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if not lo < hi:
        raise ConfigError(f"empty interval [{lo}, {hi}]")
    zlo = (lo - mu) / sigma
    zhi = (hi - mu) / sigma
    mass = 0.5 * (math.erf(zhi / math.sqrt(2)) - math.erf(zlo / math.sqrt(2)))
    if mass < 1e-6:
        raise ConfigError(
            f"acceptance rate {mass:.2e} below 1e-6 for window [{lo}, {hi}]"
        )
    out = np.empty(count)
    filled = 0
    while filled < count:
        batch = max(count - filled, 32)
        draws = rng.normal(mu, sigma, size=int(batch / max(mass, 1e-6) + 16))
        accepted = draws[(draws >= lo) & (draws <= hi)]
        take = min(count - filled, accepted.shape[0])
        out[filled : filled + take] = accepted[:take]
        filled += take
    return [ParameterSample(np.array([v]), id=i) for i, v in enumerate(out)]
