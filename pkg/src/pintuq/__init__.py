"""Parallel-in-time solvers for parameter-dependent ODE/PDE systems.

Combines the classical parareal iteration, a diagonalization-based parallel
coarse-grid correction, and a Karhunen-Loeve / polynomial-chaos surrogate
that supplies high-quality initial coarse trajectories for new parameter
samples.
"""
from .core import (
    CoarseTrajectory,
    InitMode,
    ParameterSample,
    RngStream,
    SolverConfig,
    TimeGrid,
    make_time_grid,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .models import get_model

__version__ = "0.1.0"

__all__ = [
    "CoarseTrajectory",
    "InitMode",
    "KERNEL_BACKEND",
    "ParameterSample",
    "RngStream",
    "SolverConfig",
    "TimeGrid",
    "get_model",
    "make_time_grid",
    "__version__",
]
