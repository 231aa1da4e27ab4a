"""Method-of-lines right-hand sides and Jacobians for the benchmark problems.

All models discretize space with second-order central differences on a
uniform grid and keep only interior nodes in the state vector; Dirichlet
data is folded into the stencils. Each model declares its parameter
support, how to draw parameters, and the coordinates in which surrogate
regression is performed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    ConfigError,
    ParameterSample,
    RngStream,
    sample_truncated_gaussian,
    sample_uniform,
)


@dataclass(frozen=True)
class ParameterMap:
    """Map one parameter coordinate onto [-1, 1] for polynomial regression.

    ``affine`` maps the support interval linearly. ``cos2pi`` maps through
    the periodic effective coordinate cos(2*pi*v); it is used when the model
    coefficient depends on the parameter only through such a term, so that
    regression targets stay smooth in the mapped variable.
    """

    kind: str
    lo: float
    hi: float

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if self.kind == "affine":
            return 2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
        if self.kind == "cos2pi":
            return np.cos(2.0 * np.pi * v)
        raise ConfigError(f"unknown parameter map kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "lo": self.lo, "hi": self.hi}

    @staticmethod
    def from_dict(d: dict) -> "ParameterMap":
        return ParameterMap(str(d["kind"]), float(d["lo"]), float(d["hi"]))


def laplacian_1d(m: int, dx: float) -> sp.csr_matrix:
    """Second-difference matrix on m interior nodes, homogeneous Dirichlet."""
    e = np.ones(m)
    return sp.diags([e[:-1], -2.0 * e, e[:-1]], [-1, 0, 1], format="csr") / dx**2


class Model:
    """Base interface shared by the benchmark models."""

    name: str = ""
    nx: int = 0
    parameter_dim: int = 1
    supports: tuple = ()
    is_linear: bool = False

    @property
    def cell_volume(self) -> float:
        """Spatial quadrature weight of one grid node (h^d)."""
        raise NotImplementedError

    def rhs(self, u: np.ndarray, t: float, xi: ParameterSample) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, u: np.ndarray, t: float, xi: ParameterSample) -> sp.spmatrix:
        raise NotImplementedError

    def initial_condition(self, xi: ParameterSample) -> np.ndarray:
        raise NotImplementedError

    def sample_parameters(self, count: int, rng: RngStream) -> list[ParameterSample]:
        raise NotImplementedError

    def fit_maps(self) -> list[ParameterMap]:
        """Default: affine map of each declared support onto [-1, 1]."""
        return [ParameterMap("affine", lo, hi) for lo, hi in self.supports]

    def validate(self, xi: ParameterSample):
        if xi.dim != self.parameter_dim:
            raise ValueError(
                f"{self.name}: expected {self.parameter_dim} parameters, got {xi.dim}"
            )
        for v, (lo, hi) in zip(xi.values, self.supports):
            if not lo <= v <= hi:
                raise ValueError(
                    f"{self.name}: parameter {v} outside support [{lo}, {hi}]"
                )

    def check_state(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.nx,):
            raise ValueError(f"{self.name}: state has shape {u.shape}, expected ({self.nx},)")
        return u


class LinearModel(Model):
    """Models with rhs(u, t) = -A u + g(t); A and g depend on the sample only."""

    is_linear = True

    def linear_system(self, xi: ParameterSample):
        """Return (A, g) with A sparse CSC and g a callable t -> source vector."""
        raise NotImplementedError

    def rhs(self, u, t, xi):
        u = self.check_state(u)
        A, g = self.linear_system(xi)
        return -(A @ u) + g(t)

    def jacobian(self, u, t, xi):
        A, _ = self.linear_system(xi)
        return -A


class AdvectionDiffusion2D(LinearModel):
    """2D advection-diffusion on (0,1)^2 with homogeneous Dirichlet walls.

    The diffusion coefficient is a(xi) = 0.5*(2 + cos(pi*xi)^2) and the
    velocity field is 0.1*(x2, x1). The source is separable in time,
    g(t) = exp(-t) * w(x; xi), so w is precomputed per sample. States are
    flattened x1-major over the (1/h - 1)^2 interior nodes.
    """

    name = "advection-diffusion"
    parameter_dim = 1
    supports = ((2.0, 6.0),)

    def __init__(self, h: float = 1.0 / 20.0, advection: bool = True):
        self.h = float(h)
        self.m = round(1.0 / self.h) - 1
        if abs((self.m + 1) * self.h - 1.0) > 1e-12:
            raise ConfigError(f"h={h} does not evenly divide the unit interval")
        self.nx = self.m * self.m
        self.advection = bool(advection)
        ii = np.arange(1, self.m + 1) * self.h
        self.x1 = np.repeat(ii, self.m)
        self.x2 = np.tile(ii, self.m)
        self._cache: dict = {}

    @property
    def cell_volume(self) -> float:
        return self.h * self.h

    @staticmethod
    def diffusion_coefficient(xi_value: float) -> float:
        return 0.5 * (2.0 + np.cos(np.pi * xi_value) ** 2)

    def fit_maps(self):
        # regression in the effective coefficient coordinate cos(2*pi*xi),
        # in which the solution map is smooth; the raw coordinate crosses
        # several periods of the coefficient over the support
        return [ParameterMap("cos2pi", *self.supports[0])]

    def linear_system(self, xi: ParameterSample):
        key = xi.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        a = self.diffusion_coefficient(xi.values[0])
        m, h = self.m, self.h
        L1 = laplacian_1d(m, h)
        I1 = sp.eye(m, format="csr")
        lap = sp.kron(L1, I1) + sp.kron(I1, L1)
        A = -a * lap
        if self.advection:
            D1 = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1], format="csr") / (2 * h)
            grad_x1 = sp.kron(D1, I1)
            grad_x2 = sp.kron(I1, D1)
            A = A + sp.diags(0.1 * self.x2) @ grad_x1 + sp.diags(0.1 * self.x1) @ grad_x2
        A = A.tocsc()
        ss = np.sin(np.pi * self.x1) * np.sin(2 * np.pi * self.x2)
        w = (
            (a * np.pi**2 - 1.0) * ss
            + 0.05 * np.pi * self.x2 * np.cos(np.pi * self.x1) * np.sin(2 * np.pi * self.x2)
            + 0.1 * np.pi * self.x1 * np.sin(np.pi * self.x1) * np.cos(2 * np.pi * self.x2)
        )
        pair = (A, lambda t, w=w: np.exp(-t) * w)
        self._cache[key] = pair
        return pair

    def source(self, t: float, xi: ParameterSample) -> np.ndarray:
        _, g = self.linear_system(xi)
        return g(t)

    def initial_condition(self, xi):
        return np.sin(np.pi * self.x1) * np.sin(2 * np.pi * self.x2)

    def sample_parameters(self, count, rng):
        return sample_uniform(*self.supports[0], count, rng)

    def diffusion_eigenvalues(self, xi: ParameterSample) -> np.ndarray:
        """Analytic spectrum of the pure-diffusion operator a*(-lap_h)."""
        a = self.diffusion_coefficient(xi.values[0])
        m, h = self.m, self.h
        mu1 = (4.0 / h**2) * np.sin(np.arange(1, m + 1) * np.pi * h / 2.0) ** 2
        return a * (mu1[:, None] + mu1[None, :]).ravel()

    def diffusion_eigenvectors(self) -> np.ndarray:
        """Orthonormal sine eigenvector matrix of the pure-diffusion operator."""
        m, h = self.m, self.h
        idx = np.arange(1, m + 1)
        S = np.sqrt(2.0 * h) * np.sin(np.pi * h * np.outer(idx, idx))
        return np.kron(S, S)


class Diffusion1D(LinearModel):
    """1D heat equation u_t = a u_xx on (0,1), zero boundaries, no source.

    The diffusion coefficient a is the (single) random parameter. Used as
    the symmetric test problem for convergence diagnostics.
    """

    name = "diffusion-1d"
    parameter_dim = 1
    supports = ((0.5, 2.0),)

    def __init__(self, h: float = 1.0 / 64.0):
        self.h = float(h)
        self.m = round(1.0 / self.h) - 1
        self.nx = self.m
        self.x = np.arange(1, self.m + 1) * self.h
        self._cache: dict = {}

    @property
    def cell_volume(self) -> float:
        return self.h

    def linear_system(self, xi):
        key = xi.key()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        a = xi.values[0]
        A = (-a * laplacian_1d(self.m, self.h)).tocsc()
        zero = np.zeros(self.nx)
        pair = (A, lambda t, z=zero: z)
        self._cache[key] = pair
        return pair

    def initial_condition(self, xi):
        return np.sin(np.pi * self.x)

    def sample_parameters(self, count, rng):
        return sample_uniform(*self.supports[0], count, rng)

    def diffusion_eigenvalues(self, xi):
        a = xi.values[0]
        mm = np.arange(1, self.m + 1)
        return a * (4.0 / self.h**2) * np.sin(mm * np.pi * self.h / 2.0) ** 2

    def diffusion_eigenvectors(self):
        idx = np.arange(1, self.m + 1)
        return np.sqrt(2.0 * self.h) * np.sin(np.pi * self.h * np.outer(idx, idx))


class Burgers1D(Model):
    """Viscous Burgers equation on (0,1) with zero Dirichlet boundaries.

    Convection u*u_x is discretized with first-order upwinding switched on
    sign(u_i) (backward difference for u_i >= 0), diffusion with central
    differences. The viscosity is xi/50 for xi ~ U[1,3].
    """

    name = "burgers"
    parameter_dim = 1
    supports = ((1.0, 3.0),)

    def __init__(self, dx: float = 1.0 / 100.0):
        self.dx = float(dx)
        self.m = round(1.0 / self.dx) - 1
        self.nx = self.m
        self.x = np.arange(1, self.m + 1) * self.dx

    @property
    def cell_volume(self) -> float:
        return self.dx

    @staticmethod
    def viscosity(xi_value: float) -> float:
        return xi_value / 50.0

    def rhs(self, u, t, xi):
        u = self.check_state(u)
        nu, dx = self.viscosity(xi.values[0]), self.dx
        left = np.concatenate(([0.0], u[:-1]))
        right = np.concatenate((u[1:], [0.0]))
        dudx = np.where(u >= 0.0, (u - left) / dx, (right - u) / dx)
        return -u * dudx + nu * (left - 2.0 * u + right) / dx**2

    def jacobian(self, u, t, xi):
        u = self.check_state(u)
        nu, dx = self.viscosity(xi.values[0]), self.dx
        left = np.concatenate(([0.0], u[:-1]))
        right = np.concatenate((u[1:], [0.0]))
        up = u >= 0.0
        diag = np.where(up, -(2.0 * u - left) / dx, -(right - 2.0 * u) / dx) - 2.0 * nu / dx**2
        sub = np.where(up[1:], u[1:] / dx, 0.0) + nu / dx**2
        sup = np.where(up[:-1], 0.0, -u[:-1] / dx) + nu / dx**2
        return sp.diags([sub, diag, sup], [-1, 0, 1], format="csr")

    def initial_condition(self, xi):
        # boundary-compatible default profile
        return np.sin(2.0 * np.pi * self.x)

    def sample_parameters(self, count, rng):
        return sample_uniform(*self.supports[0], count, rng)

    def sweep_args(self, xi: ParameterSample) -> tuple:
        """(kernel name, parameters) consumed by the fused implicit sweeps."""
        return "burgers", (self.viscosity(xi.values[0]), self.dx)


class AllenCahn1D(Model):
    """Allen-Cahn equation u_t = eps*u_xx - (u^3 - u) on (-1,1).

    Boundary values u(-1) = -1 and u(1) = 1 enter the second-difference
    stencil of the first and last interior node as constants. eps follows
    a truncated Gaussian on [0.06, 1].
    """

    name = "allen-cahn"
    parameter_dim = 1
    supports = ((0.06, 1.0),)
    bc = (-1.0, 1.0)
    gaussian = (0.53, 0.15)

    def __init__(self, dx: float = 1.0 / 128.0):
        self.dx = float(dx)
        self.m = round(2.0 / self.dx) - 1
        self.nx = self.m
        self.x = -1.0 + np.arange(1, self.m + 1) * self.dx
        self._lift = np.zeros(self.m)
        self._lift[0] = self.bc[0] / self.dx**2
        self._lift[-1] = self.bc[1] / self.dx**2

    @property
    def cell_volume(self) -> float:
        return self.dx

    def rhs(self, u, t, xi):
        u = self.check_state(u)
        eps = xi.values[0]
        left = np.concatenate(([0.0], u[:-1]))
        right = np.concatenate((u[1:], [0.0]))
        d2 = (left - 2.0 * u + right) / self.dx**2 + self._lift
        return eps * d2 - (u**3 - u)

    def jacobian(self, u, t, xi):
        u = self.check_state(u)
        eps = xi.values[0]
        band = eps * laplacian_1d(self.m, self.dx)
        return band - sp.diags(3.0 * u**2 - 1.0)

    def initial_condition(self, xi):
        return 0.53 * self.x + 0.47 * np.sin(-1.5 * np.pi * self.x)

    def sample_parameters(self, count, rng):
        mu, sigma = self.gaussian
        return sample_truncated_gaussian(mu, sigma, *self.supports[0], count, rng)

    def with_boundaries(self, u: np.ndarray) -> np.ndarray:
        """Attach the physical Dirichlet values around an interior state."""
        return np.concatenate(([self.bc[0]], np.asarray(u, float), [self.bc[1]]))

    def sweep_args(self, xi: ParameterSample) -> tuple:
        return "allen-cahn", (xi.values[0], self.dx, self.bc[0], self.bc[1])


def allencahn_energy(u_full: np.ndarray, eps: float, dx: float) -> float:
    """Discrete free energy of a full-grid state (boundaries included).

    Gradient contributions use first differences on cell midpoints and the
    double-well term (u^2-1)^2/4 is integrated with the trapezoid rule; with
    this pairing the model rhs is the exact negative gradient of the energy,
    so backward-Euler trajectories decrease it monotonically.
    """
    u_full = np.asarray(u_full, dtype=float)
    if u_full.ndim != 1 or u_full.shape[0] < 2:
        raise ValueError("need a full-grid state including both boundary values")
    grad = np.diff(u_full) / dx
    e_grad = 0.5 * eps * np.sum(grad**2) * dx
    fw = (u_full**2 - 1.0) ** 2 / 4.0
    e_well = dx * (0.5 * fw[0] + np.sum(fw[1:-1]) + 0.5 * fw[-1])
    return float(e_grad + e_well)


_MODELS = {
    "advection-diffusion": AdvectionDiffusion2D,
    "burgers": Burgers1D,
    "allen-cahn": AllenCahn1D,
    "diffusion-1d": Diffusion1D,
}


def get_model(name: str, **kwargs) -> Model:
    try:
        cls = _MODELS[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; known: {sorted(_MODELS)}") from None
    return cls(**kwargs)
