"""Closed-form convergence diagnostics: stability functions, per-eigenvalue
contraction factors of the coarse-grid corrections, the one-sided-Lipschitz
nonlinear rate, and model spectra. These bound and validate the measured
iteration behavior; none of them enter the solvers themselves."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import ParameterSample, TimeGrid
from .models import Model


def backward_euler_stability(z):
    """Amplification factor R(z) = 1/(1+z) of implicit Euler on u' = -l*u."""
    z = np.asarray(z)
    if np.any(z == -1.0):
        raise ZeroDivisionError("stability function has a pole at z = -1")
    return 1.0 / (1.0 + z)


def _check_positive_z(z):
    z = np.asarray(z, dtype=complex)
    if np.any(z.real <= 0.0):
        raise ValueError("contraction factors require eigenvalues with positive real part")
    return z


def k_classical(z, n_fine: int):
    """Contraction factor of parareal with sequential coarse correction,
    |R_f^J(z/J) - R_g(z)| / (1 - |R_g(z)|), for backward-Euler propagators."""
    z = _check_positive_z(z)
    rg = backward_euler_stability(z)
    rf_pow = backward_euler_stability(z / n_fine) ** n_fine
    out = np.abs(rf_pow - rg) / (1.0 - np.abs(rg))
    return float(out) if out.ndim == 0 else out.real if np.isrealobj(out) else out


def k_alpha(z, n_fine: int, alpha: float):
    """Contraction factor of the diagonalized correction:
    max(|alpha*R_g(z)| * (1 + K_cla), K_cla)."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    z = _check_positive_z(z)
    kc = np.asarray(k_classical(z, n_fine))
    branch = np.abs(alpha * backward_euler_stability(z)) * (1.0 + kc)
    out = np.maximum(branch, kc)
    return float(out) if out.ndim == 0 else out


def k_alpha_bound(z_values, n_fine: int, alpha: float) -> float:
    """max over a model spectrum of the per-eigenvalue contraction factor."""
    return float(np.max(k_alpha(z_values, n_fine, alpha)))


def k_classical_supremum(
    n_fine: int, z_lo: float = 1e-4, z_hi: float = 1e6, num: int = 10**4
) -> float:
    """Grid supremum of K_cla over a logarithmic z grid (reproducible proxy
    for the supremum over the positive half line)."""
    zs = np.logspace(np.log10(z_lo), np.log10(z_hi), num)
    return float(np.max(k_classical(zs, n_fine)))


def rho_classical(lipschitz: float, deltaT: float) -> float:
    """Nonlinear parareal rate under a one-sided Lipschitz condition."""
    if lipschitz <= 0 or deltaT <= 0:
        raise ValueError("lipschitz constant and step must be positive")
    ldt = lipschitz * deltaT
    g = 1.0 / (1.0 + ldt)
    return (np.exp(-ldt) + g) / (1.0 - g)


def rho_alpha(lipschitz: float, deltaT: float, alpha: float) -> float:
    """Nonlinear rate of the diagonalized correction,
    max(|alpha|(1+e^{-L dT})/(L dT), rho_classical); requires
    |alpha|/(1 + L dT) < 1. Values >= 1 are reported with a warning rather
    than rejected: the estimate only certifies contraction when below one."""
    if lipschitz <= 0 or deltaT <= 0:
        raise ValueError("lipschitz constant and step must be positive")
    ldt = lipschitz * deltaT
    if abs(alpha) / (1.0 + ldt) >= 1.0:
        raise ValueError(f"requires |alpha|/(1 + L*deltaT) < 1, got alpha={alpha}, L*dT={ldt}")
    rho = max(abs(alpha) * (1.0 + np.exp(-ldt)) / ldt, rho_classical(lipschitz, deltaT))
    if rho >= 1.0:
        warnings.warn(f"estimated rate {rho:.3f} >= 1: no contraction certified")
    return float(rho)


def expected_iterations(eps: float, e0_norm: float, rho: float) -> float:
    """Iterations needed to contract an initial error e0 below eps at rate
    rho: log(eps/e0) / log(rho). The caller rounds up."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rate must lie in (0, 1), got {rho}")
    if not 0.0 < eps <= e0_norm:
        raise ValueError("need 0 < eps <= e0_norm")
    if eps == e0_norm:
        return 0.0
    return float(np.log(eps / e0_norm) / np.log(rho))


def weighted_inf_norm(v: np.ndarray, transform: np.ndarray) -> float:
    """Sup norm after transforming every time block by the given spatial
    matrix: max_n |transform @ v_n|_inf."""
    v = np.atleast_2d(np.asarray(v))
    transform = np.asarray(transform)
    if transform.shape != (v.shape[1], v.shape[1]):
        raise ValueError(
            f"transform shape {transform.shape} does not match block size {v.shape[1]}"
        )
    return float(np.max(np.abs(v @ transform.T)))


@dataclass
class SpectralInfo:
    """Spectrum of the model's linear operator A (with rhs = -A u + g) and
    its scaling by the coarse step."""

    eigenvalues: np.ndarray
    z: np.ndarray
    transform: np.ndarray
    symmetric: bool


def model_spectrum(model: Model, xi: ParameterSample, grid: TimeGrid) -> SpectralInfo:
    """Eigenvalues of A scaled by deltaT, plus the eigenvector transform used
    by the weighted norm. Symmetric pure-diffusion operators use the closed
    -form sine spectrum; other linear operators fall back to a dense solve.
    Nonlinear models are rejected."""
    if not model.is_linear:
        raise ValueError(f"model {model.name!r} is nonlinear; no fixed spectrum")
    symmetric = hasattr(model, "diffusion_eigenvalues") and not getattr(model, "advection", False)
    if symmetric:
        mu = np.asarray(model.diffusion_eigenvalues(xi), dtype=float)
        V = model.diffusion_eigenvectors()
    else:
        A, _ = model.linear_system(xi)
        mu, vecs = np.linalg.eig(A.toarray())
        order = np.argsort(mu.real)
        mu, vecs = mu[order], vecs[:, order]
        V = np.linalg.inv(vecs)
    return SpectralInfo(mu, grid.deltaT * mu, V, symmetric)
