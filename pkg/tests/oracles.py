"""Independent reference computations used by the tests.

Everything here deliberately avoids the code paths it checks: dense linear
algebra instead of FFT diagonalization, quadrature instead of sampling,
finite differences instead of analytic Jacobians, fixed-point iteration
instead of Newton.
"""
import numpy as np
import scipy.integrate
import scipy.sparse as sp
import scipy.sparse.linalg as spla


def naive_dft_matrix(n):
    """O(N^2) DFT matrix with entries omega^(jk)/sqrt(N), omega = e^{2i pi/N}."""
    jk = np.outer(np.arange(n), np.arange(n))
    return np.exp(2j * np.pi * jk / n) / np.sqrt(n)


def dense_all_at_once_solve(spec, mean_jac, deltaT, r):
    """Direct kron-assembled solve of (C_alpha (x) I - deltaT * I (x) J) u = r."""
    nx = np.atleast_2d(mean_jac).shape[0]
    C = spec.dense_matrix()
    M = np.kron(C, np.eye(nx)) - deltaT * np.kron(np.eye(spec.n), np.atleast_2d(mean_jac))
    return np.linalg.solve(M, np.asarray(r, dtype=float).reshape(-1)).reshape(spec.n, nx)


def sequential_alpha_elimination(model, xi, grid, alpha, b):
    """Solve the alpha-coupled coarse system of a linear model by forward
    substitution with the cyclic closure U_0 = alpha * U_N reduced to one
    dense solve (no FFT, no diagonalization).

    Block n (1-based) on [T_{n-1}, T_n]:
        (I + dT A) U_n = U_{n-1} + dT*(A b_n + g(T_n)) + b_n
    """
    A, g = model.linear_system(xi)
    N, dT = grid.n_coarse, grid.deltaT
    lu = spla.splu((sp.eye(model.nx, format="csc") + dT * A).tocsc())
    c = np.empty_like(b)
    for n in range(N):
        c[n] = dT * (A @ b[n] + g(grid.coarse_point(n + 1))) + b[n]
    # particular sweep from U_0 = 0
    part = np.zeros(model.nx)
    for n in range(N):
        part = lu.solve(part + c[n])
    # propagation matrix M = (I + dT A)^{-N}
    M = np.eye(model.nx)
    for _ in range(N):
        M = lu.solve(M)
    U0 = np.linalg.solve(np.eye(model.nx) - alpha * M, alpha * part)
    U = np.empty((N, model.nx))
    prev = U0
    for n in range(N):
        prev = lu.solve(prev + c[n])
        U[n] = prev
    return U


def fd_jacobian(model, u, t, xi, delta=1e-6):
    """Central-difference Jacobian of the model rhs."""
    n = u.shape[0]
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = delta
        J[:, j] = (model.rhs(u + e, t, xi) - model.rhs(u - e, t, xi)) / (2 * delta)
    return J


def truncated_normal_mean(mu, sigma, lo, hi):
    """Mean of the truncated Gaussian by adaptive quadrature."""
    def phi(x):
        return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))

    mass, _ = scipy.integrate.quad(phi, lo, hi)
    first, _ = scipy.integrate.quad(lambda x: x * phi(x), lo, hi)
    return first / mass


def picard_burgers_step(u, dt, nu, dx, tol=1e-13, max_iters=500):
    """Backward-Euler step for Burgers by diffusion-implicit fixed point:
    v <- (I - dt*nu*D2)^{-1} (u + dt*conv(v)); Picard on the convection only
    (the fully explicit iteration diverges at these step sizes)."""
    m = u.shape[0]
    D2 = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1]) / dx**2
    lu = spla.splu((sp.eye(m, format="csc") - dt * nu * D2).tocsc())

    def conv(v):
        left = np.concatenate(([0.0], v[:-1]))
        right = np.concatenate((v[1:], [0.0]))
        dudx = np.where(v >= 0.0, (v - left) / dx, (right - v) / dx)
        return -v * dudx

    v = u.copy()
    for _ in range(max_iters):
        v_new = lu.solve(u + dt * conv(v))
        if np.max(np.abs(v_new - v)) <= tol:
            return v_new
        v = v_new
    raise RuntimeError("picard iteration did not converge")


def legendre_value(n, x):
    """Unnormalized Legendre polynomial via the numpy polynomial module."""
    return np.polynomial.legendre.legval(x, [0.0] * n + [1.0])
