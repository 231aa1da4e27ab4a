"""Karhunen-Loeve expansion of a snapshot library plus a least-squares
polynomial-chaos fit of the mode coefficients.

The snapshot method works on the small n_t x n_t sample covariance of the
coarse-point solution fields. Retained space-time modes are orthonormal
under the discrete L2 inner product (cell volume times coarse step as
quadrature weight); their random coefficients are regressed onto an
orthonormal Legendre basis in mapped parameter coordinates, which yields a
cheap predictor of the full coarse trajectory for unseen samples.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CoarseTrajectory,
    ParameterSample,
    RankDeficientError,
    SnapshotError,
    SolverConfig,
    TimeGrid,
)
from .models import Model, ParameterMap
from .parareal import coarse_sweep_init
from .pcgc import pcgc_solve
from .propagators import fine_reference

# fluctuation energy below this fraction of the mean-field energy is
# indistinguishable from rounding noise of the mean subtraction
_ZERO_VARIANCE_REL = 1e-26
_EIGENVALUE_FLOOR_REL = 1e-14


@dataclass
class SnapshotSet:
    """Coarse-point solution fields over the training samples, split into a
    sample mean and zero-mean fluctuations."""

    samples: list
    fields: np.ndarray          # (n_t, N, N_x)
    mean_field: np.ndarray      # (N, N_x)
    fluctuations: np.ndarray    # (n_t, N, N_x)
    cell_weight: float          # h^d * deltaT quadrature weight per entry

    @property
    def n_train(self) -> int:
        return self.fields.shape[0]

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Discrete space-time inner product of two (N, N_x) fields."""
        return self.cell_weight * float(np.sum(a * b))


def make_snapshot_set(samples, fields, cell_weight: float) -> SnapshotSet:
    fields = np.asarray(fields, dtype=float)
    if fields.ndim != 3:
        raise ValueError("snapshot fields must have shape (n_t, N, N_x)")
    mean = fields.mean(axis=0)
    return SnapshotSet(list(samples), fields, mean, fields - mean, float(cell_weight))


def collect_snapshots(
    model: Model,
    grid: TimeGrid,
    cfg: SolverConfig,
    training: list,
    method: str = "pcgc",
    executor=None,
) -> SnapshotSet:
    """Solve the model for every training sample and stack the coarse-point
    trajectories. ``method='pcgc'`` runs the diagonalized solver from a
    coarse-sweep initial guess (so library generation itself exercises the
    parallel solver); ``method='fine'`` uses the serial fine reference.
    """
    if not training:
        raise ValueError("training set must not be empty")
    if method not in ("pcgc", "fine"):
        raise ValueError(f"unknown snapshot method {method!r}")

    def one(xi):
        if method == "fine":
            return fine_reference(model, xi, grid, cfg).states
        init = coarse_sweep_init(model, xi, grid, cfg)
        trace = pcgc_solve(model, xi, grid, cfg, init, stop_on="increment")
        return trace.trajectory.states

    fields = np.empty((len(training), grid.n_coarse, model.nx))
    failures = {}
    if executor is None:
        results = []
        for xi in training:
            try:
                results.append(one(xi))
            except Exception as exc:  # noqa: BLE001 - reported per sample
                failures[xi.id] = exc
                results.append(None)
    else:
        futs = [executor.submit(one, xi) for xi in training]
        results = []
        for xi, fut in zip(training, futs):
            try:
                results.append(fut.result())
            except Exception as exc:  # noqa: BLE001
                failures[xi.id] = exc
                results.append(None)
    if failures:
        raise SnapshotError(
            f"snapshot solves failed for samples {sorted(failures)}", failures
        )
    for i, r in enumerate(results):
        fields[i] = r
    return make_snapshot_set(training, fields, model.cell_volume * grid.deltaT)


@dataclass
class KLBasis:
    """Retained Karhunen-Loeve modes of the snapshot fluctuations.

    ``eigenvalues`` holds the full descending spectrum of the sample
    covariance; the first ``m_q`` modes are retained. Modes are orthonormal
    under the snapshot set's inner product.
    """

    eigenvalues: np.ndarray        # (n_t,) descending, clipped at zero
    modes: np.ndarray              # (m_q, N, N_x)
    m_q: int
    cell_weight: float
    energy_ratio: float

    @property
    def retained(self) -> np.ndarray:
        return self.eigenvalues[: self.m_q]

    def discarded_energy(self) -> float:
        total = float(np.sum(self.eigenvalues))
        return float(np.sum(self.eigenvalues[self.m_q :])) if total > 0 else 0.0


def kl_build(snap: SnapshotSet, eps_kl: float) -> KLBasis:
    """Snapshot-method KL basis: eigendecompose the n_t x n_t covariance and
    retain the smallest mode count whose energy fraction reaches 1 - eps_kl.
    Modes with eigenvalues below 1e-14 of the leading one are never kept.
    """
    if not 0.0 < eps_kl < 1.0:
        raise ValueError(f"eps_kl must lie in (0, 1), got {eps_kl}")
    n_t = snap.n_train
    X = snap.fluctuations.reshape(n_t, -1)
    C = (snap.cell_weight / n_t) * (X @ X.T)
    lam, E = np.linalg.eigh(C)
    lam = np.clip(lam[::-1], 0.0, None)
    E = E[:, ::-1]

    total = float(np.sum(lam))
    mean_energy = snap.cell_weight * float(np.sum(snap.mean_field**2))
    if total <= _ZERO_VARIANCE_REL * max(mean_energy, 1.0):
        return KLBasis(lam, np.empty((0,) + snap.fields.shape[1:]), 0, snap.cell_weight, 1.0)

    ratios = np.cumsum(lam) / total
    m_energy = int(np.searchsorted(ratios, 1.0 - eps_kl) + 1)
    m_floor = int(np.sum(lam > _EIGENVALUE_FLOOR_REL * lam[0]))
    m_q = min(m_energy, m_floor)

    scale = 1.0 / np.sqrt(lam[:m_q] * n_t)
    modes_flat = scale[:, None] * (E[:, :m_q].T @ X)
    modes = modes_flat.reshape((m_q,) + snap.fields.shape[1:])
    return KLBasis(lam, modes, m_q, snap.cell_weight, float(ratios[m_q - 1]))


def kl_coefficients(snap: SnapshotSet, basis: KLBasis) -> np.ndarray:
    """Training-sample mode coefficients zeta_i(xi_j), shape (n_t, m_q).

    Columns satisfy (1/n_t) sum_j zeta_i(xi_j)^2 = 1 by the eigenvalue
    normalization.
    """
    if basis.m_q == 0:
        return np.empty((snap.n_train, 0))
    X = snap.fluctuations.reshape(snap.n_train, -1)
    G = basis.modes.reshape(basis.m_q, -1)
    return snap.cell_weight * (X @ G.T) / np.sqrt(basis.retained)[None, :]


def gpc_basis_count(degree: int, dim: int) -> int:
    """Size of the total-order multi-index set: (p + d)! / (p! d!)."""
    if degree < 0 or dim < 1:
        raise ValueError("degree must be >= 0 and dimension >= 1")
    return math.comb(degree + dim, dim)


def gpc_multi_indices(degree: int, dim: int) -> list:
    """Total-order multi-indices |k| <= p in graded lexicographic order."""
    out = []
    for total in range(degree + 1):
        def rec(prefix, remaining, slots):
            if slots == 1:
                out.append(prefix + (remaining,))
                return
            for v in range(remaining, -1, -1):
                rec(prefix + (v,), remaining - v, slots - 1)
        rec((), total, dim)
    return out


def _legendre_table(x: np.ndarray, degree: int) -> np.ndarray:
    """Orthonormal Legendre values table of shape (degree+1, len(x)); the
    weight is the uniform probability measure on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    T = np.empty((degree + 1,) + x.shape)
    T[0] = 1.0
    if degree >= 1:
        T[1] = x
    for k in range(1, degree):
        T[k + 1] = ((2 * k + 1) * x * T[k] - k * T[k - 1]) / (k + 1)
    norms = np.sqrt(2.0 * np.arange(degree + 1) + 1.0)
    return T * norms.reshape((-1,) + (1,) * x.ndim)


def _hermite_table(x: np.ndarray, degree: int) -> np.ndarray:
    """Orthonormal probabilists' Hermite table (standard Gaussian weight);
    provided for unbounded supports, unused by the shipped benchmarks."""
    x = np.asarray(x, dtype=float)
    T = np.empty((degree + 1,) + x.shape)
    T[0] = 1.0
    if degree >= 1:
        T[1] = x
    for k in range(1, degree):
        T[k + 1] = x * T[k] - k * T[k - 1]
    norms = np.array([1.0 / math.sqrt(math.factorial(k)) for k in range(degree + 1)])
    return T * norms.reshape((-1,) + (1,) * x.ndim)


def gpc_basis_matrix(points: np.ndarray, degree: int, family: str = "legendre") -> np.ndarray:
    """Evaluate the multivariate basis at mapped points, shape (n, P)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = points.shape
    table = {"legendre": _legendre_table, "hermite": _hermite_table}[family]
    tables = [table(points[:, d], degree) for d in range(dim)]
    indices = gpc_multi_indices(degree, dim)
    B = np.ones((n, len(indices)))
    for col, k in enumerate(indices):
        for d, kd in enumerate(k):
            if kd:
                B[:, col] *= tables[d][kd]
    return B


def gpc_eval_basis(xi_mapped, degree: int, family: str = "legendre") -> np.ndarray:
    """All total-order basis functions at one mapped point (length P)."""
    return gpc_basis_matrix(np.atleast_2d(xi_mapped), degree, family)[0]


def default_degree(n_train: int, dim: int, cap: int = 6) -> int:
    """Largest degree whose basis stays <= n_train/2 (2x overdetermined)."""
    p = 0
    while p < cap and gpc_basis_count(p + 1, dim) <= max(1, n_train // 2):
        p += 1
    return p


def gpc_fit(points: np.ndarray, zeta: np.ndarray, degree: int, family: str = "legendre"):
    """Least-squares coefficients of each mode column of ``zeta`` on the
    polynomial basis at mapped ``points``.

    Returns (coeffs (m_q, P), residuals (m_q,), degree_used). The degree is
    reduced (with a warning) when the regression would be underdetermined.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    zeta = np.asarray(zeta, dtype=float)
    n, dim = points.shape
    while degree > 0 and gpc_basis_count(degree, dim) > n:
        degree -= 1
    if gpc_basis_count(degree, dim) > n:
        warnings.warn("fewer samples than basis functions even at degree 0")
    B = gpc_basis_matrix(points, degree, family)
    P = B.shape[1]
    coeffs, _, rank, _ = np.linalg.lstsq(B, zeta, rcond=None)
    if rank < P:
        raise RankDeficientError(
            f"regression matrix rank {rank} < basis size {P}; "
            "training points do not resolve the basis"
        )
    resid = B @ coeffs - zeta
    residuals = np.sqrt(np.mean(resid**2, axis=0)) if zeta.size else np.zeros(0)
    return coeffs.T, residuals, degree


@dataclass
class KLGpcSurrogate:
    """Predicts a full coarse trajectory for a new parameter sample:

        U0(x, t_n; xi) = mean(x, t_n)
            + sum_i sqrt(lambda_i) * (sum_j h_ij psi_j(map(xi))) * g_i(x, t_n)
    """

    mean_field: np.ndarray
    eigenvalues: np.ndarray      # retained, (m_q,)
    modes: np.ndarray            # (m_q, N, N_x)
    coeffs: np.ndarray           # (m_q, P)
    degree: int
    maps: list
    family: str = "legendre"
    cell_weight: float = 1.0
    provenance: dict = field(default_factory=dict)
    ls_residuals: np.ndarray | None = None
    training_errors: np.ndarray | None = None

    @property
    def m_q(self) -> int:
        return self.modes.shape[0]

    def map_parameters(self, xi: ParameterSample) -> np.ndarray:
        if xi.dim != len(self.maps):
            raise ValueError(f"sample has {xi.dim} coordinates, surrogate expects {len(self.maps)}")
        return np.array([m.apply(v) for m, v in zip(self.maps, xi.values)])


def surrogate_predict(
    s: KLGpcSurrogate, xi: ParameterSample, initial: np.ndarray
) -> CoarseTrajectory:
    """Evaluate the surrogate at a sample; ``initial`` is the true initial
    state used as the trajectory's T_0 entry."""
    field_shape = s.mean_field.shape
    pred = s.mean_field.copy()
    if s.m_q:
        psi = gpc_eval_basis(s.map_parameters(xi), s.degree, s.family)
        zeta_hat = s.coeffs @ psi
        weights = np.sqrt(s.eigenvalues) * zeta_hat
        pred = pred + (weights @ s.modes.reshape(s.m_q, -1)).reshape(field_shape)
    return CoarseTrajectory(initial, pred)


def build_surrogate(
    model: Model,
    grid: TimeGrid,
    cfg: SolverConfig,
    training: list,
    eps_kl: float = 1e-10,
    degree: int | None = None,
    snapshot_method: str = "pcgc",
    executor=None,
    snapshots: SnapshotSet | None = None,
) -> KLGpcSurrogate:
    """End-to-end library construction: snapshots, KL basis, coefficient
    regression. Training reconstruction errors and least-squares residuals
    are recorded on the returned surrogate."""
    if snapshots is None:
        snapshots = collect_snapshots(model, grid, cfg, training, snapshot_method, executor)
    basis = kl_build(snapshots, eps_kl)
    zeta = kl_coefficients(snapshots, basis)
    points = np.column_stack(
        [m.apply([xi.values[d] for xi in snapshots.samples]) for d, m in enumerate(model.fit_maps())]
    )
    if degree is None:
        degree = default_degree(snapshots.n_train, points.shape[1])
    if basis.m_q:
        coeffs, residuals, degree = gpc_fit(points, zeta, degree)
    else:
        coeffs = np.empty((0, gpc_basis_count(degree, points.shape[1])))
        residuals = np.zeros(0)
    s = KLGpcSurrogate(
        mean_field=snapshots.mean_field,
        eigenvalues=basis.retained.copy(),
        modes=basis.modes,
        coeffs=coeffs,
        degree=degree,
        maps=model.fit_maps(),
        cell_weight=snapshots.cell_weight,
        provenance={
            "model": model.name,
            "t_final": grid.t_final,
            "n_coarse": grid.n_coarse,
            "n_fine_per_coarse": grid.n_fine_per_coarse,
            "seed": cfg.seed,
            "eps_kl": eps_kl,
            "n_train": snapshots.n_train,
            "energy_ratio": basis.energy_ratio,
            "snapshot_method": snapshot_method,
        },
        ls_residuals=residuals,
    )
    errs = np.empty(snapshots.n_train)
    for j, xi in enumerate(snapshots.samples):
        pred = surrogate_predict(s, xi, np.zeros(model.nx)).states
        diff = pred - snapshots.fields[j]
        num = np.sqrt(snapshots.inner(diff, diff))
        den = max(np.sqrt(snapshots.inner(snapshots.fields[j], snapshots.fields[j])), 1e-300)
        errs[j] = num / den
    s.training_errors = errs
    return s


def save_surrogate(s: KLGpcSurrogate, path) -> None:
    """Persist to a self-describing .npz archive; round-trips bit-exactly."""
    meta = {
        "degree": s.degree,
        "family": s.family,
        "cell_weight": s.cell_weight,
        "maps": [m.to_dict() for m in s.maps],
        "provenance": s.provenance,
        "format_version": 1,
    }
    np.savez(
        path,
        mean_field=s.mean_field,
        eigenvalues=s.eigenvalues,
        modes=s.modes,
        coeffs=s.coeffs,
        ls_residuals=s.ls_residuals if s.ls_residuals is not None else np.zeros(0),
        training_errors=s.training_errors if s.training_errors is not None else np.zeros(0),
        meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
    )


def load_surrogate(path) -> KLGpcSurrogate:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        return KLGpcSurrogate(
            mean_field=data["mean_field"],
            eigenvalues=data["eigenvalues"],
            modes=data["modes"],
            coeffs=data["coeffs"],
            degree=int(meta["degree"]),
            maps=[ParameterMap.from_dict(d) for d in meta["maps"]],
            family=meta["family"],
            cell_weight=float(meta["cell_weight"]),
            provenance=meta["provenance"],
            ls_residuals=data["ls_residuals"],
            training_errors=data["training_errors"],
        )
