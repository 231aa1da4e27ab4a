"""Experiment orchestration: draw parameter samples, build surrogates, run
the solvers side by side, aggregate mean-error curves and emit CSV tables
plus a text report.

Error aggregation follows the mean-over-samples convention: for each
iteration k and coarse point n the per-sample sup-norm discrepancies
against the fine serial reference are averaged over the evaluation set,
and the curve reported per k is the maximum of that mean over n. Timing
columns live in a separate file so that the error tables are byte-identical
across repeated runs with the same seeds.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .convergence import k_alpha_bound, model_spectrum, weighted_inf_norm
from .core import ConfigError, RngStream, SolverConfig, make_time_grid
from .models import AllenCahn1D, allencahn_energy, get_model
from .parareal import parareal_solve, random_guess_init
from .pcgc import pcgc_solve
from .propagators import fine_reference
from .surrogate import build_surrogate, load_surrogate, save_surrogate, surrogate_predict

KNOWN_SOLVERS = ("parareal", "pcgc", "kle-pcgc")

# paper-scale benchmark settings per model (spatial step, grid, library size)
BENCHMARK_DEFAULTS = {
    "advection-diffusion": dict(h=1 / 20, t_final=1.0, n_coarse=24, n_fine=50, train_samples=10),
    "burgers": dict(h=1 / 100, t_final=2.0, n_coarse=25, n_fine=40, train_samples=36),
    "allen-cahn": dict(h=1 / 128, t_final=30.0, n_coarse=30, n_fine=48, train_samples=10),
    "diffusion-1d": dict(h=1 / 64, t_final=1.0, n_coarse=16, n_fine=32, train_samples=8),
}

_SPATIAL_KW = {
    "advection-diffusion": "h",
    "diffusion-1d": "h",
    "burgers": "dx",
    "allen-cahn": "dx",
}


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every field doubles as a config-file
    key and a CLI flag."""

    model: str = "advection-diffusion"
    h: float | None = None
    t_final: float | None = None
    n_coarse: int | None = None
    n_fine: int | None = None
    alpha: float = 0.1
    tol: float = 1e-10
    max_iters: int = 40
    newton_tol: float = 1e-12
    eval_samples: int = 20
    train_samples: int | None = None
    eps_kl: float = 1e-10
    gpc_degree: int | None = None
    seed: int = 2718
    solvers: tuple = KNOWN_SOLVERS
    outdir: str = "results"
    workers: int = 1
    sweep_workers: int = 1
    store_per_sample: bool = False
    snapshot_method: str = "pcgc"
    paper_scale: bool = False

    def resolved(self) -> "ExperimentConfig":
        """Fill model-dependent defaults and apply the output-dir override."""
        if self.model not in BENCHMARK_DEFAULTS:
            raise ConfigError(f"unknown model {self.model!r}")
        defaults = BENCHMARK_DEFAULTS[self.model]
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("h", "t_final", "n_coarse", "n_fine", "train_samples"):
            if values[key] is None:
                values[key] = defaults[key]
        if values["paper_scale"]:
            values["eval_samples"] = 1000
        env_outdir = os.environ.get("PINTUQ_OUTDIR")
        if env_outdir:
            values["outdir"] = env_outdir
        solvers = values["solvers"]
        if isinstance(solvers, str):
            solvers = tuple(s.strip() for s in solvers.split(",") if s.strip())
        for s in solvers:
            if s not in KNOWN_SOLVERS:
                raise ConfigError(f"unknown solver {s!r}; known: {KNOWN_SOLVERS}")
        values["solvers"] = tuple(solvers)
        return ExperimentConfig(**values)

    def make_model(self):
        return get_model(self.model, **{_SPATIAL_KW[self.model]: self.h})

    def make_grid(self):
        return make_time_grid(self.t_final, self.n_coarse, self.n_fine)

    def make_solver_config(self) -> SolverConfig:
        return SolverConfig(
            alpha=self.alpha,
            tol=self.tol,
            max_outer_iters=self.max_iters,
            newton_tol=self.newton_tol,
            seed=self.seed,
        )


_BOOL_STRINGS = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, raw: str):
    """Parse a config-file/CLI string into the field's type."""
    typed = {f.name: f.type for f in fields(ExperimentConfig)}
    if name not in typed:
        raise ConfigError(f"unknown configuration key {name!r}")
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    if name in ("model", "outdir", "snapshot_method"):
        return raw
    if name == "solvers":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if name in ("store_per_sample", "paper_scale"):
        try:
            return _BOOL_STRINGS[raw.lower()]
        except KeyError:
            raise ConfigError(f"cannot parse boolean {name}={raw!r}") from None
    if name in ("n_coarse", "n_fine", "max_iters", "eval_samples", "train_samples",
                "gpc_degree", "seed", "workers", "sweep_workers"):
        return int(raw)
    return float(raw)


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; '#' starts a comment; unknown keys error."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        out[key.strip()] = _coerce(key.strip(), value)
    return out


def config_from_sources(file_path=None, overrides=None) -> ExperimentConfig:
    """Defaults <- config file <- explicit overrides (e.g. CLI flags)."""
    values = {}
    if file_path:
        values.update(read_config_file(file_path))
    for key, val in (overrides or {}).items():
        if val is not None:
            if key not in {f.name for f in fields(ExperimentConfig)}:
                raise ConfigError(f"unknown configuration key {key!r}")
            values[key] = val
    return ExperimentConfig(**values).resolved()


@dataclass
class SampleRun:
    """Outcome of one solver on one evaluation sample."""

    sample_id: int
    iters_to_tol: int | None
    converged: bool
    error_vectors: np.ndarray      # (k_max+1, N)
    final_error: float
    wall_ms: np.ndarray
    failure: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    eval_samples: list
    runs: dict = field(default_factory=dict)            # solver -> [SampleRun]
    mean_vectors: dict = field(default_factory=dict)    # solver -> (K+1, N)
    mean_max_error: dict = field(default_factory=dict)  # solver -> (K+1,)
    mean_iters: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)        # solver -> [(id, reason)]
    surrogate = None
    surrogate_path: str | None = None
    files: list = field(default_factory=list)

    def failure_fraction(self, solver: str) -> float:
        return len(self.failures.get(solver, [])) / max(len(self.eval_samples), 1)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path: Path, header: list, rows: list):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in row) + "\n")


def _run_one_sample(model, grid, scfg, cfg, xi, surrogate, init_streams, executor):
    """All enabled solvers on one sample; returns {solver: SampleRun}."""
    reference = fine_reference(model, xi, grid, scfg)
    out = {}
    for solver in cfg.solvers:
        rng = init_streams[solver]
        tic = time.perf_counter()
        failure = None
        trace = None
        try:
            if solver == "kle-pcgc":
                init = surrogate_predict(surrogate, xi, model.initial_condition(xi))
            else:
                init = random_guess_init(model, xi, grid, rng)
            solve = parareal_solve if solver == "parareal" else pcgc_solve
            kwargs = dict(
                reference=reference,
                stop_on="reference",
                raise_on_max=False,
                executor=executor,
            )
            if solve is pcgc_solve:
                kwargs["solver_name"] = solver
            trace = solve(model, xi, grid, scfg, init, **kwargs)
        except Exception as exc:  # noqa: BLE001 - recorded per sample
            failure = f"{type(exc).__name__}: {exc}"
        wall = 1e3 * (time.perf_counter() - tic)
        if trace is None:
            out[solver] = SampleRun(
                xi.id, None, False, np.full((1, grid.n_coarse), np.nan), np.nan,
                np.array([wall]), failure,
            )
            continue
        iters = trace.iters_to_tol(scfg.tol)
        if not trace.converged and failure is None:
            failure = f"unconverged after {scfg.max_outer_iters} iterations"
        out[solver] = SampleRun(
            xi.id,
            iters,
            trace.converged,
            trace.error_vectors(),
            float(trace.records[-1].max_err_vs_ref),
            np.array([r.wall_ms for r in trace.records]),
            failure,
        )
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Full pipeline: training library + surrogate (when requested), S
    evaluation samples, all enabled solvers, aggregated tables on disk.
    Deterministic for fixed config and seed."""
    cfg = cfg.resolved()
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    model = cfg.make_model()
    grid = cfg.make_grid()
    scfg = cfg.make_solver_config()

    master = RngStream(cfg.seed)
    train_rng, eval_rng, init_root = master.split(3)

    result = ExperimentResult(config=cfg, eval_samples=[])

    sweep_executor = ThreadPoolExecutor(cfg.sweep_workers) if cfg.sweep_workers > 1 else None
    try:
        surrogate = None
        if "kle-pcgc" in cfg.solvers:
            training = model.sample_parameters(cfg.train_samples, train_rng)
            surrogate = build_surrogate(
                model, grid, scfg, training,
                eps_kl=cfg.eps_kl, degree=cfg.gpc_degree,
                snapshot_method=cfg.snapshot_method, executor=sweep_executor,
            )
            result.surrogate = surrogate
            result.surrogate_path = str(outdir / f"surrogate_{cfg.model}.npz")
            save_surrogate(surrogate, result.surrogate_path)
            result.files.append(result.surrogate_path)

        samples = model.sample_parameters(cfg.eval_samples, eval_rng)
        result.eval_samples = samples
        streams = init_root.split(len(samples) * len(cfg.solvers))
        per_sample_streams = [
            {solver: streams[i * len(cfg.solvers) + j] for j, solver in enumerate(cfg.solvers)}
            for i in range(len(samples))
        ]

        def run_idx(i):
            return _run_one_sample(
                model, grid, scfg, cfg, samples[i], surrogate,
                per_sample_streams[i], sweep_executor,
            )

        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                sample_results = list(pool.map(run_idx, range(len(samples))))
        else:
            sample_results = [run_idx(i) for i in range(len(samples))]
    finally:
        if sweep_executor is not None:
            sweep_executor.shutdown()

    for solver in cfg.solvers:
        runs = [sample_results[i][solver] for i in range(len(samples))]
        result.runs[solver] = runs
        result.failures[solver] = [(r.sample_id, r.failure) for r in runs if r.failure]
        good = [r for r in runs if r.error_vectors is not None and np.all(np.isfinite(r.error_vectors))]
        if good:
            k_max = max(r.error_vectors.shape[0] for r in good)
            stack = np.empty((len(good), k_max, grid.n_coarse))
            for i, r in enumerate(good):
                ev = r.error_vectors
                pad = np.vstack([ev, np.repeat(ev[-1:], k_max - ev.shape[0], axis=0)])
                stack[i] = pad
            result.mean_vectors[solver] = stack.mean(axis=0)
            result.mean_max_error[solver] = result.mean_vectors[solver].max(axis=1)
        else:
            result.mean_vectors[solver] = np.full((1, grid.n_coarse), np.nan)
            result.mean_max_error[solver] = np.array([np.nan])
        iter_counts = [
            r.iters_to_tol if r.iters_to_tol is not None else cfg.max_iters for r in runs
        ]
        result.mean_iters[solver] = float(np.mean(iter_counts)) if iter_counts else np.nan

    _write_experiment_files(result, outdir)
    return result


def _write_experiment_files(result: ExperimentResult, outdir: Path):
    cfg = result.config
    err_rows, vec_rows, time_rows = [], [], []
    for solver in cfg.solvers:
        mean_max = result.mean_max_error[solver]
        vectors = result.mean_vectors[solver]
        mean_iters = result.mean_iters[solver]
        walls = [r.wall_ms for r in result.runs[solver]]
        k_max = mean_max.shape[0]
        for k in range(k_max):
            err_rows.append((solver, k, mean_max[k], mean_iters))
            for n in range(vectors.shape[1]):
                vec_rows.append((solver, k, n + 1, vectors[k, n]))
            wk = [w[k] for w in walls if w.shape[0] > k]
            time_rows.append((solver, k, float(np.mean(wk)) if wk else np.nan))
    _write_csv(outdir / "errors.csv", ["solver", "k", "mean_max_error", "mean_iters_to_tol"], err_rows)
    _write_csv(outdir / "error_vectors.csv", ["solver", "k", "n", "mean_error"], vec_rows)
    _write_csv(outdir / "timings.csv", ["solver", "k", "mean_wall_ms"], time_rows)
    result.files += [str(outdir / f) for f in ("errors.csv", "error_vectors.csv", "timings.csv")]

    if cfg.store_per_sample:
        for solver in cfg.solvers:
            for run in result.runs[solver]:
                rows = [
                    (k, float(np.max(run.error_vectors[k])))
                    for k in range(run.error_vectors.shape[0])
                ]
                path = outdir / f"trace_{solver}_{run.sample_id:04d}.csv"
                _write_csv(path, ["k", "max_error"], rows)
                result.files.append(str(path))

    lines = ["experiment summary", "=" * 60]
    # execution-environment keys do not affect results and are omitted so
    # that the summary is reproducible byte for byte
    skip = {"outdir", "workers", "sweep_workers"}
    for key, val in sorted(config_as_dict(cfg).items()):
        if key not in skip:
            lines.append(f"{key} = {val}")
    lines.append("")
    for solver in cfg.solvers:
        n_fail = len(result.failures[solver])
        lines.append(
            f"{solver}: mean iterations to tol {result.mean_iters[solver]:.2f}, "
            f"failures {n_fail}/{len(result.eval_samples)}"
        )
        for sid, reason in result.failures[solver]:
            lines.append(f"  sample {sid}: {reason}")
    if result.surrogate is not None:
        s = result.surrogate
        lines.append(
            f"surrogate: {s.m_q} modes, degree {s.degree}, "
            f"max training reconstruction error {np.max(s.training_errors):.3e}"
        )
    (outdir / "summary.txt").write_text("\n".join(lines) + "\n")
    result.files.append(str(outdir / "summary.txt"))


def config_as_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        out[f.name] = ",".join(val) if isinstance(val, tuple) else val
    return out


def check_experiment(result: ExperimentResult) -> list:
    """Acceptance-relevant assertions on a finished run; returns a list of
    failure messages (empty means all checks passed)."""
    problems = []
    cfg = result.config
    for solver in cfg.solvers:
        frac = result.failure_fraction(solver)
        if frac > 0.10:
            problems.append(f"{solver}: {frac:.0%} of samples failed")
        for run in result.runs[solver]:
            if run.converged and run.final_error > cfg.tol:
                problems.append(
                    f"{solver} sample {run.sample_id}: converged but final error "
                    f"{run.final_error:.3e} above tol"
                )
    if "kle-pcgc" in cfg.solvers and "parareal" in cfg.solvers:
        kle = result.mean_max_error["kle-pcgc"]
        par = result.mean_max_error["parareal"]
        if kle.shape[0] > 1 and par.shape[0] > 1 and not kle[1] < par[1]:
            problems.append(
                f"surrogate initialization shows no early advantage: "
                f"mean error at k=1 is {kle[1]:.3e} vs parareal {par[1]:.3e}"
            )
    return problems


def report_contraction(cfg: ExperimentConfig) -> list:
    """Per-iteration contraction ratios in the spectral weighted norm against
    the theoretical per-eigenvalue bound, on a linear model.

    Ratios are asserted only for symmetric (pure diffusion) operators where
    the weighted-norm bound applies; rows carry an ``asserted`` marker.
    """
    cfg = cfg.resolved()
    model = cfg.make_model()
    if not model.is_linear:
        raise ConfigError(f"contraction report requires a linear model, got {cfg.model!r}")
    grid = cfg.make_grid()
    scfg = cfg.make_solver_config()
    master = RngStream(cfg.seed)
    _, eval_rng, init_root = master.split(3)
    samples = model.sample_parameters(cfg.eval_samples, eval_rng)
    streams = init_root.split(len(samples))

    rows = []
    for xi, rng in zip(samples, streams):
        spectrum = model_spectrum(model, xi, grid)
        bound = k_alpha_bound(spectrum.z, grid.n_fine_per_coarse, cfg.alpha)
        bound_classical = k_alpha_bound(spectrum.z, grid.n_fine_per_coarse, 0.0)
        reference = fine_reference(model, xi, grid, scfg)
        init = random_guess_init(model, xi, grid, rng)
        trace = pcgc_solve(
            model, xi, grid, scfg, init,
            reference=reference, stop_on="reference",
            store_states=True, raise_on_max=False,
        )
        werrs = [
            weighted_inf_norm(states - reference.states, spectrum.transform)
            for states in trace.states_history
        ]
        for k in range(1, len(werrs)):
            ratio = werrs[k] / werrs[k - 1] if werrs[k - 1] > 0 else np.nan
            rows.append(
                dict(
                    sample=xi.id, k=k, weighted_error=werrs[k], ratio=ratio,
                    bound=bound, bound_classical=bound_classical,
                    asserted=spectrum.symmetric and werrs[k - 1] > 1e-13,
                )
            )

    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        outdir / "contraction.csv",
        ["sample", "k", "weighted_error", "ratio", "bound", "bound_classical", "asserted"],
        [
            (r["sample"], r["k"], r["weighted_error"], r["ratio"], r["bound"],
             r["bound_classical"], str(r["asserted"]))
            for r in rows
        ],
    )
    return rows


def report_energy(cfg: ExperimentConfig, n_samples: int | None = None) -> list:
    """Free-energy decay along the fine reference (and the converged
    surrogate-initialized solution when enabled) for the phase-field model."""
    cfg = cfg.resolved()
    model = cfg.make_model()
    if not isinstance(model, AllenCahn1D):
        raise ConfigError("energy report is specific to the allen-cahn model")
    grid = cfg.make_grid()
    scfg = cfg.make_solver_config()
    master = RngStream(cfg.seed)
    train_rng, eval_rng, _ = master.split(3)
    count = n_samples if n_samples is not None else min(cfg.eval_samples, 5)
    samples = model.sample_parameters(count, eval_rng)

    surrogate = None
    if "kle-pcgc" in cfg.solvers:
        training = model.sample_parameters(cfg.train_samples, train_rng)
        surrogate = build_surrogate(
            model, grid, scfg, training, eps_kl=cfg.eps_kl,
            degree=cfg.gpc_degree, snapshot_method=cfg.snapshot_method,
        )

    rows = []
    for xi in samples:
        eps = float(xi.values[0])
        reference = fine_reference(model, xi, grid, scfg)
        states = [reference.initial] + list(reference.states)
        e_ref = [allencahn_energy(model.with_boundaries(u), eps, model.dx) for u in states]
        e_sol = [None] * len(e_ref)
        if surrogate is not None:
            init = surrogate_predict(surrogate, xi, model.initial_condition(xi))
            trace = pcgc_solve(
                model, xi, grid, scfg, init,
                reference=reference, stop_on="reference", raise_on_max=False,
                solver_name="kle-pcgc",
            )
            sol_states = [trace.trajectory.initial] + list(trace.trajectory.states)
            e_sol = [allencahn_energy(model.with_boundaries(u), eps, model.dx) for u in sol_states]
        for n in range(len(e_ref)):
            increase = e_ref[n] - e_ref[n - 1] if n else 0.0
            rows.append(
                dict(
                    sample=xi.id, n=n, t=grid.coarse_point(n),
                    energy_ref=e_ref[n], energy_solution=e_sol[n],
                    decay_violation=bool(increase > 1e-8),
                )
            )

    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_csv(
        outdir / "energy.csv",
        ["sample", "n", "t", "energy_ref", "energy_solution", "decay_violation"],
        [
            (r["sample"], r["n"], r["t"], r["energy_ref"], r["energy_solution"],
             str(r["decay_violation"]))
            for r in rows
        ],
    )
    return rows


def grid_info(cfg: ExperimentConfig) -> str:
    """Human-readable dump of the fully resolved configuration."""
    cfg = cfg.resolved()
    model = cfg.make_model()
    grid = cfg.make_grid()
    lines = [f"{key} = {val}" for key, val in sorted(config_as_dict(cfg).items())]
    lines.append(f"resolved: nx = {model.nx}, deltaT = {grid.deltaT!r}, deltat = {grid.deltat!r}")
    return "\n".join(lines)
