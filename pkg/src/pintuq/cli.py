"""Command-line interface.

Subcommands: ``run`` (full experiment), ``surrogate`` (build and persist the
library only), ``contraction`` (spectral bound report), ``energy``
(phase-field decay report), ``grid-info`` (print the resolved
configuration). Every configuration key is available both in a flat
``key = value`` config file (--config) and as a flag; flags override the
file, and PINTUQ_OUTDIR overrides the output directory.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from .core import ConfigError, RngStream, SolverConfig
from .experiments import (
    ExperimentConfig,
    check_experiment,
    config_from_sources,
    grid_info,
    report_contraction,
    report_energy,
    run_experiment,
)
from .surrogate import build_surrogate, save_surrogate

_FLAG_TYPES = {
    "model": str, "outdir": str, "snapshot_method": str, "solvers": str,
    "h": float, "t_final": float, "alpha": float, "tol": float,
    "newton_tol": float, "eps_kl": float,
    "n_coarse": int, "n_fine": int, "max_iters": int, "eval_samples": int,
    "train_samples": int, "gpc_degree": int, "seed": int, "workers": int,
    "sweep_workers": int,
}
_BOOL_FLAGS = ("store_per_sample", "paper_scale")


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", metavar="FILE", help="flat key = value config file")
    for name, typ in _FLAG_TYPES.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    for name in _BOOL_FLAGS:
        parser.add_argument(
            f"--{name.replace('_', '-')}", dest=name, default=None,
            choices=("true", "false"),
        )


def _config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for f in fields(ExperimentConfig):
        val = getattr(args, f.name, None)
        if val is None:
            continue
        if f.name in _BOOL_FLAGS:
            val = val == "true"
        elif f.name == "solvers":
            val = tuple(s.strip() for s in val.split(",") if s.strip())
        overrides[f.name] = val
    return config_from_sources(args.config, overrides)


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result = run_experiment(cfg)
    print(f"wrote {len(result.files)} files to {result.config.outdir}")
    for solver in result.config.solvers:
        print(
            f"  {solver}: mean iterations {result.mean_iters[solver]:.2f}, "
            f"failures {len(result.failures[solver])}/{len(result.eval_samples)}"
        )
    worst = max(result.failure_fraction(s) for s in result.config.solvers)
    if args.check:
        problems = check_experiment(result)
        for p in problems:
            print(f"CHECK FAILED: {p}", file=sys.stderr)
        return 0 if not problems else 2
    return 0 if worst <= 0.10 else 1


def _cmd_surrogate(args) -> int:
    cfg = _config_from_args(args)
    model = cfg.make_model()
    grid = cfg.make_grid()
    scfg = cfg.make_solver_config()
    train_rng = RngStream(cfg.seed).split(3)[0]
    training = model.sample_parameters(cfg.train_samples, train_rng)
    s = build_surrogate(
        model, grid, scfg, training, eps_kl=cfg.eps_kl,
        degree=cfg.gpc_degree, snapshot_method=cfg.snapshot_method,
    )
    from pathlib import Path

    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"surrogate_{cfg.model}.npz"
    save_surrogate(s, path)
    print(
        f"surrogate written to {path}: {s.m_q} modes, degree {s.degree}, "
        f"max training reconstruction error {np.max(s.training_errors):.3e}"
    )
    return 0


def _cmd_contraction(args) -> int:
    cfg = _config_from_args(args)
    rows = report_contraction(cfg)
    violations = [
        r for r in rows if r["asserted"] and not r["ratio"] <= r["bound"] + 1e-6
    ]
    asserted = sum(1 for r in rows if r["asserted"])
    print(f"{len(rows)} iteration ratios ({asserted} asserted against the bound)")
    for r in violations:
        print(
            f"VIOLATION sample {r['sample']} k={r['k']}: ratio {r['ratio']:.6f} "
            f"> bound {r['bound']:.6f}",
            file=sys.stderr,
        )
    return 0 if not violations else 2


def _cmd_energy(args) -> int:
    cfg = _config_from_args(args)
    rows = report_energy(cfg, n_samples=args.samples)
    violations = [r for r in rows if r["decay_violation"]]
    print(f"energy table with {len(rows)} rows written")
    for r in violations:
        print(
            f"VIOLATION sample {r['sample']} n={r['n']}: energy increased",
            file=sys.stderr,
        )
    return 0 if not violations else 2


def _cmd_grid_info(args) -> int:
    print(grid_info(_config_from_args(args)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pintuq",
        description="parallel-in-time solvers with surrogate-accelerated coarse corrections",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="full experiment: surrogate, solvers, error tables")
    p_run.add_argument("--check", action="store_true",
                       help="exit nonzero unless all acceptance-relevant assertions hold")
    p_run.set_defaults(func=_cmd_run)

    p_sur = sub.add_parser("surrogate", help="build and persist the surrogate only")
    p_sur.set_defaults(func=_cmd_surrogate)

    p_con = sub.add_parser("contraction", help="measured ratios vs the spectral bound")
    p_con.set_defaults(func=_cmd_contraction)

    p_en = sub.add_parser("energy", help="free-energy decay report (allen-cahn)")
    p_en.add_argument("--samples", type=int, default=None)
    p_en.set_defaults(func=_cmd_energy)

    p_gi = sub.add_parser("grid-info", help="print the resolved configuration")
    p_gi.set_defaults(func=_cmd_grid_info)

    for p in (p_run, p_sur, p_con, p_en, p_gi):
        _add_config_flags(p)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
