"""Command-line runner.

Exit status: 0 on success, 1 on a numeric failure (no convergence, singular
kernel, failed verification), 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import tempfile

import mpmath
import numpy as np
import scipy

from . import __version__
from .catalog import catalog_list, get_entry
from .config import ConfigError, RunConfig, config_hash, load_config, parse_config
from .fields import write_x_csv
from .linear_fbsde import (
    SingularKernelError,
    apriori_check,
    residual_check,
    solve_linear,
    uniqueness_probe,
)
from .mittag_leffler import MLEvaluationError, ml_bounds, ml_scalar
from .picard_solver import SpecViolationError, frozen_problem, solve_nonlinear
from .stochastic_core import GENERATOR_ID, RegressionBasis, Regressor, make_grid, sample_paths
from .volterra_equivalence import coincidence_check
from .weighted_norms import pair_norm

__all__ = ["COMMANDS", "main", "run"]

log = logging.getLogger("fracbsde")

COMMANDS = ("solve", "check-contraction", "verify-lemma", "coincidence", "ml-eval")
UNIQUENESS_JITTER = 1e-8


# ---- output helpers -------------------------------------------------------


def _fmt(v):
    if isinstance(v, float) or isinstance(v, np.floating):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "null"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_fmt(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__}")


def to_json(obj) -> str:
    """JSON with every float written to 17 significant digits."""
    return _fmt(obj) + "\n"


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_csv(path, writer_fn) -> None:
    # write to a temp file through a callback taking a file path
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    try:
        writer_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _x_summary_csv(x: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node", "component", "mean", "std"])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    for i in range(x.shape[1]):
        for c in range(x.shape[2]):
            writer.writerow([i, c, format(float(mean[i, c]), ".17g"), format(float(std[i, c]), ".17g")])
    return buf.getvalue()


def _meta(config: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "catalog": config.catalog_id,
        "config_hash": config_hash(config),
        "seed": config.seed,
        "generator": GENERATOR_ID,
        "versions": {
            "fracbsde": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mpmath": mpmath.__version__,
        },
    }


# ---- commands -------------------------------------------------------------


def _setup(config: RunConfig, workers: int):
    p = config.problem
    grid = make_grid(p.T, config.grid_steps)
    ens = sample_paths(grid, p.m, config.path_count, config.seed, workers=workers)
    basis = RegressionBasis(config.basis_degree)
    return ens, basis


def _reference(config, ens, x):
    if config.catalog_id is None:
        return None
    ref = get_entry(config.catalog_id).reference
    if ref is None:
        return None
    err = ref.error(x, ens)
    return {
        "description": ref.description,
        "provenance": ref.provenance,
        "metric": ref.metric,
        "tolerance": ref.tolerance,
        "error": err,
        "passed": bool(err <= ref.tolerance),
    }


def _cmd_solve(config, args, out):
    ens, basis = _setup(config, args.workers)
    pair, report = solve_nonlinear(config.problem, ens, basis, config.solver)
    norms = pair_norm(pair, ens.grid, config.problem.alpha, 0, verbose=args.verbose)
    body = report.to_dict()
    body["norms"] = norms.to_dict()
    body["reference"] = _reference(config, ens, pair.x)
    body.update(_meta(config, "solve"))
    _atomic_write(os.path.join(out, "solve_report.json"), to_json(body))
    _atomic_write(os.path.join(out, "x_summary.csv"), _x_summary_csv(pair.x))
    if args.dump_fields:
        _atomic_csv(os.path.join(out, "x_field.csv"), lambda p: write_x_csv(pair.x, p, args.dump_fields))
        _atomic_csv(os.path.join(out, "y_field.csv"), lambda p: pair.y.to_csv(p, args.dump_fields))
    print(f"converged={report.converged} iterations={report.iterations} contraction_lhs={report.contraction_lhs:.6g}")
    if args.verbose:
        print(f"distances={report.distances}")
        print(f"residual={report.final_residual:.3e} x(0) mean={pair.x[:, 0].mean(axis=0)}")
    return 0 if report.converged else 1


def _cmd_contraction(config, args, out):
    p = config.problem
    lhs = p.contraction_lhs()
    body = {
        "contraction_lhs": lhs,
        "contraction_ok": bool(lhs < 1.0),
        "lipschitz_c": p.c,
        "m_alpha_alpha": p.m_alpha_alpha(),
        "ml_bounds_note": "grid-sampled suprema; lower estimates of the true sup",
    }
    body.update(_meta(config, "check-contraction"))
    _atomic_write(os.path.join(out, "contraction_report.json"), to_json(body))
    print(f"contraction_lhs={lhs:.17g} ok={lhs < 1.0}")
    return 0


def _cmd_lemma(config, args, out):
    ens, basis = _setup(config, args.workers)
    p = config.problem
    reg = Regressor(ens, basis)
    problem = frozen_problem(p, None, ens, reg)
    mode = config.kernel_mode
    sol = solve_linear(problem, ens, basis, mode, reg)
    residual = residual_check(problem, sol.pair, ens, mode, sol.kernels)
    apriori = apriori_check(problem, sol.pair, ens, 0, regressor=reg)
    reg_b = Regressor(ens, basis, ridge=UNIQUENESS_JITTER)
    sol_b = solve_linear(frozen_problem(p, None, ens, reg_b), ens, basis, mode, reg_b, sol.kernels)
    probe = uniqueness_probe(sol.pair, sol_b.pair, ens)
    body = {
        "kernel_mode": mode.value,
        "residual": residual,
        "apriori": apriori.to_dict(),
        "uniqueness_probe": probe,
        "uniqueness_jitter": UNIQUENESS_JITTER,
        "reference": _reference(config, ens, sol.pair.x),
    }
    body.update(_meta(config, "verify-lemma"))
    _atomic_write(os.path.join(out, "lemma_report.json"), to_json(body))
    _atomic_write(os.path.join(out, "x_summary.csv"), _x_summary_csv(sol.pair.x))
    if args.dump_fields:
        _atomic_csv(os.path.join(out, "x_field.csv"), lambda q: write_x_csv(sol.pair.x, q, args.dump_fields))
        _atomic_csv(os.path.join(out, "y_field.csv"), lambda q: sol.pair.y.to_csv(q, args.dump_fields))
    print(f"residual={residual:.3e} apriori lhs={apriori.lhs:.6g} rhs={apriori.rhs:.6g} satisfied={apriori.satisfied}")
    if args.verbose:
        print(f"terms={apriori.terms} uniqueness_probe={probe:.3e}")
    return 0 if apriori.satisfied else 1


def _cmd_coincidence(config, args, out):
    ens, basis = _setup(config, args.workers)
    rep = coincidence_check(config.problem, ens, basis, config.solver)
    body = rep.to_dict()
    body.update(_meta(config, "coincidence"))
    _atomic_write(os.path.join(out, "coincidence_report.json"), to_json(body))
    print(f"sup_sq_gap={rep.sup_sq_gap:.6e} delta_admissible={rep.delta_admissible:.6g}")
    if args.verbose:
        for N, gap in rep.refinement_ladder:
            print(f"  N={N} gap={gap:.6e}")
    return 0


def _cmd_ml(config, args, out):
    p = config.problem
    alpha = p.alpha if args.alpha is None else args.alpha
    beta = 1.0 if args.beta is None else args.beta
    z = 1.0 if args.z is None else args.z
    value = ml_scalar(alpha, beta, z)
    bounds = ml_bounds(p.alpha, p.A, p.T)
    body = {
        "alpha": alpha,
        "beta": beta,
        "z": z,
        "value": value,
        "m_alpha": bounds.m_alpha,
        "m_alpha_alpha": bounds.m_alpha_alpha,
        "bound_grid_points": bounds.grid_points,
    }
    body.update(_meta(config, "ml-eval"))
    _atomic_write(os.path.join(out, "ml_eval.json"), to_json(body))
    print(f"E_{{{alpha},{beta}}}({z}) = {value:.17g}")
    print(f"M_alpha = {bounds.m_alpha:.17g}  M_alpha_alpha = {bounds.m_alpha_alpha:.17g}")
    return 0


_DISPATCH = {
    "solve": _cmd_solve,
    "check-contraction": _cmd_contraction,
    "verify-lemma": _cmd_lemma,
    "coincidence": _cmd_coincidence,
    "ml-eval": _cmd_ml,
}


def run(config: RunConfig, command: str, args=None) -> int:
    """Dispatch one command; returns the exit status."""
    if command not in _DISPATCH:
        raise ConfigError(f"unknown command {command!r}")
    args = args or build_parser().parse_args(["--command", command])
    try:
        return _DISPATCH[command](config, args, config.output_dir)
    except (SingularKernelError, MLEvaluationError, SpecViolationError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracbsde", description="Caputo fractional BSDE numerical laboratory")
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--command", choices=COMMANDS, help="what to run")
    ap.add_argument("--catalog", help="catalog problem id (replaces the [problem] section)")
    ap.add_argument("--verbose", action="store_true")
    ap.add_argument("--list-catalog", action="store_true", help="print the catalog and exit")
    ap.add_argument("--workers", type=int, default=1, help="threads for path generation")
    ap.add_argument("--dump-fields", type=int, default=0, metavar="PATHS", help="write full x/y CSVs for the first PATHS paths")
    ap.add_argument("--alpha", type=float, help="ml-eval: alpha (defaults to the problem's)")
    ap.add_argument("--beta", type=float, help="ml-eval: beta (default 1)")
    ap.add_argument("--z", type=float, help="ml-eval: argument (default 1)")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.list_catalog:
        for entry in catalog_list():
            print(to_json(entry.summary()), end="")
        return 0
    if args.command is None:
        print("error: --command is required", file=sys.stderr)
        return 2
    if args.workers < 1:
        print("config error: workers must be positive", file=sys.stderr)
        return 2
    try:
        if args.config:
            config = load_config(args.config, args.catalog)
        elif args.catalog:
            config = parse_config("", args.catalog)
        else:
            raise ConfigError("either --config or --catalog is required")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(config, args.command, args)


if __name__ == "__main__":
    sys.exit(main())
