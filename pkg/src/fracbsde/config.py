"""Run configuration: strict TOML parsing, validation and serialization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import tomli
import tomli_w

from .catalog import get_entry
from .linear_fbsde import KernelReading
from .picard_solver import AffineDrift, AffineG, InitialPair, ProblemSpec, SolverConfig, TerminalPoly

__all__ = ["ConfigError", "RunConfig", "config_hash", "load_config", "parse_config", "serialize_config"]

DEFAULT_STEPS = 64
DEFAULT_PATHS = 10_000
DEFAULT_DEGREE = 2
DEFAULT_TOLERANCE = 1e-3

_SECTIONS = {
    "problem": {"catalog", "alpha", "T", "n", "m", "A", "f", "g", "xi", "lipschitz_c"},
    "grid": {"steps"},
    "monte_carlo": {"paths", "basis_degree", "seed"},
    "solver": {"max_iterations", "tolerance", "kernel_mode", "initial_pair"},
    "output": {"dir"},
}
_SUBKEYS = {
    "f": {"kind", "F0", "F1", "F2"},
    "g": {"kind", "G0", "G1"},
    "xi": {"c0", "c1", "c2"},
}


class ConfigError(ValueError):
    """Bad configuration; the message lists every problem found."""


@dataclass(frozen=True, eq=False)
class RunConfig:
    problem: ProblemSpec
    catalog_id: str | None = None
    grid_steps: int = DEFAULT_STEPS
    path_count: int = DEFAULT_PATHS
    basis_degree: int = DEFAULT_DEGREE
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: str = "fracbsde-out"

    @property
    def kernel_mode(self) -> KernelReading:
        return self.solver.kernel_mode

    def to_dict(self) -> dict:
        p = self.problem
        problem = {
            "alpha": p.alpha,
            "T": p.T,
            "n": p.n,
            "m": p.m,
            "A": _flat(p.A),
            "f": {"kind": "affine", "F0": _flat(p.f.F0), "F1": _flat(p.f.F1), "F2": _flat(p.f.F2)},
            "g": {"kind": "affine", "G0": _flat(p.g.G0), "G1": _flat(p.g.G1)},
            "xi": {"c0": _flat(p.xi.c0), "c1": _flat(p.xi.c1), "c2": _flat(p.xi.c2)},
        }
        if self.catalog_id is not None:
            problem["catalog"] = self.catalog_id
        if p.lipschitz_c is not None:
            problem["lipschitz_c"] = float(p.lipschitz_c)
        return {
            "problem": problem,
            "grid": {"steps": self.grid_steps},
            "monte_carlo": {"paths": self.path_count, "basis_degree": self.basis_degree, "seed": self.seed},
            "solver": {
                "max_iterations": self.solver.max_iterations,
                "tolerance": self.solver.tolerance,
                "kernel_mode": self.solver.kernel_mode.value,
                "initial_pair": self.solver.initial_pair.value,
            },
            "output": {"dir": self.output_dir},
        }

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.to_dict() == other.to_dict()


def _flat(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _numbers(value, key, errors):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return [float(value)]
    if isinstance(value, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        return [float(v) for v in value]
    errors.append(f"{key} must be a number or a list of numbers")
    return None


def _check_keys(doc, errors):
    for name, body in doc.items():
        if name not in _SECTIONS:
            errors.append(f"unknown section [{name}]")
            continue
        if not isinstance(body, dict):
            errors.append(f"[{name}] must be a table")
            continue
        for key, value in body.items():
            if key not in _SECTIONS[name]:
                errors.append(f"unknown key {name}.{key}")
            elif name == "problem" and key in _SUBKEYS:
                if not isinstance(value, dict):
                    errors.append(f"problem.{key} must be a table")
                    continue
                for sub in value:
                    if sub not in _SUBKEYS[key]:
                        errors.append(f"unknown key problem.{key}.{sub}")


def _int(section, key, default, errors, positive=True):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        errors.append(f"{key} must be an integer")
        return default
    if positive and value < 1:
        errors.append(f"{key} must be positive, got {value}")
    return value


def _build_problem(sec, errors):
    base = None
    cat = sec.get("catalog")
    if cat is not None:
        try:
            base = get_entry(str(cat)).problem
        except KeyError as exc:
            errors.append(str(exc.args[0]))
    get = lambda k, d: sec.get(k, d)  # noqa: E731
    alpha = get("alpha", base.alpha if base else None)
    T = get("T", base.T if base else None)
    n = get("n", base.n if base else 1)
    m = get("m", base.m if base else 1)
    if alpha is None:
        errors.append("problem.alpha is required without a catalog id")
    elif not isinstance(alpha, (int, float)) or not 0.5 < alpha < 1:
        errors.append("alpha must lie in (1/2,1)")
    if T is None:
        errors.append("problem.T is required without a catalog id")
    elif not isinstance(T, (int, float)) or not T > 0:
        errors.append("T must be positive")
    for key, v in (("n", n), ("m", m)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            errors.append(f"problem.{key} must be a positive integer")
    if errors:
        return None

    def arr(value, default, shape, key):
        if value is None:
            return default if default is not None else np.zeros(shape)
        vals = _numbers(value, key, errors)
        if vals is None:
            return np.zeros(shape)
        if len(vals) != int(np.prod(shape)):
            errors.append(f"{key} needs {int(np.prod(shape))} entries, got {len(vals)}")
            return np.zeros(shape)
        return np.array(vals).reshape(shape)

    same_dims = base is not None and base.n == n and base.m == m
    A = arr(sec.get("A"), base.A if same_dims else None, (n, n), "problem.A")

    fsec = sec.get("f", {})
    kind = fsec.get("kind", "affine")
    if kind not in ("affine", "zero"):
        errors.append(f"problem.f.kind must be 'affine' or 'zero', got {kind!r}")
    bf = base.f if same_dims and "f" not in sec else None
    F0 = arr(fsec.get("F0"), bf.F0 if bf else None, (n,), "problem.f.F0")
    F1 = arr(fsec.get("F1"), bf.F1 if bf else None, (n, n), "problem.f.F1")
    F2 = arr(fsec.get("F2"), bf.F2 if bf else None, (n, n * m), "problem.f.F2")
    if kind == "zero" and (np.any(F0) or np.any(F1) or np.any(F2)):
        errors.append("problem.f.kind = 'zero' but coefficients are nonzero")

    gsec = sec.get("g", {})
    kind = gsec.get("kind", "affine")
    if kind not in ("affine", "zero"):
        errors.append(f"problem.g.kind must be 'affine' or 'zero', got {kind!r}")
    bg = base.g if same_dims and "g" not in sec else None
    G0 = arr(gsec.get("G0"), bg.G0 if bg else None, (n, m), "problem.g.G0")
    G1 = arr(gsec.get("G1"), bg.G1 if bg else None, (n * m, n), "problem.g.G1")
    if kind == "zero" and (np.any(G0) or np.any(G1)):
        errors.append("problem.g.kind = 'zero' but coefficients are nonzero")

    xsec = sec.get("xi", {})
    bx = base.xi if same_dims and "xi" not in sec else None
    c0 = arr(xsec.get("c0"), bx.c0 if bx else None, (n,), "problem.xi.c0")
    c1 = arr(xsec.get("c1"), bx.c1 if bx else None, (n, m), "problem.xi.c1")
    c2 = arr(xsec.get("c2"), bx.c2 if bx else None, (n, m), "problem.xi.c2")

    lip = sec.get("lipschitz_c", base.lipschitz_c if base else None)
    if lip is not None and (isinstance(lip, bool) or not isinstance(lip, (int, float))):
        errors.append("problem.lipschitz_c must be a number")
        lip = None
    if errors:
        return None
    try:
        return ProblemSpec(
            float(alpha),
            float(T),
            n,
            m,
            A,
            AffineDrift.build(n, m, F0, F1, F2),
            AffineG.build(n, m, G0, G1),
            TerminalPoly.build(n, m, c0, c1, c2),
            None if lip is None else float(lip),
        )
    except ValueError as exc:
        errors.append(str(exc))
        return None


def parse_config(text: str, catalog_override: str | None = None) -> RunConfig:
    """Parse and validate a TOML document; every problem is reported at once."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"parse error: {exc}") from None
    errors: list[str] = []
    _check_keys(doc, errors)
    psec = dict(doc.get("problem", {}) or {})
    if catalog_override is not None:
        psec = {"catalog": catalog_override}
    if not psec:
        errors.append("a [problem] section or a catalog id is required")
    grid = doc.get("grid", {})
    mc = doc.get("monte_carlo", {})
    sol = doc.get("solver", {})
    out = doc.get("output", {})
    if errors:
        raise ConfigError("; ".join(errors))

    problem = _build_problem(psec, errors)
    steps = _int(grid, "steps", DEFAULT_STEPS, errors)
    if isinstance(steps, int) and 0 < steps < 2:
        errors.append("steps must be at least 2")
    paths = _int(mc, "paths", DEFAULT_PATHS, errors)
    degree = _int(mc, "basis_degree", DEFAULT_DEGREE, errors, positive=False)
    if isinstance(degree, int) and degree < 0:
        errors.append("basis_degree must be nonnegative")
    seed = _int(mc, "seed", 0, errors, positive=False)
    if isinstance(seed, int) and not 0 <= seed < 2**64:
        errors.append("seed must lie in [0, 2^64)")
    max_it = _int(sol, "max_iterations", 20, errors)
    tol = sol.get("tolerance", DEFAULT_TOLERANCE)
    if isinstance(tol, bool) or not isinstance(tol, (int, float)) or not tol > 0:
        errors.append("tolerance must be a positive number")
    mode = sol.get("kernel_mode", KernelReading.KERNEL.value)
    if mode not in {k.value for k in KernelReading}:
        errors.append(f"kernel_mode must be one of KernelForm, ProofForm; got {mode!r}")
    init = sol.get("initial_pair", InitialPair.LINEAR.value)
    if init not in {k.value for k in InitialPair}:
        errors.append(f"initial_pair must be 'zero' or 'linear'; got {init!r}")
    out_dir = out.get("dir", "fracbsde-out")
    if not isinstance(out_dir, str) or not out_dir:
        errors.append("output.dir must be a nonempty string")
    if errors:
        raise ConfigError("; ".join(errors))
    return RunConfig(
        problem,
        psec.get("catalog"),
        steps,
        paths,
        degree,
        seed,
        SolverConfig(max_it, float(tol), InitialPair(init), KernelReading(mode)),
        out_dir,
    )


def load_config(path, catalog_override: str | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), catalog_override)


def serialize_config(config: RunConfig) -> str:
    return tomli_w.dumps(config.to_dict())


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the canonical document without the output directory."""
    doc = config.to_dict()
    doc.pop("output")
    return hashlib.sha256(tomli_w.dumps(doc).encode()).hexdigest()
