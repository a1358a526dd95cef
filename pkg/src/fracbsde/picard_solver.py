"""Picard iteration for the nonlinear equation with affine coefficients.

The map Psi freezes the drift and g at the current iterate and solves the
resulting linear problem.  Because the drift f(s, x(s), y(t, s)) depends
on the row t through y, a drift with a y-coefficient needs one kernel sweep
per row; a drift that only sees x is shared by all rows.
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import AdaptedPair, TriangularField
from .linear_fbsde import (
    AprioriReport,
    KernelReading,
    LagKernels,
    LinearProblem,
    apriori_check,
    apriori_constant,
    lag_kernels,
    residual_check,
    solve_linear,
)
from .mittag_leffler import ml_bounds, operator_norm
from .stochastic_core import PathEnsemble, RegressionBasis, Regressor
from .weighted_norms import pair_norm

__all__ = [
    "AffineDrift",
    "AffineG",
    "ContractionWarning",
    "InitialPair",
    "ProblemSpec",
    "SolveReport",
    "SolverConfig",
    "SpecViolationError",
    "TerminalPoly",
    "contraction_lhs",
    "frozen_problem",
    "psi_step",
    "solve_nonlinear",
]

log = logging.getLogger(__name__)

DRIFT_GUARD = 10.0


class SpecViolationError(ValueError):
    """A coefficient broke its declared Lipschitz envelope."""


class ContractionWarning(UserWarning):
    pass


def _mat(v, shape, name):
    a = np.zeros(shape) if v is None else np.asarray(v, dtype=float)
    if a.size != int(np.prod(shape)):
        raise ValueError(f"{name} needs {int(np.prod(shape))} entries, got {a.size}")
    a = a.reshape(shape)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True, eq=False)
class AffineDrift:
    """f(t, x, y) = F0 + F1 x + F2 vec(y), vec taken row-major."""

    F0: np.ndarray
    F1: np.ndarray
    F2: np.ndarray

    @classmethod
    def build(cls, n, m, F0=None, F1=None, F2=None):
        return cls(_mat(F0, (n,), "F0"), _mat(F1, (n, n), "F1"), _mat(F2, (n, n * m), "F2"))

    @property
    def lipschitz(self) -> float:
        return operator_norm(np.hstack([self.F1, self.F2])) ** 2

    @property
    def uses_x(self) -> bool:
        return bool(np.any(self.F1))

    @property
    def uses_y(self) -> bool:
        return bool(np.any(self.F2))


@dataclass(frozen=True, eq=False)
class AffineG:
    """g(t, s, x) = G0 + G1 x, with G1 x reshaped row-major to n x m."""

    G0: np.ndarray
    G1: np.ndarray

    @classmethod
    def build(cls, n, m, G0=None, G1=None):
        return cls(_mat(G0, (n, m), "G0"), _mat(G1, (n * m, n), "G1"))

    @property
    def lipschitz(self) -> float:
        return operator_norm(self.G1) ** 2

    @property
    def uses_x(self) -> bool:
        return bool(np.any(self.G1))


@dataclass(frozen=True, eq=False)
class TerminalPoly:
    """xi = c0 + c1 w(T) + c2 w(T)^2 with the square taken componentwise."""

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def build(cls, n, m, c0=None, c1=None, c2=None):
        return cls(_mat(c0, (n,), "c0"), _mat(c1, (n, m), "c1"), _mat(c2, (n, m), "c2"))

    def sample(self, ensemble: PathEnsemble) -> np.ndarray:
        wT = ensemble.values[:, -1, :]
        return self.c0 + wT @ self.c1.T + (wT**2) @ self.c2.T


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    alpha: float
    T: float
    n: int
    m: int
    A: np.ndarray
    f: AffineDrift
    g: AffineG
    xi: TerminalPoly
    lipschitz_c: float | None = None

    def __post_init__(self):
        errors = []
        if not 0.5 < self.alpha < 1:
            errors.append("alpha must lie in (1/2,1)")
        if not self.T > 0:
            errors.append("T must be positive")
        if self.n < 1 or self.m < 1:
            errors.append("n and m must be positive")
        if errors:
            raise ValueError("; ".join(errors))
        object.__setattr__(self, "A", _mat(self.A, (self.n, self.n), "A"))
        if self.lipschitz_c is not None:
            if not self.lipschitz_c >= 0:
                raise ValueError("lipschitz_c must be nonnegative")
            if self.lipschitz_c < self.computed_lipschitz * (1 - 1e-12):
                raise ValueError(
                    f"declared lipschitz_c {self.lipschitz_c} is below the value "
                    f"{self.computed_lipschitz} implied by the affine coefficients"
                )

    @property
    def computed_lipschitz(self) -> float:
        return max(self.f.lipschitz, self.g.lipschitz)

    @property
    def c(self) -> float:
        return self.computed_lipschitz if self.lipschitz_c is None else float(self.lipschitz_c)

    def m_alpha_alpha(self) -> float:
        return ml_bounds(self.alpha, self.A, self.T).m_alpha_alpha

    def contraction_lhs(self) -> float:
        return contraction_lhs(self.c, self.m_alpha_alpha(), self.alpha, self.T)


def contraction_lhs(c: float, m_alpha_alpha: float, alpha: float, T: float) -> float:
    """8 c M^2 (T^{2a}/a^2 + (2T)^{2a}/(a(2a-1))) T."""
    if not 0.5 < alpha < 1:
        raise ValueError(f"alpha must lie in (1/2,1), got {alpha}")
    return 8.0 * c * m_alpha_alpha**2 * apriori_constant(alpha, T) * T


class InitialPair(str, enum.Enum):
    ZERO = "zero"
    LINEAR = "linear"


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    tolerance: float = 1e-3
    initial_pair: InitialPair = InitialPair.LINEAR
    kernel_mode: KernelReading = KernelReading.KERNEL

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        object.__setattr__(self, "initial_pair", InitialPair(self.initial_pair))
        object.__setattr__(self, "kernel_mode", KernelReading(self.kernel_mode))


@dataclass
class SolveReport:
    contraction_lhs: float
    contraction_ok: bool
    iterations: int = 0
    distances: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False
    final_residual: float = float("nan")
    apriori: AprioriReport | None = None
    lipschitz_c: float = 0.0
    m_alpha_alpha: float = 0.0

    def to_dict(self) -> dict:
        return {
            "contraction_lhs": self.contraction_lhs,
            "contraction_ok": self.contraction_ok,
            "iterations": self.iterations,
            "distances": list(self.distances),
            "ratios": list(self.ratios),
            "converged": self.converged,
            "residual": self.final_residual,
            "apriori": None if self.apriori is None else self.apriori.to_dict(),
            "lipschitz_c": self.lipschitz_c,
            "m_alpha_alpha": self.m_alpha_alpha,
        }


def _g_field(spec: ProblemSpec, x_bar, reg: Regressor) -> TriangularField:
    N = reg.ensemble.grid.steps
    if not spec.g.uses_x:
        return TriangularField.constant(reg, spec.g.G0)
    coef = np.zeros((N, N, reg.size, spec.n, spec.m))
    for j in range(N):
        vals = spec.g.G0 + (x_bar[:, j] @ spec.g.G1.T).reshape(-1, spec.n, spec.m)
        coef[: j + 1, j] = reg.project(j, vals)
    return TriangularField(reg, coef)


def _guard(spec: ProblemSpec, f_vals, x, y):
    # linear-growth envelope ||f(0,0)|| + sqrt(c (|x|^2 + |y|^2))
    env = np.linalg.norm(spec.f.F0) + np.sqrt(spec.c * (np.sum(x**2, axis=-1) + y))
    norm = np.linalg.norm(f_vals, axis=-1)
    if np.any(norm > DRIFT_GUARD * env + 1e-12):
        raise SpecViolationError("evaluated drift exceeds ten times its Lipschitz envelope")


def frozen_problem(spec: ProblemSpec, pair_bar: AdaptedPair | None, ensemble: PathEnsemble, reg: Regressor) -> LinearProblem:
    """Linear problem with f and g frozen at the pair (None means x = 0, y = 0)."""
    P = ensemble.path_count
    N = ensemble.grid.steps
    n, m = spec.n, spec.m
    xi = spec.xi.sample(ensemble)
    if pair_bar is None:
        g = TriangularField.constant(reg, spec.g.G0)
        f = np.broadcast_to(spec.f.F0, (P, 1, n))
        return LinearProblem(spec.alpha, spec.T, spec.A, xi, f, g)
    x_bar = pair_bar.x
    g = _g_field(spec, x_bar, reg)
    base = spec.f.F0 + x_bar @ spec.f.F1.T  # (P, N+1, n)
    if not spec.f.uses_y:
        _guard(spec, base, x_bar, 0.0)
        return LinearProblem(spec.alpha, spec.T, spec.A, xi, base, g)

    y_bar = pair_bar.y

    def row(i):
        # node k > i sees the y value of cell k-1 in row i
        out = base.copy()
        yv = y_bar.values(i).reshape(P, N - i, n * m)
        out[:, i + 1 :] += yv @ spec.f.F2.T
        _guard(spec, out[:, i + 1 :], x_bar[:, i + 1 :], np.sum(yv**2, axis=-1))
        return out

    return LinearProblem(spec.alpha, spec.T, spec.A, xi, base, g, f_row=row)


def psi_step(
    spec: ProblemSpec,
    pair_in: AdaptedPair | None,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    mode: KernelReading | str = KernelReading.KERNEL,
    regressor: Regressor | None = None,
    kernels: LagKernels | None = None,
) -> AdaptedPair:
    reg = regressor or (pair_in.y.regressor if pair_in is not None else Regressor(ensemble, basis))
    kern = kernels or lag_kernels(spec.alpha, spec.A, spec.T, ensemble.grid.steps)
    problem = frozen_problem(spec, pair_in, ensemble, reg)
    return solve_linear(problem, ensemble, basis, mode, reg, kern).pair


def _zero_pair(spec, reg):
    P = reg.P
    N = reg.ensemble.grid.steps
    return AdaptedPair(np.zeros((P, N + 1, spec.n)), TriangularField.zeros(reg, spec.n, spec.m))


def solve_nonlinear(
    spec: ProblemSpec,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    config: SolverConfig | None = None,
    regressor: Regressor | None = None,
) -> tuple[AdaptedPair, SolveReport]:
    config = config or SolverConfig()
    grid = ensemble.grid
    reg = regressor or Regressor(ensemble, basis)
    kern = lag_kernels(spec.alpha, spec.A, spec.T, grid.steps)
    m_aa = spec.m_alpha_alpha()
    lhs = contraction_lhs(spec.c, m_aa, spec.alpha, spec.T)
    report = SolveReport(lhs, lhs < 1.0, lipschitz_c=spec.c, m_alpha_alpha=m_aa)
    if not report.contraction_ok:
        warnings.warn(
            f"contraction condition fails (lhs = {lhs:.4g}); convergence is not guaranteed",
            ContractionWarning,
            stacklevel=2,
        )
    mode = config.kernel_mode
    if config.initial_pair is InitialPair.ZERO:
        pair = _zero_pair(spec, reg)
    else:
        pair = psi_step(spec, None, ensemble, basis, mode, reg, kern)

    problem = None
    for it in range(1, config.max_iterations + 1):
        problem = frozen_problem(spec, pair, ensemble, reg)
        new = solve_linear(problem, ensemble, basis, mode, reg, kern).pair
        dist = pair_norm(new - pair, grid, spec.alpha, 0).pair_norm_sq
        if report.distances and report.distances[-1] > 0:
            report.ratios.append(dist / report.distances[-1])
        report.distances.append(dist)
        report.iterations = it
        log.info("iteration %d: distance %.3e", it, dist)
        pair = new
        if dist <= config.tolerance:
            report.converged = True
            break

    report.final_residual = residual_check(problem, pair, ensemble, mode, kern)
    report.apriori = apriori_check(problem, pair, ensemble, 0, regressor=reg)
    return pair, report
