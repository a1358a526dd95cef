"""Second-kind Volterra form and its agreement with the mild solution.

The Volterra form is

    x(t) = xi + 1/G(a) int_t^T (s-t)^(a-1) A x(s) ds
              + 1/G(a) int_t^T (s-t)^(a-1) f(s) ds
              + 1/G(a) int_t^T (s-t)^(a-1) [g + y](t, s) dw(s)

and is swept backward from t_N.  Cell integrals of the kernel are exact;
x and f are taken at the right end of each cell, so x(t_i) only needs
x(t_{i+1}), ..., x(t_N) and every node is an explicit update.  The
stochastic term uses the kernel value at the left node of each cell, and
the cell average on the first cell where the node value is infinite.

The sign of the A term is the one under which this form and the
Mittag-Leffler mild formula describe the same x: for a = 1 the mild formula
gives x(t) = e^{A(T-t)} xi, which solves x(t) = xi + int_t^T A x ds.  The
opposite sign is available as ``a_sign=-1`` and corresponds to the mild
formula with A replaced by -A.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import TriangularField
from .linear_fbsde import LinearProblem, _full_process
from .mittag_leffler import ml_bounds
from .picard_solver import ProblemSpec, SolverConfig, frozen_problem, solve_nonlinear
from .stochastic_core import PathEnsemble, RegressionBasis, Regressor, TimeGrid

__all__ = [
    "LADDER",
    "CoincidenceReport",
    "VolterraSolveConfig",
    "coincidence_check",
    "delta_condition",
    "sup_sq_gap",
    "solve_volterra",
]

LADDER = (16, 32, 64, 128)


@dataclass(frozen=True)
class VolterraSolveConfig:
    """Settings for the backward sweep.

    The sweep is explicit, so a single pass always completes; the
    tolerance and sweep count are validated and recorded for the report.
    """

    grid: TimeGrid
    linear_solver_tolerance: float = 1e-12
    max_backward_sweeps: int = 1

    def __post_init__(self):
        if not self.linear_solver_tolerance > 0:
            raise ValueError("linear_solver_tolerance must be positive")
        if self.max_backward_sweeps < 1:
            raise ValueError("max_backward_sweeps must be positive")


def _lag_weights(alpha, dt, N):
    lag = np.arange(N + 1)
    cell = ((lag[1:] ** alpha) - (lag[:-1] ** alpha)) * dt**alpha / alpha
    node = np.empty(N)
    node[0] = dt ** (alpha - 1) / alpha  # cell average next to the singularity
    node[1:] = (lag[1:N] * dt) ** (alpha - 1)
    return cell, node


def solve_volterra(
    problem: LinearProblem,
    y_field: TriangularField,
    ensemble: PathEnsemble,
    config: VolterraSolveConfig | None = None,
    a_sign: int = 1,
) -> np.ndarray:
    """Per-path x on the nodes, shape (P, N+1, n)."""
    if a_sign not in (1, -1):
        raise ValueError("a_sign must be +1 or -1")
    grid = ensemble.grid
    if config is not None and (config.grid.steps != grid.steps or config.grid.horizon != grid.horizon):
        raise ValueError("config grid does not match the ensemble")
    if problem.row_dependent:
        raise ValueError("the Volterra sweep needs a drift that does not depend on the row")
    alpha = problem.alpha
    N = grid.steps
    n = problem.n
    gam = math.gamma(alpha)
    cell, node = _lag_weights(alpha, grid.dt, N)
    f = _full_process(problem.drift(), N, n)
    dw = ensemble.increments
    field_ = y_field if problem.g_field is None else y_field + problem.g_field
    A = a_sign * problem.A
    x = np.empty((ensemble.path_count, N + 1, n))
    x[:, N] = problem.terminal
    for i in range(N - 1, -1, -1):
        w = cell[: N - i]  # cells j = i..N-1
        ahead = x[:, i + 1 :]
        det = np.einsum("j,pjn->pn", w, f[:, i + 1 :] + ahead @ A.T)
        vals = field_.values(i)
        sto = np.einsum("j,pjnm,pjm->pn", node[: N - i], vals, dw[:, i:])
        x[:, i] = problem.terminal + (det + sto) / gam
    return x


def sup_sq_gap(x_a: np.ndarray, x_b: np.ndarray) -> float:
    """sup over nodes of the sample E||x_a - x_b||^2."""
    return float(np.max(np.mean(np.sum((x_a - x_b) ** 2, axis=2), axis=0)))


def delta_condition(m: int, c: float, m_alpha_alpha: float, alpha: float, T: float) -> float:
    """Largest delta in (0, T] with
    4 m c M^2 T^{2a-1}/(2a-1) delta + 4 m c M^2 delta^{2a-1}/(2a-1) < 1.

    With c = 0 every delta is admissible and T is returned.
    """
    if not 0.5 < alpha < 1:
        raise ValueError(f"alpha must lie in (1/2,1), got {alpha}")
    if m < 1 or c < 0 or not T > 0:
        raise ValueError("need m >= 1, c >= 0 and T > 0")
    k = 4.0 * m * c * m_alpha_alpha**2 / (2 * alpha - 1)

    def lhs(d):
        return k * (T ** (2 * alpha - 1) * d + d ** (2 * alpha - 1))

    if k == 0.0 or lhs(T) < 1.0:
        return float(T)
    lo, hi = 0.0, float(T)
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if lhs(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class CoincidenceReport:
    sup_sq_gap: float
    delta_admissible: float
    refinement_ladder: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "sup_sq_gap": self.sup_sq_gap,
            "delta_admissible": self.delta_admissible,
            "ladder": [{"N": N, "gap": gap} for N, gap in self.refinement_ladder],
        }


def _gap_at(spec, ensemble, basis, solver_config):
    reg = Regressor(ensemble, basis)
    pair, _ = solve_nonlinear(spec, ensemble, basis, solver_config, reg)
    problem = frozen_problem(spec, pair, ensemble, reg)
    if problem.row_dependent:
        raise ValueError("coincidence check needs a drift without a y-coefficient")
    xv = solve_volterra(problem, pair.y, ensemble)
    return sup_sq_gap(xv, pair.x)


def coincidence_check(
    spec: ProblemSpec,
    ensemble: PathEnsemble,
    basis: RegressionBasis,
    config: SolverConfig | None = None,
    ladder=LADDER,
) -> CoincidenceReport:
    """Mild solution vs Volterra sweep fed with the mild y field.

    The gap on the ensemble's own grid is reported, and the same check is
    repeated on every ladder size that divides the ensemble's step count,
    using the coarsened paths.
    """
    config = config or SolverConfig()
    gap = _gap_at(spec, ensemble, basis, config)
    steps = ensemble.grid.steps
    rungs = []
    for N in ladder:
        if N > steps or steps % N:
            continue
        ens = ensemble if N == steps else ensemble.coarsen(steps // N)
        rungs.append((N, gap if N == steps else _gap_at(spec, ens, basis, config)))
    m_aa = ml_bounds(spec.alpha, spec.A, spec.T).m_alpha_alpha
    delta = delta_condition(spec.m, spec.c, m_aa, spec.alpha, spec.T)
    return CoincidenceReport(gap, delta, rungs)
