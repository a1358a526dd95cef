"""Time grids, Brownian ensembles and regression-based conditional expectations.

Conditional expectations given the Brownian history up to a node are
approximated by least squares on polynomials of the current Brownian state
(Longstaff-Schwartz style).  Every regression result lives in the span of the
node's basis, so estimates are stored as coefficient arrays and evaluated per
path only when needed.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

__all__ = [
    "GENERATOR_ID",
    "MartingaleKernels",
    "PathEnsemble",
    "RegressionBasis",
    "RegressionResult",
    "RegressionWarning",
    "Regressor",
    "TimeGrid",
    "conditional_expectation",
    "fit_conditional",
    "integrand_coefficients",
    "kernel_coefficients",
    "make_grid",
    "process_energy",
    "martingale_integrand",
    "representation_kernel_K",
    "sample_paths",
]

GENERATOR_ID = "numpy.random.Philox/SeedSequence(seed, block)"
BLOCK_SIZE = 2048

_COND_LIMIT = 1e12
_RIDGE_SCALE = 1e-10


class RegressionWarning(UserWarning):
    """Normal equations were rank deficient and a ridge term was added."""


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.steps < 2:
            raise ValueError("a grid needs at least 2 steps")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def nodes(self) -> np.ndarray:
        # i*T/N rather than cumulative sums so that t_N == T exactly
        return self.horizon * np.arange(self.steps + 1) / self.steps


def make_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(float(T), int(N))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """P Brownian paths of dimension m on a uniform grid.

    ``values`` has shape (P, N+1, m) and starts at zero on every path.
    """

    grid: TimeGrid
    brownian_dim: int
    path_count: int
    seed: int
    values: np.ndarray = field(repr=False)

    @property
    def increments(self) -> np.ndarray:
        """(P, N, m) array of w(t_{j+1}) - w(t_j)."""
        return np.diff(self.values, axis=1)

    def coarsen(self, factor: int) -> "PathEnsemble":
        """Same paths observed on every ``factor``-th node."""
        if self.grid.steps % factor:
            raise ValueError(f"{self.grid.steps} steps are not divisible by {factor}")
        grid = TimeGrid(self.grid.horizon, self.grid.steps // factor)
        return PathEnsemble(
            grid, self.brownian_dim, self.path_count, self.seed, self.values[:, ::factor].copy()
        )

    def to_csv(self, path, max_paths: int | None = None) -> None:
        """Write ``path,node,component,value`` rows."""
        count = self.path_count if max_paths is None else min(max_paths, self.path_count)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "node", "component", "value"])
            for p in range(count):
                for i in range(self.grid.steps + 1):
                    for c in range(self.brownian_dim):
                        writer.writerow([p, i, c, f"{self.values[p, i, c]:.17g}"])


def _block_normals(seed, block, rows, steps, m):
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, block])
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((rows, steps, m))


def sample_paths(grid: TimeGrid, m: int, P: int, seed: int, workers: int = 1) -> PathEnsemble:
    """Sample a reproducible Brownian ensemble.

    Paths are generated in fixed blocks of ``BLOCK_SIZE``, each with its own
    Philox stream keyed by (seed, block index), so the result does not depend
    on ``workers``.
    """
    if m < 1 or P < 1:
        raise ValueError("brownian dimension and path count must be positive")
    N = grid.steps
    starts = list(range(0, P, BLOCK_SIZE))

    def gen(start):
        rows = min(BLOCK_SIZE, P - start)
        return _block_normals(int(seed), start // BLOCK_SIZE, rows, N, m)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(gen, starts))
    else:
        blocks = [gen(s) for s in starts]
    dw = np.concatenate(blocks, axis=0) * math.sqrt(grid.dt)
    values = np.zeros((P, N + 1, m))
    np.cumsum(dw, axis=1, out=values[:, 1:])
    return PathEnsemble(grid, m, P, int(seed), values)


@dataclass(frozen=True)
class RegressionBasis:
    """Monomials of total degree <= ``degree`` in the current Brownian state."""

    degree: int = 2
    kind: str = "polynomial"

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be nonnegative")
        if self.kind != "polynomial":
            raise ValueError(f"unknown basis kind {self.kind!r}")

    def exponents(self, m: int) -> list[tuple[int, ...]]:
        out = []
        for total in range(self.degree + 1):
            for combo in itertools.product(range(total + 1), repeat=m):
                if sum(combo) == total:
                    out.append(combo)
        return out

    def size(self, m: int) -> int:
        return math.comb(self.degree + m, m)


@dataclass
class _NodeFactor:
    cho: tuple | None
    gram: np.ndarray  # normal matrix / P
    ridge: float
    rank_deficient: bool
    active: np.ndarray | None = None


def _factorize(normal, extra_ridge, label):
    size = normal.shape[0]
    scale = np.trace(normal) / size
    eig = np.linalg.eigvalsh(normal)
    deficient = bool(eig[0] <= eig[-1] / _COND_LIMIT)
    ridge = extra_ridge * scale
    if deficient:
        ridge += _RIDGE_SCALE * scale
        warnings.warn(
            f"rank-deficient normal equations at {label}; ridge {ridge:.3e} added",
            RegressionWarning,
            stacklevel=4,
        )
    cho = linalg.cho_factor(normal + ridge * np.eye(size))
    return cho, ridge, deficient


class Regressor:
    """Least-squares projections onto the basis at each grid node.

    Features are monomials of w(t_j)/sqrt(t_j); this spans the same space as
    monomials of w(t_j) but keeps the normal equations well scaled.  At node 0
    the Brownian state is zero and only the constant survives, so the
    projection is the sample mean.
    """

    def __init__(self, ensemble: PathEnsemble, basis: RegressionBasis, ridge: float = 0.0):
        self.ensemble = ensemble
        self.basis = basis
        self.extra_ridge = float(ridge)
        self.exponents = np.array(basis.exponents(ensemble.brownian_dim), dtype=int)
        self.size = len(self.exponents)
        self._factors: dict[int, _NodeFactor] = {}
        self._joint_factors: dict[int, _NodeFactor] = {}

    @property
    def P(self) -> int:
        return self.ensemble.path_count

    @property
    def ridges(self) -> dict[int, float]:
        return {j: f.ridge for j, f in sorted(self._factors.items()) if f.ridge}

    def design(self, j: int) -> np.ndarray:
        P = self.P
        X = np.zeros((P, self.size))
        X[:, 0] = 1.0
        if j == 0 or self.size == 1:
            return X
        z = self.ensemble.values[:, j, :] / math.sqrt(self.ensemble.grid.nodes[j])
        for col, exps in enumerate(self.exponents[1:], start=1):
            v = np.ones(P)
            for comp, e in enumerate(exps):
                if e:
                    v = v * z[:, comp] ** e
            X[:, col] = v
        return X

    def factor(self, j: int) -> _NodeFactor:
        fac = self._factors.get(j)
        if fac is None:
            if j == 0:
                gram = np.zeros((self.size, self.size))
                gram[0, 0] = 1.0
                fac = _NodeFactor(None, gram, 0.0, False)
            else:
                X = self.design(j)
                normal = X.T @ X
                cho, ridge, deficient = _factorize(normal, self.extra_ridge, f"node {j}")
                fac = _NodeFactor(cho, normal / self.P, ridge, deficient)
            self._factors[j] = fac
        return fac

    def gram(self, j: int) -> np.ndarray:
        return self.factor(j).gram

    def project(self, j: int, Y: np.ndarray) -> np.ndarray:
        """Coefficients of the projection of Y (shape (P, ...)) at node j.

        Returns an array of shape (basis size, ...).  Columns that are the
        same on every path are reproduced exactly.
        """
        Y = np.asarray(Y, dtype=float)
        tail = Y.shape[1:]
        flat = Y.reshape(self.P, -1)
        const = np.all(flat == flat[:1], axis=0)
        coef = np.zeros((self.size, flat.shape[1]))
        free = ~const
        if free.any():
            if j == 0:
                coef[0, free] = flat[:, free].mean(axis=0)
            else:
                fac = self.factor(j)
                X = self.design(j)
                coef[:, free] = linalg.cho_solve(fac.cho, X.T @ flat[:, free])
        coef[0, const] = flat[0, const]
        return coef.reshape((self.size,) + tail)

    def evaluate(self, j: int, coef: np.ndarray) -> np.ndarray:
        coef = np.asarray(coef, dtype=float)
        tail = coef.shape[1:]
        flat = coef.reshape(self.size, -1)
        if j == 0 or not np.any(flat[1:]):
            out = np.broadcast_to(flat[0], (self.P, flat.shape[1])).copy()
        else:
            out = self.design(j) @ flat
        return out.reshape((self.P,) + tail)

    def mean_square(self, j: int, coef: np.ndarray) -> float:
        """Sample mean over paths of the squared Euclidean norm of X_j coef."""
        flat = np.asarray(coef, dtype=float).reshape(self.size, -1)
        return float(np.einsum("ac,ab,bc->", flat, self.gram(j), flat))

    def joint_factor(self, j: int) -> _NodeFactor:
        """Factor for the joint design [phi(w_j), phi(w_j) dw_j] at node j.

        At node 0 the Brownian state is zero, so only the constant and the
        plain increments remain.
        """
        fac = self._joint_factors.get(j)
        if fac is None:
            Z = self._joint_design(j)
            normal = Z.T @ Z
            cho, ridge, deficient = _factorize(normal, self.extra_ridge, f"node {j}")
            fac = _NodeFactor(cho, normal / self.P, ridge, deficient)
            self._joint_factors[j] = fac
        return fac

    def _joint_design(self, j):
        X = self.design(j)
        if j == 0:
            X = X[:, :1]
        dw = self.ensemble.increments[:, j, :]
        Z = (X[:, :, None] * dw[:, None, :]).reshape(self.P, -1)
        return np.hstack([X, Z])

    def project_joint(self, j: int, Y: np.ndarray):
        """Fit Y ~ M(w_j) + L(w_j) dw_j jointly by least squares.

        ``Y`` has shape (P, ...).  Returns ``(cond, L)`` with shapes
        (basis size, ...) and (basis size, ..., m).  M is the estimate of
        E{Y | F_j} and L the integrand of the increment over [t_j, t_{j+1}).
        Columns that are the same on every path give M = that value and
        L = 0 exactly.
        """
        Y = np.asarray(Y, dtype=float)
        tail = Y.shape[1:]
        m = self.ensemble.brownian_dim
        flat = Y.reshape(self.P, -1)
        cols = flat.shape[1]
        cond = np.zeros((self.size, cols))
        L = np.zeros((self.size, m, cols))
        const = np.all(flat == flat[:1], axis=0)
        cond[0, const] = flat[0, const]
        free = ~const
        if free.any():
            fac = self.joint_factor(j)
            Z = self._joint_design(j)
            sol = linalg.cho_solve(fac.cho, Z.T @ flat[:, free])
            k = 1 if j == 0 else self.size
            cond[:k, free] = sol[:k]
            L[:k, :, free] = sol[k:].reshape(k, m, -1)
        L = np.moveaxis(L, 1, -1)
        return cond.reshape((self.size,) + tail), L.reshape((self.size,) + tail + (m,))

    def increment(self, j: int, l_coef: np.ndarray) -> np.ndarray:
        """Per-path L(w_j) dw_j for coefficients of shape (b, ..., m)."""
        vals = self.evaluate(j, l_coef)
        dw = self.ensemble.increments[:, j, :]
        return np.einsum("p...m,pm->p...", vals, dw)


def _as_paths(a, P):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] != P:
        raise ValueError("array must have one row per path")
    return a


def integrand_coefficients(reg: Regressor, target: np.ndarray, stop: int = 0):
    """Backward joint regression for an F_T-measurable target.

    Starting from Y_N = target, node j fits Y_{j+1} ~ M_j(w_j) + L_j(w_j) dw_j
    and then sets Y_j = Y_{j+1} - L_j dw_j.  Subtracting the increments already
    explained keeps the regression noise from piling up along the sweep.
    Returns ``(cond, L)`` with shapes (N, b, n) and (N, b, n, m); only nodes
    j >= stop are filled.
    """
    ens = reg.ensemble
    N = ens.grid.steps
    target = _as_paths(target, reg.P)
    n = target.shape[1]
    cond = np.zeros((N, reg.size, n))
    out = np.zeros((N, reg.size, n, ens.brownian_dim))
    Y = target.copy()
    for j in range(N - 1, stop - 1, -1):
        cond[j], out[j] = reg.project_joint(j, Y)
        Y = Y - reg.increment(j, out[j])
    return cond, out


def kernel_coefficients(reg: Regressor, process: np.ndarray, first: int = 0):
    """Conditional-expectation and K-kernel coefficients of an adapted process.

    ``process`` has shape (P, N+1, n); the value at node k is f(s_k).
    Returns ``(cond, K)`` where ``cond[j, k]`` (shape (N+1, N+1, b, n)) holds
    the coefficients of E{f(s_k) | F_j} for k > j and ``K[k, j]`` (shape
    (N+1, N, b, n, m)) those of K(s_k, u_j) for j < k.  Only nodes j >= first
    are filled; everything else stays zero, in particular K(s, u) for u >= s.
    Each f(s_k) gets the same backward sweep as in ``integrand_coefficients``,
    started at node k.
    """
    ens = reg.ensemble
    N = ens.grid.steps
    m = ens.brownian_dim
    process = np.asarray(process, dtype=float)
    n = process.shape[2]
    cond = np.zeros((N + 1, N + 1, reg.size, n))
    K = np.zeros((N + 1, N, reg.size, n, m))
    running = process.copy()  # f(s_k) minus the increments explained so far
    for j in range(N - 1, first - 1, -1):
        cj, kj = reg.project_joint(j, running[:, j + 1 :])
        cond[j, j + 1 :] = np.moveaxis(cj, 0, 1)
        K[j + 1 :, j] = np.moveaxis(kj, 0, 1)
        running[:, j + 1 :] -= reg.increment(j, kj)
    return cond, K


@dataclass(frozen=True)
class RegressionResult:
    values: np.ndarray
    coefficients: np.ndarray | None
    ridge: float
    rank_deficient: bool


def fit_conditional(
    target,
    ensemble: PathEnsemble,
    node_index: int,
    basis: RegressionBasis,
    method: str = "sweep",
    regressor: Regressor | None = None,
) -> RegressionResult:
    """Regression estimate of E{target | F_{t_i}} for an F_T-measurable target.

    ``method="sweep"`` runs the backward joint regression from the horizon
    down to node i (much lower variance); ``method="direct"`` projects the
    target straight onto the node-i basis.  Node 0 always gives the sample
    mean and node N the target itself.
    """
    target = np.asarray(target, dtype=float)
    if target.shape[0] != ensemble.path_count:
        raise ValueError("target must have one row per path")
    N = ensemble.grid.steps
    if not 0 <= node_index <= N:
        raise ValueError("node index out of range")
    if method not in ("sweep", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if node_index == N:
        # everything is known at the horizon
        return RegressionResult(target.copy(), None, 0.0, False)
    if node_index == 0:
        mean = target.mean(axis=0)
        values = np.broadcast_to(mean, target.shape).copy()
        return RegressionResult(values, mean[None], 0.0, False)
    reg = regressor or Regressor(ensemble, basis)
    if method == "direct":
        coef = reg.project(node_index, target)
        fac = reg.factor(node_index)
        ridge, deficient = fac.ridge, fac.rank_deficient
    else:
        cond, _ = integrand_coefficients(reg, target.reshape(len(target), -1), stop=node_index)
        coef = cond[node_index].reshape((reg.size,) + target.shape[1:])
        facs = [reg.joint_factor(j) for j in range(node_index, N)]
        ridge = max(f.ridge for f in facs)
        deficient = any(f.rank_deficient for f in facs)
    return RegressionResult(reg.evaluate(node_index, coef), coef, ridge, deficient)


def conditional_expectation(target, ensemble: PathEnsemble, node_index: int, basis: RegressionBasis, method: str = "sweep") -> np.ndarray:
    """Per-path estimate of E{target | F_{t_i}}."""
    return fit_conditional(target, ensemble, node_index, basis, method).values


@dataclass(frozen=True, eq=False)
class MartingaleKernels:
    """Regression estimates of L(u) and K(s, u), stored as basis coefficients.

    ``l_coef[j]`` belongs to the cell [t_j, t_{j+1}) and ``k_coef[k, j]`` to
    the pair (s_k, u_j); ``k_coef[k, j]`` is zero whenever j >= k.
    """

    regressor: Regressor
    l_coef: np.ndarray | None
    k_coef: np.ndarray | None

    @property
    def l_field(self) -> np.ndarray:
        """Per-path L estimates, shape (P, N, n, m)."""
        N = self.l_coef.shape[0]
        return np.stack([self.regressor.evaluate(j, self.l_coef[j]) for j in range(N)], axis=1)

    def k_row(self, k: int) -> np.ndarray:
        """Per-path K(s_k, u_j) for all cells j, shape (P, N, n, m)."""
        N = self.k_coef.shape[1]
        return np.stack([self.regressor.evaluate(j, self.k_coef[k, j]) for j in range(N)], axis=1)

    def l_energy(self, start: int = 0) -> float:
        """Sample E int_{t_start}^T ||L(u)||^2 du."""
        dt = self.regressor.ensemble.grid.dt
        return dt * sum(self.regressor.mean_square(j, self.l_coef[j]) for j in range(start, len(self.l_coef)))

    def k_energy(self) -> float:
        """Sample E int_0^T int_0^s ||K(s, u)||^2 du ds (right-endpoint rule in s)."""
        dt = self.regressor.ensemble.grid.dt
        total = 0.0
        Np1, N = self.k_coef.shape[:2]
        for k in range(1, Np1):
            for j in range(k):
                total += self.regressor.mean_square(j, self.k_coef[k, j])
        return total * dt * dt


def martingale_integrand(target, ensemble: PathEnsemble, basis: RegressionBasis, regressor: Regressor | None = None) -> MartingaleKernels:
    reg = regressor or Regressor(ensemble, basis)
    _, L = integrand_coefficients(reg, target)
    return MartingaleKernels(reg, L, None)


def representation_kernel_K(process, ensemble: PathEnsemble, basis: RegressionBasis, regressor: Regressor | None = None) -> MartingaleKernels:
    reg = regressor or Regressor(ensemble, basis)
    process = np.asarray(process, dtype=float)
    if process.ndim == 2:
        process = process[:, :, None]
    _, K = kernel_coefficients(reg, process)
    return MartingaleKernels(reg, None, K)


def process_energy(process: np.ndarray, grid: TimeGrid) -> float:
    """Sample E int_0^T ||f(s)||^2 ds with the right-endpoint rule."""
    process = np.asarray(process, dtype=float)
    if process.ndim == 2:
        process = process[:, :, None]
    return grid.dt * float(np.sum(np.mean(np.sum(process[:, 1:] ** 2, axis=2), axis=0)))
