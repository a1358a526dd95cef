"""Singular-kernel weighted norms on the grid.

All norms are in squared form: the x norm is

    sup_tau E int_tau^T (s - tau)^(a-1) ||x(s)||^2 ds

with tau running over the grid nodes in [t, T], and the y norm is

    sup_tau E int_tau^T (s - tau)^(a-1) int_s^T ||y(s, u)||^2 du ds.

The kernel is always integrated exactly over each cell; only the smooth
factor is sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import AdaptedPair, TriangularField
from .stochastic_core import TimeGrid

__all__ = [
    "KernelWeights",
    "NormReport",
    "kernel_weights",
    "norm_x",
    "norm_x_root",
    "norm_x_table",
    "norm_y",
    "norm_y_table",
    "pair_norm",
]


def _check_alpha(alpha):
    if not 0.5 < alpha <= 1:
        raise ValueError(f"alpha must lie in (1/2, 1], got {alpha}")


@dataclass(frozen=True)
class KernelWeights:
    """Exact integrals of (s - tau)^(a-1) over the cells [s_j, s_{j+1}], j >= tau_index."""

    tau_index: int
    weights: np.ndarray


def kernel_weights(grid: TimeGrid, tau_index: int, alpha: float) -> KernelWeights:
    _check_alpha(alpha)
    N = grid.steps
    if not 0 <= tau_index <= N:
        raise ValueError("tau index out of range")
    tau = grid.nodes[tau_index]
    s = grid.nodes[tau_index:] - tau
    return KernelWeights(tau_index, np.diff(s**alpha) / alpha)


def norm_x_table(ms: np.ndarray, grid: TimeGrid, alpha: float, t_index: int = 0) -> tuple[float, int]:
    """Squared x norm from the per-node mean squares ``ms`` (length N+1).

    Right-endpoint rule: cell j uses the value at s_{j+1}.  Returns the
    supremum over tau-nodes t..N-1 and the node where it is attained.
    """
    ms = np.asarray(ms, dtype=float)
    N = grid.steps
    best, at = 0.0, t_index
    for k in range(t_index, N):
        val = float(kernel_weights(grid, k, alpha).weights @ ms[k + 1 :])
        if val > best:
            best, at = val, k
    return best, at


def _mean_sq_nodes(field):
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:
        field = field[:, :, None]
    return np.mean(np.sum(field.reshape(field.shape[0], field.shape[1], -1) ** 2, axis=2), axis=0)


def norm_x(field, grid: TimeGrid, alpha: float, t_index: int = 0) -> float:
    """Squared weighted norm of a per-path process of shape (P, N+1, ...)."""
    return norm_x_table(_mean_sq_nodes(field), grid, alpha, t_index)[0]


def norm_x_root(field, grid: TimeGrid, alpha: float, t_index: int = 0) -> float:
    """The other reading: sup_tau E sqrt(int ...), squared so it is comparable.

    By Jensen this never exceeds ``norm_x``.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim == 2:
        field = field[:, :, None]
    sq = np.sum(field.reshape(field.shape[0], field.shape[1], -1) ** 2, axis=2)
    best = 0.0
    for k in range(t_index, grid.steps):
        w = kernel_weights(grid, k, alpha).weights
        best = max(best, float(np.mean(np.sqrt(sq[:, k + 1 :] @ w))))
    return best**2


def _row_integrals(table, dt):
    # R(s_i) = sum_{l >= i} E||y(s_i, cell l)||^2 dt, with R(s_N) = 0
    N = table.shape[0]
    R = np.zeros(N + 1)
    R[:N] = np.sum(np.triu(table), axis=1) * dt
    return R


def norm_y_table(table: np.ndarray, grid: TimeGrid, alpha: float, t_index: int = 0) -> tuple[float, int]:
    """Squared y norm from the (N, N) table of E||y(t_i, cell j)||^2.

    The inner u-integral is a right-endpoint sum over cells; in s the row
    integrals are interpolated linearly on each cell and integrated against
    the kernel exactly (product trapezoid).
    """
    _check_alpha(alpha)
    N = grid.steps
    dt = grid.dt
    R = _row_integrals(np.asarray(table, dtype=float), dt)
    best, at = 0.0, t_index
    nodes = grid.nodes
    for k in range(t_index, N):
        a = nodes[k:N] - nodes[k]
        b = nodes[k + 1 :] - nodes[k]
        I0 = (b**alpha - a**alpha) / alpha
        I1 = (b ** (alpha + 1) - a ** (alpha + 1)) / (alpha + 1)
        wl = (b * I0 - I1) / dt
        wr = (I1 - a * I0) / dt
        val = float(wl @ R[k:N] + wr @ R[k + 1 :])
        if val > best:
            best, at = val, k
    return best, at


def norm_y(field: TriangularField, grid: TimeGrid, alpha: float, t_index: int = 0) -> float:
    return norm_y_table(field.mean_sq_table(), grid, alpha, t_index)[0]


@dataclass(frozen=True)
class NormReport:
    x_norm_sq: float
    y_norm_sq: float
    pair_norm_sq: float
    sup_attained_at: int
    x_norm_sq_root: float | None = None

    def to_dict(self) -> dict:
        out = {
            "x_norm_sq": self.x_norm_sq,
            "y_norm_sq": self.y_norm_sq,
            "pair_norm_sq": self.pair_norm_sq,
            "sup_at": self.sup_attained_at,
        }
        if self.x_norm_sq_root is not None:
            out["x_norm_sq_root"] = self.x_norm_sq_root
        return out


def pair_norm(pair: AdaptedPair, grid: TimeGrid, alpha: float, t_index: int = 0, verbose: bool = False) -> NormReport:
    """Product norm ||x||^2 + |||y|||^2 at level t.

    ``sup_attained_at`` is the tau-node of the x supremum.
    """
    xs, at = norm_x_table(_mean_sq_nodes(pair.x), grid, alpha, t_index)
    ys, _ = norm_y_table(pair.y.mean_sq_table(), grid, alpha, t_index)
    root = norm_x_root(pair.x, grid, alpha, t_index) if verbose else None
    return NormReport(xs, ys, xs + ys, at, root)
