"""Containers for adapted processes on the grid and on the triangle t <= s."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .stochastic_core import Regressor

__all__ = ["AdaptedPair", "TriangularField", "write_x_csv"]


class TriangularField:
    """Matrix-valued field y(t_i, cell j), j >= i, held as regression coefficients.

    Cell j is [s_j, s_{j+1}); its value is measurable at s_j, so it lives in
    the span of the node-j basis of ``regressor``.  ``coef`` has shape
    (N, N, b, n, m); entries with j < i are ignored and kept at zero.
    """

    def __init__(self, regressor: Regressor, coef: np.ndarray):
        N = regressor.ensemble.grid.steps
        coef = np.asarray(coef, dtype=float)
        if coef.ndim != 5 or coef.shape[:3] != (N, N, regressor.size):
            raise ValueError(f"coefficient array has shape {coef.shape}, expected ({N}, {N}, {regressor.size}, n, m)")
        self.regressor = regressor
        self.coef = np.triu(np.ones((N, N), dtype=bool))[:, :, None, None, None] * coef

    @classmethod
    def zeros(cls, regressor: Regressor, n: int, m: int) -> "TriangularField":
        N = regressor.ensemble.grid.steps
        return cls(regressor, np.zeros((N, N, regressor.size, n, m)))

    @classmethod
    def constant(cls, regressor: Regressor, value) -> "TriangularField":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        field = cls.zeros(regressor, *value.shape)
        field.coef[:, :, 0] = value
        field.coef *= np.triu(np.ones(field.coef.shape[:2], dtype=bool))[:, :, None, None, None]
        return field

    @property
    def steps(self) -> int:
        return self.coef.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.coef.shape[3], self.coef.shape[4]

    def value(self, i: int, j: int) -> np.ndarray:
        """Per-path values in cell j of row i, shape (P, n, m)."""
        if not 0 <= i <= j < self.steps:
            raise IndexError(f"({i}, {j}) is outside the triangle")
        return self.regressor.evaluate(j, self.coef[i, j])

    def values(self, i: int) -> np.ndarray:
        """Per-path values of row i over cells i..N-1, shape (P, N-i, n, m)."""
        return np.stack([self.value(i, j) for j in range(i, self.steps)], axis=1)

    def column(self, j: int) -> np.ndarray:
        """Per-path values in cell j for rows 0..j, shape (P, j+1, n, m)."""
        vals = self.regressor.evaluate(j, np.moveaxis(self.coef[: j + 1, j], 0, 1))
        return vals

    def mean_sq(self, i: int, j: int) -> float:
        return self.regressor.mean_square(j, self.coef[i, j])

    def mean_sq_table(self) -> np.ndarray:
        """(N, N) table of sample E||y(t_i, cell j)||^2, zero below the diagonal."""
        N = self.steps
        flat = self.coef.reshape(N, N, self.regressor.size, -1)
        out = np.zeros((N, N))
        for j in range(N):
            G = self.regressor.gram(j)
            out[: j + 1, j] = np.einsum("iac,ab,ibc->i", flat[: j + 1, j], G, flat[: j + 1, j])
        return out

    def _check(self, other):
        if not isinstance(other, TriangularField) or other.regressor is not self.regressor:
            raise ValueError("fields must share the same regressor")

    def __add__(self, other):
        self._check(other)
        return TriangularField(self.regressor, self.coef + other.coef)

    def __sub__(self, other):
        self._check(other)
        return TriangularField(self.regressor, self.coef - other.coef)

    def __mul__(self, scalar):
        return TriangularField(self.regressor, self.coef * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def to_csv(self, path, max_paths: int | None = None) -> None:
        """Write ``path,t_node,s_node,row,col,value`` rows."""
        P = self.regressor.P if max_paths is None else min(max_paths, self.regressor.P)
        n, m = self.shape
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "t_node", "s_node", "row", "col", "value"])
            for i in range(self.steps):
                vals = self.values(i)[:P]
                for p in range(P):
                    for k in range(vals.shape[1]):
                        for r in range(n):
                            for c in range(m):
                                writer.writerow([p, i, i + k, r, c, f"{vals[p, k, r, c]:.17g}"])


@dataclass(frozen=True, eq=False)
class AdaptedPair:
    """Candidate solution: x on the nodes (shape (P, N+1, n)) and the y field."""

    x: np.ndarray
    y: TriangularField

    def __post_init__(self):
        P = self.y.regressor.P
        N = self.y.steps
        if self.x.shape[:2] != (P, N + 1):
            raise ValueError(f"x has shape {self.x.shape}, expected ({P}, {N + 1}, n)")

    def __sub__(self, other: "AdaptedPair") -> "AdaptedPair":
        return AdaptedPair(self.x - other.x, self.y - other.y)


def write_x_csv(x: np.ndarray, path, max_paths: int | None = None) -> None:
    """Write ``path,node,component,value`` rows for a (P, N+1, n) array."""
    P = x.shape[0] if max_paths is None else min(max_paths, x.shape[0])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "node", "component", "value"])
        for p in range(P):
            for i in range(x.shape[1]):
                for c in range(x.shape[2]):
                    writer.writerow([p, i, c, f"{x[p, i, c]:.17g}"])
