"""Built-in problem instances with analytic references where one exists."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mittag_leffler import ml_scalar
from .picard_solver import AffineDrift, AffineG, ProblemSpec, TerminalPoly
from .stochastic_core import PathEnsemble

__all__ = ["AnalyticReference", "CatalogEntry", "catalog_list", "get_entry"]


@dataclass(frozen=True)
class AnalyticReference:
    """Closed-form x on the nodes, compared by ``metric`` at ``tolerance``.

    ``metric`` is "max" (largest absolute error on any path and node),
    "rmse" (root mean square over paths and nodes) or "x0" (absolute
    error of x(0) only).
    """

    description: str
    provenance: str
    tolerance: float
    metric: str
    x: Callable[[PathEnsemble], np.ndarray]
    y_description: str = "y = 0"

    def error(self, x: np.ndarray, ensemble: PathEnsemble) -> float:
        ref = self.x(ensemble)
        if self.metric == "x0":
            return float(np.max(np.abs(x[:, 0] - ref[:, 0])))
        if self.metric == "rmse":
            return float(np.sqrt(np.mean((x - ref) ** 2)))
        return float(np.max(np.abs(x - ref)))


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    description: str
    problem: ProblemSpec
    reference: AnalyticReference | None = None

    def summary(self) -> dict:
        out = {
            "id": self.id,
            "description": self.description,
            "alpha": self.problem.alpha,
            "T": self.problem.T,
            "contraction_lhs": self.problem.contraction_lhs(),
        }
        if self.reference is not None:
            out["reference"] = self.reference.description
            out["provenance"] = self.reference.provenance
            out["tolerance"] = self.reference.tolerance
        return out


def _spec(alpha=0.75, T=1.0, A=0.0, F0=0.0, F1=0.0, c0=0.0, c1=0.0, c2=0.0):
    return ProblemSpec(
        alpha,
        T,
        1,
        1,
        [[A]],
        AffineDrift.build(1, 1, F0=[F0], F1=[[F1]]),
        AffineG.build(1, 1),
        TerminalPoly.build(1, 1, c0=[c0], c1=[[c1]], c2=[[c2]]),
    )


def _nodes(ens):
    return ens.grid.nodes


def _build():
    entries = []

    c = 2.0
    entries.append(
        CatalogEntry(
            "trivial",
            "A = 0, f = 0, g = 0, xi = 2",
            _spec(c0=c),
            AnalyticReference(
                "x = xi on every node", "[TRIVIAL]", 1e-12, "max",
                lambda ens: np.full((ens.path_count, ens.grid.steps + 1, 1), c),
            ),
        )
    )

    a = 0.75
    entries.append(
        CatalogEntry(
            "terminal-brownian",
            "A = 0, f = 0, g = 0, xi = w(T)",
            _spec(alpha=a, c1=1.0),
            AnalyticReference(
                "x(t) = w(t)", "[TRIVIAL]", 5e-2, "rmse",
                lambda ens: ens.values[:, :, :1].copy(),
                y_description="KernelForm y(t,u) = -Gamma(alpha) (u-t)^(1-alpha)",
            ),
        )
    )

    F0 = 1.0
    entries.append(
        CatalogEntry(
            "constant-drift",
            "A = 0, g = 0, xi = 0, f = 1",
            _spec(alpha=a, F0=F0),
            AnalyticReference(
                "x(t) = F0 (T-t)^alpha / Gamma(alpha+1)", "[TRIVIAL]", 1e-3, "max",
                lambda ens: np.broadcast_to(
                    (F0 * (1.0 - _nodes(ens)) ** a / math.gamma(a + 1))[None, :, None],
                    (ens.path_count, ens.grid.steps + 1, 1),
                ).copy(),
            ),
        )
    )

    Ts = 0.25

    def affine_ref(ens):
        # x(t) = E_a(0.5 (T-t)^a) w(t) solves the mild equation with f = 0.5 x
        phi = np.array([ml_scalar(a, 1.0, 0.5 * (Ts - t) ** a) for t in _nodes(ens)])
        return phi[None, :, None] * ens.values[:, :, :1]

    entries.append(
        CatalogEntry(
            "affine-small-T",
            "A = 0, g = 0, f = 0.5 x, xi = w(T), T = 0.25",
            _spec(alpha=a, T=Ts, F1=0.5, c1=1.0),
            AnalyticReference("x(t) = E_alpha(0.5 (T-t)^alpha) w(t)", "[DERIVED]", 5e-2, "rmse", affine_ref),
        )
    )

    lam = 0.5

    def frac_ref(ens):
        vals = np.array([ml_scalar(a, 1.0, -lam * (1.0 - t) ** a) for t in _nodes(ens)])
        return np.broadcast_to(vals[None, :, None], (ens.path_count, ens.grid.steps + 1, 1)).copy()

    entries.append(
        CatalogEntry(
            "frac-ode",
            "deterministic: A = -0.5, f = 0, g = 0, xi = 1",
            _spec(alpha=a, A=-lam, c0=1.0),
            AnalyticReference("x(t) = E_alpha(-0.5 (T-t)^alpha)", "[DERIVED]", 1e-3, "max", frac_ref),
        )
    )

    ac = 0.999
    x0 = math.exp(-lam) + (1 - math.exp(-lam)) / lam

    def classical_ref(ens):
        t = _nodes(ens)
        vals = np.exp(-lam * (1 - t)) + (1 - np.exp(-lam * (1 - t))) / lam
        return np.broadcast_to(vals[None, :, None], (ens.path_count, ens.grid.steps + 1, 1)).copy()

    entries.append(
        CatalogEntry(
            "classical-limit",
            "alpha = 0.999: A = -0.5, f = 1, g = 0, xi = 1",
            _spec(alpha=ac, A=-lam, F0=1.0, c0=1.0),
            AnalyticReference(
                f"x(0) = e^-0.5 + (1 - e^-0.5)/0.5 = {x0:.6f} (classical flow)", "[DERIVED]", 5e-3, "x0", classical_ref
            ),
        )
    )
    return {e.id: e for e in entries}


_CATALOG = None
_ALIASES = {"small-T-affine": "affine-small-T"}


def _catalog():
    global _CATALOG
    if _CATALOG is None:
        _CATALOG = _build()
    return _CATALOG


def catalog_list() -> list[CatalogEntry]:
    return list(_catalog().values())


def get_entry(entry_id: str) -> CatalogEntry:
    key = _ALIASES.get(entry_id, entry_id)
    try:
        return _catalog()[key]
    except KeyError:
        known = ", ".join(sorted(_catalog()))
        raise KeyError(f"unknown catalog id {entry_id!r}; known: {known}") from None
