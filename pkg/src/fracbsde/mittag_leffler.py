"""Mittag-Leffler functions of scalar and square-matrix arguments.

Everything here is evaluated by the power series

    E_{a,b}(z) = sum_k z^k / Gamma(a k + b)

with a term-ratio stopping rule.  That is only trustworthy for moderate
arguments, so matrix evaluation refuses arguments whose 2-norm exceeds
``MAX_MATRIX_NORM``.  Scalar evaluation falls back to extended precision
(mpmath) when the float64 partial sums lose too many digits to cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np

__all__ = [
    "MAX_MATRIX_NORM",
    "MLBounds",
    "MLEvaluationError",
    "MLParams",
    "bound_nodes",
    "ml_bounds",
    "ml_matrix",
    "ml_scalar",
    "operator_norm",
]

MAX_MATRIX_NORM = 10.0

_EPS = np.finfo(float).eps


class MLEvaluationError(ArithmeticError):
    """The series did not settle within ``max_terms``."""

    def __init__(self, message, *, partial_sum=None, terms_used=0, last_term=None):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.terms_used = terms_used
        self.last_term = last_term


@dataclass(frozen=True)
class MLParams:
    rel_tolerance: float = 1e-14
    max_terms: int = 2000
    bound_grid_points: int = 256

    def __post_init__(self):
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive")
        if self.max_terms < 8:
            raise ValueError("max_terms must be at least 8")
        if self.bound_grid_points < 2:
            raise ValueError("bound_grid_points must be at least 2")


@dataclass(frozen=True)
class MLBounds:
    """Sampled suprema of ||E_a(t^a A)|| and ||E_{a,a}(t^a A)|| over [0, T].

    Both are lower estimates of the true suprema; they can only grow as the
    sampling grid is refined.
    """

    m_alpha: float
    m_alpha_alpha: float
    grid_points: int = 0

    def __post_init__(self):
        if self.m_alpha < 0 or self.m_alpha_alpha < 0:
            raise ValueError("Mittag-Leffler bounds must be nonnegative")


def _check_params(alpha, beta):
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")


def _series_float(alpha, beta, z, params):
    # returns (value, max_abs_term, terms_used)
    logz = math.log(abs(z))
    negative = z < 0
    terms = []
    max_term = 0.0
    small_run = 0
    total = 0.0
    prev_mag = math.inf
    for k in range(params.max_terms):
        log_mag = k * logz - math.lgamma(alpha * k + beta)
        mag = math.exp(log_mag) if log_mag > -745.0 else 0.0
        term = -mag if (negative and k % 2) else mag
        terms.append(term)
        total += term
        max_term = max(max_term, mag)
        # only stop once the terms are past their peak and shrinking
        if mag <= prev_mag and mag <= params.rel_tolerance * abs(total):
            small_run += 1
            if small_run >= 3:
                return math.fsum(terms), max_term, k + 1
        else:
            small_run = 0
        prev_mag = mag
    raise MLEvaluationError(
        f"E_{{{alpha},{beta}}}({z}) did not converge in {params.max_terms} terms",
        partial_sum=math.fsum(terms),
        terms_used=params.max_terms,
        last_term=terms[-1],
    )


def _series_mp(alpha, beta, z, params, digits):
    with mpmath.workdps(digits):
        zz = mpmath.mpf(z)
        a = mpmath.mpf(alpha)
        b = mpmath.mpf(beta)
        total = mpmath.mpf(0)
        power = mpmath.mpf(1)
        small_run = 0
        prev = mpmath.inf
        tol = mpmath.mpf(params.rel_tolerance)
        for k in range(params.max_terms):
            term = power / mpmath.gamma(a * k + b)
            total += term
            mag = abs(term)
            if mag <= prev and mag <= tol * abs(total):
                small_run += 1
                if small_run >= 3:
                    return float(total)
            else:
                small_run = 0
            prev = mag
            power *= zz
    raise MLEvaluationError(
        f"E_{{{alpha},{beta}}}({z}) did not converge in {params.max_terms} terms "
        "(extended precision)",
        partial_sum=float(total),
        terms_used=params.max_terms,
        last_term=float(term),
    )


def ml_scalar(alpha: float, beta: float, z: float, params: MLParams | None = None) -> float:
    """Two-parameter Mittag-Leffler function of a real argument."""
    params = params or MLParams()
    _check_params(alpha, beta)
    z = float(z)
    if not math.isfinite(z):
        raise ValueError("z must be finite")
    if z == 0.0:
        return 1.0 / math.gamma(beta)
    value, max_term, used = _series_float(alpha, beta, z, params)
    # digits lost to cancellation between alternating terms
    if max_term * used * _EPS > params.rel_tolerance * abs(value):
        # the float64 value is unreliable here, so size the precision from
        # the largest term and confirm with a second, wider evaluation
        digits = int(30 + math.log10(max(max_term, 1.0)))
        value = _series_mp(alpha, beta, z, params, digits)
        for _ in range(4):
            digits += 20
            wider = _series_mp(alpha, beta, z, params, digits)
            if abs(wider - value) <= params.rel_tolerance * abs(wider):
                return wider
            value = wider
        raise MLEvaluationError(
            f"E_{{{alpha},{beta}}}({z}) is not stable under extended precision",
            partial_sum=value,
            terms_used=used,
        )
    return value


def operator_norm(M: np.ndarray) -> float:
    """Largest singular value."""
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def ml_matrix(alpha: float, beta: float, M, params: MLParams | None = None) -> np.ndarray:
    """E_{a,b}(M) for a square matrix M by its power series."""
    params = params or MLParams()
    _check_params(alpha, beta)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix argument must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix argument must have finite entries")
    norm = operator_norm(M)
    if norm > MAX_MATRIX_NORM:
        raise MLEvaluationError(
            f"argument norm {norm:.3g} exceeds the series range {MAX_MATRIX_NORM}"
        )
    n = M.shape[0]
    term = np.eye(n) / math.gamma(beta)
    total = term.copy()
    if norm == 0.0:
        return total
    prev_mag = math.inf
    small_run = 0
    lg_prev = math.lgamma(beta)
    for k in range(1, params.max_terms):
        lg = math.lgamma(alpha * k + beta)
        term = (term @ M) * math.exp(lg_prev - lg)
        lg_prev = lg
        total = total + term
        mag = float(np.abs(term).max())
        if mag <= prev_mag and mag <= params.rel_tolerance * max(float(np.abs(total).max()), 1e-300):
            small_run += 1
            if small_run >= 3:
                return total
        else:
            small_run = 0
        prev_mag = mag
    raise MLEvaluationError(
        f"matrix E_{{{alpha},{beta}}} did not converge in {params.max_terms} terms",
        partial_sum=total,
        terms_used=params.max_terms,
        last_term=term,
    )


def bound_nodes(T: float, points: int) -> np.ndarray:
    """Sampling nodes for the sup bounds: 0 together with T*k/points, k=1..points.

    Doubling ``points`` gives a superset of nodes, so sampled suprema are
    monotone in the grid density.
    """
    k = np.arange(1, points + 1)
    return np.concatenate([[0.0], T * k / points])


def ml_bounds(alpha: float, A, T: float, params: MLParams | None = None) -> MLBounds:
    """Grid-sampled sup of the operator norms of E_a(t^a A) and E_{a,a}(t^a A) on [0, T]."""
    params = params or MLParams()
    if not T > 0:
        raise ValueError("T must be positive")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m_a = 0.0
    m_aa = 0.0
    for t in bound_nodes(T, params.bound_grid_points):
        arg = A * t**alpha
        m_a = max(m_a, operator_norm(ml_matrix(alpha, 1.0, arg, params)))
        m_aa = max(m_aa, operator_norm(ml_matrix(alpha, alpha, arg, params)))
    return MLBounds(m_a, m_aa, params.bound_grid_points)
