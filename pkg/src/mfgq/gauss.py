"""Gauss quadrature rules for discrete measures.

The three-term recurrence of the orthogonal polynomials of a discrete
measure is extracted by a Lanczos reduction (with full reorthogonalization,
which is essential for more than a few tens of points), and the rule is
obtained from the spectral data of the leading Jacobi submatrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .measure import DiscreteMeasure, EmptyMeasureError

# relative floor on the squared off-diagonal entries; below it the measure
# is numerically supported on fewer points and the recurrence is truncated
BETA_FLOOR = 1e-28

# eigenvalues of a Jacobi matrix are simple; closer spacings are merged
EIGEN_MERGE_REL = 1e-13


class OrderTooLargeError(ValueError):
    """Requested more quadrature points than the recurrence supports."""


class NoConvergenceError(RuntimeError):
    """The tridiagonal eigensolver failed to converge."""


@dataclass(frozen=True)
class RecurrenceCoefficients:
    """Three-term recurrence data of orthogonal polynomials.

    ``alpha`` is the Jacobi diagonal, ``beta`` the squared off-diagonal
    entries (all non-negative), and ``mass`` the total measure mass.
    """

    alpha: np.ndarray
    beta: np.ndarray
    mass: float

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.beta.size != max(self.alpha.size - 1, 0):
            raise ValueError("beta must have one entry fewer than alpha")
        if np.any(self.beta < 0.0):
            raise ValueError("beta entries must be non-negative")

    @property
    def effective_order(self) -> int:
        return self.alpha.size


def tridiagonalize(m: DiscreteMeasure, max_order: int) -> RecurrenceCoefficients:
    """Recurrence coefficients of the orthogonal polynomials of ``m``.

    Runs Lanczos on the diagonal matrix of support points with starting
    vector sqrt(w / mass), reorthogonalizing fully at each step.  The
    recurrence is truncated early when an off-diagonal entry falls below
    the stability floor.
    """
    m.require_unsigned()
    if len(m) == 0:
        raise EmptyMeasureError("cannot tridiagonalize an empty measure")
    if max_order < 1:
        raise ValueError("max_order must be at least 1")
    x, w = m.points, m.weights
    mass = m.mass
    n = min(max_order, len(m))

    V = np.empty((n, x.size))
    v = np.sqrt(w / mass)
    V[0] = v
    alpha = np.empty(n)
    beta = []
    for j in range(n):
        u = x * v
        alpha[j] = np.dot(v, u)
        if j == n - 1:
            break
        u -= alpha[j] * v
        if j > 0:
            u -= np.sqrt(beta[-1]) * V[j - 1]
        # full reorthogonalization, applied twice
        for _ in range(2):
            u -= V[: j + 1].T @ (V[: j + 1] @ u)
        b2 = float(np.dot(u, u))
        if b2 < BETA_FLOOR * mass:
            return RecurrenceCoefficients(alpha[: j + 1], np.array(beta), mass)
        beta.append(b2)
        v = u / np.sqrt(b2)
        V[j + 1] = v
    return RecurrenceCoefficients(alpha, np.array(beta), mass)


def tridiag_eigen(diag, offdiag) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) of a symmetric tridiagonal matrix and the
    first component of each normalized eigenvector."""
    d = np.asarray(diag, dtype=float)
    e = np.asarray(offdiag, dtype=float)
    if e.size != d.size - 1:
        raise ValueError("offdiag must have one entry fewer than diag")
    if d.size == 1:
        return d.copy(), np.ones(1)
    try:
        vals, vecs = scipy.linalg.eigh_tridiagonal(d, e)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise NoConvergenceError(str(exc)) from exc
    return vals, vecs[0].copy()


def golub_welsch(rc: RecurrenceCoefficients, m: int) -> DiscreteMeasure:
    """The m-point Gauss rule from the leading m-by-m Jacobi submatrix."""
    if m < 1 or m > rc.effective_order:
        raise OrderTooLargeError(
            f"requested {m} points but recurrence supports {rc.effective_order}"
        )
    vals, first = tridiag_eigen(rc.alpha[:m], np.sqrt(rc.beta[: m - 1]))
    weights = rc.mass * first**2
    if m > 1:
        span = float(vals[-1] - vals[0])
        if span > 0.0:
            close = np.diff(vals) < EIGEN_MERGE_REL * span
            if np.any(close):
                vals = vals.copy()
                # collapse near-coincident eigenvalues onto one point
                for i in np.nonzero(close)[0]:
                    vals[i + 1] = vals[i]
    return DiscreteMeasure(vals, weights)


def gauss_compress(m: DiscreteMeasure, target_points: int) -> DiscreteMeasure:
    """Replace ``m`` by its Gauss rule with at most ``target_points`` points.

    Measures already at or below the target are returned unchanged.
    """
    if target_points < 1:
        raise ValueError("target_points must be at least 1")
    if len(m) <= target_points:
        return m
    rc = tridiagonalize(m, target_points)
    return golub_welsch(rc, min(target_points, rc.effective_order))


def gauss_hermite(n: int, mean: float = 0.0, stddev: float = 1.0) -> DiscreteMeasure:
    """n-point Gauss rule for N(mean, stddev^2) from the probabilists'
    Hermite recurrence (alpha_j = mean, beta_j = j stddev^2)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if stddev <= 0.0:
        raise ValueError("stddev must be positive")
    alpha = np.full(n, float(mean))
    beta = np.arange(1, n) * stddev**2
    return golub_welsch(RecurrenceCoefficients(alpha, beta, 1.0), n)
