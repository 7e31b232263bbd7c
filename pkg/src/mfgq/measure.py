"""Discrete (possibly signed) measures on the real line.

A measure is a finite weighted point set.  Probability measures produced by
the time steppers keep total mass 1; signed measures arise only from
Richardson extrapolation of two runs and are never compressed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class SignedMeasureError(ValueError):
    """Operation requires an unsigned measure."""


class EmptyMeasureError(ValueError):
    """Operation requires a measure with at least one support point."""


def _evaluate(f: Callable, x: np.ndarray) -> np.ndarray:
    """Evaluate ``f`` on an array, falling back to a point-wise loop."""
    try:
        y = np.asarray(f(x), dtype=float)
    except (TypeError, ValueError):
        return np.array([float(f(xi)) for xi in x])
    if y.shape != x.shape:
        y = np.array([float(f(xi)) for xi in x])
    return y


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point set ``sum_i w_i delta_{x_i}`` with ascending points.

    Points are sorted on construction and exact duplicates are merged.
    Zero-weight points are dropped.  ``signed`` is True iff any weight is
    negative.
    """

    points: np.ndarray
    weights: np.ndarray
    signed: bool = field(init=False)

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.points, dtype=float)).ravel()
        w = np.atleast_1d(np.asarray(self.weights, dtype=float)).ravel()
        if x.shape != w.shape:
            raise ValueError("points and weights must have the same length")
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        if x.size:
            # merge exactly coincident points
            keep = np.concatenate(([True], np.diff(x) > 0.0))
            idx = np.cumsum(keep) - 1
            xm = x[keep]
            wm = np.zeros(xm.size)
            np.add.at(wm, idx, w)
            nz = wm != 0.0
            x, w = xm[nz], wm[nz]
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "signed", bool(np.any(w < 0.0)))

    def __len__(self) -> int:
        return self.points.size

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def require_unsigned(self):
        if self.signed:
            raise SignedMeasureError("measure has negative weights")

    def to_csv(self, path) -> None:
        """Write the measure as ``x,w`` rows at full double precision."""
        with open(path, "w") as fh:
            fh.write("x,w\n")
            for xi, wi in zip(self.points, self.weights):
                fh.write(f"{xi:.17g},{wi:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "DiscreteMeasure":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True)
class TestFunction:
    """Observable ``phi`` with its polynomial growth exponent (metadata)."""

    __test__ = False  # not a test class despite the name

    evaluator: Callable[[np.ndarray], np.ndarray]
    growth_exponent: int = 0
    name: str = ""

    def __call__(self, x):
        return self.evaluator(x)


def expectation(m: DiscreteMeasure, f) -> float:
    """Return ``sum_i w_i f(x_i)``; valid for signed measures too."""
    if len(m) == 0:
        return 0.0
    fn = f.evaluator if isinstance(f, TestFunction) else f
    return float(np.dot(m.weights, _evaluate(fn, m.points)))


def merge_close_points(m: DiscreteMeasure, tol: float) -> DiscreteMeasure:
    """Merge points closer than ``tol * max(1, span)``, summing weights.

    Merged clusters are placed at their weighted mean (clipped to the
    cluster hull) so low moments are preserved; total mass is preserved
    exactly.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if len(m) < 2:
        return m
    x, w = m.points, m.weights
    span = float(x[-1] - x[0])
    threshold = tol * max(1.0, span)
    gaps = np.diff(x)
    if np.all(gaps >= threshold):
        return m
    cluster = np.concatenate(([0], np.cumsum(gaps >= threshold)))
    n_clusters = cluster[-1] + 1
    new_x = np.empty(n_clusters)
    new_w = np.zeros(n_clusters)
    np.add.at(new_w, cluster, w)
    for c in range(n_clusters):
        sel = cluster == c
        xs, ws = x[sel], w[sel]
        wsum = ws.sum()
        if abs(wsum) > 1e-300:
            xc = float(np.dot(ws, xs) / wsum)
            xc = min(max(xc, xs[0]), xs[-1])
        else:
            xc = float(xs.mean())
        new_x[c] = xc
    return DiscreteMeasure(new_x, new_w)


def cdf(m: DiscreteMeasure, x) -> float | np.ndarray:
    """Right-continuous cdf ``sum_{x_i <= x} w_i`` of an unsigned measure."""
    m.require_unsigned()
    csum = np.concatenate(([0.0], np.cumsum(m.weights)))
    idx = np.searchsorted(m.points, x, side="right")
    out = csum[idx]
    if np.isscalar(x):
        return float(out)
    return out


def interpolated_cdf(m: DiscreteMeasure, x) -> float | np.ndarray:
    """Continuous cdf estimate: linear interpolation through the jump
    midpoints of the staircase, clamped to 0 and the total mass outside
    the support.  The natural smooth-cdf reconstruction from a quadrature
    rule of a continuous distribution."""
    m.require_unsigned()
    mid = np.cumsum(m.weights) - 0.5 * m.weights
    out = np.interp(x, m.points, mid, left=0.0, right=m.mass)
    if np.isscalar(x):
        return float(out)
    return out


def cdf_l1_distance(
    m: DiscreteMeasure,
    reference_cdf: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    n_nodes: int,
) -> float:
    """Composite midpoint approximation of ``int |F_m - F_ref|`` on [lo, hi]."""
    lo, hi = interval
    if not lo < hi:
        raise ValueError("interval must satisfy lo < hi")
    if n_nodes < 2:
        raise ValueError("n_nodes must be at least 2")
    m.require_unsigned()
    h = (hi - lo) / n_nodes
    mid = lo + h * (np.arange(n_nodes) + 0.5)
    return float(h * np.sum(np.abs(cdf(m, mid) - _evaluate(reference_cdf, mid))))
