"""Mean-field SDE coefficient interface and the built-in benchmark problems.

A model carries drift/diffusion kernels a(x, y), b(x, y) averaged against
the current measure, optional outer maps applied to the averages, and an
optional factored form where the coefficients depend on the measure only
through finitely many moments.  The factored form (with analytic partials)
is what the second-order stepper needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import erfc

from . import baselines
from .measure import DiscreteMeasure

_FD_STEP = float(np.cbrt(np.finfo(float).eps))


class UnknownModelError(ValueError):
    """No built-in model with the requested name."""


@dataclass(frozen=True)
class Line:
    """Unbounded spatial domain."""


@dataclass(frozen=True)
class Circle:
    """Periodic spatial domain; points are identified modulo ``period``."""

    period: float = 2.0 * math.pi


Domain = Union[Line, Circle]


def _identity(u):
    return u


def _fd1(f, x, *args):
    h = _FD_STEP * np.maximum(1.0, np.abs(x))
    return (f(x + h, *args) - f(x - h, *args)) / (2.0 * h)


def _fd2(f, x, *args):
    h = np.sqrt(_FD_STEP) * np.maximum(1.0, np.abs(x))
    return (f(x + h, *args) - 2.0 * f(x, *args) + f(x - h, *args)) / h**2


@dataclass(frozen=True)
class FactoredForm:
    """Coefficients depending on the measure through moments ``Q(r)``.

    ``r`` maps x to a vector of ``dim`` moment integrands; ``a`` and ``b``
    take (x, moments).  All callables must broadcast over numpy arrays in
    x.  Partials default to central finite differences.
    """

    dim: int
    r: Callable
    a: Callable
    b: Callable
    da_dx: Optional[Callable] = None
    d2a_dx2: Optional[Callable] = None
    db_dx: Optional[Callable] = None
    d2b_dx2: Optional[Callable] = None
    da_dmom: Optional[Callable] = None
    db_dmom: Optional[Callable] = None
    dr_dx: Optional[Callable] = None
    d2r_dx2: Optional[Callable] = None

    def moments(self, q: DiscreteMeasure) -> np.ndarray:
        if self.dim == 0:
            return np.empty(0)
        rv = np.asarray(self.r(q.points), dtype=float).reshape(self.dim, len(q))
        return rv @ q.weights

    # -- partials with finite-difference fallback ------------------------

    def eval_da_dx(self, x, mom):
        if self.da_dx is not None:
            return self.da_dx(x, mom)
        return _fd1(self.a, x, mom)

    def eval_d2a_dx2(self, x, mom):
        if self.d2a_dx2 is not None:
            return self.d2a_dx2(x, mom)
        return _fd2(self.a, x, mom)

    def eval_db_dx(self, x, mom):
        if self.db_dx is not None:
            return self.db_dx(x, mom)
        return _fd1(self.b, x, mom)

    def eval_d2b_dx2(self, x, mom):
        if self.d2b_dx2 is not None:
            return self.d2b_dx2(x, mom)
        return _fd2(self.b, x, mom)

    def _fd_mom(self, f, x, mom):
        x = np.asarray(x, dtype=float)
        out = np.empty((self.dim,) + x.shape)
        for j in range(self.dim):
            h = _FD_STEP * max(1.0, abs(mom[j]))
            mp, mm = mom.copy(), mom.copy()
            mp[j] += h
            mm[j] -= h
            out[j] = (f(x, mp) - f(x, mm)) / (2.0 * h)
        return out

    def eval_da_dmom(self, x, mom):
        if self.da_dmom is not None:
            return np.asarray(self.da_dmom(x, mom), dtype=float)
        return self._fd_mom(self.a, x, mom)

    def eval_db_dmom(self, x, mom):
        if self.db_dmom is not None:
            return np.asarray(self.db_dmom(x, mom), dtype=float)
        return self._fd_mom(self.b, x, mom)

    def eval_dr_dx(self, x):
        if self.dr_dx is not None:
            return np.asarray(self.dr_dx(x), dtype=float)
        return _fd1(self.r, x)

    def eval_d2r_dx2(self, x):
        if self.d2r_dx2 is not None:
            return np.asarray(self.d2r_dx2(x), dtype=float)
        return _fd2(self.r, x)


@dataclass(frozen=True)
class MeanFieldModel:
    drift_kernel: Callable
    diffusion_kernel: Callable
    outer_drift: Callable = _identity
    outer_diffusion: Callable = _identity
    factored: Optional[FactoredForm] = None
    domain: Domain = Line()
    lambda_hint: float = 1.0
    name: str = ""

    def __post_init__(self):
        if self.lambda_hint <= 0.0:
            raise ValueError("lambda_hint must be positive")


# ---------------------------------------------------------------------------
# measure-averaged coefficients


def _kernel_average(kernel, outer, x, q: DiscreteMeasure):
    """``outer(sum_j w_j kernel(x, y_j))`` broadcast over an array of x."""
    xs = np.asarray(x, dtype=float)
    vals = kernel(xs[..., None], q.points)
    return outer(np.asarray(vals) @ q.weights)


def mean_field_drift(model: MeanFieldModel, x, q: DiscreteMeasure, moments=None):
    """Drift coefficient at x under the frozen measure q.

    Uses the factored fast path when the model has one and the moments are
    already computed; otherwise averages the kernel over the support of q.
    """
    if model.factored is not None and moments is not None:
        return model.factored.a(np.asarray(x, dtype=float), moments)
    return _kernel_average(model.drift_kernel, model.outer_drift, x, q)


def mean_field_diffusion(model: MeanFieldModel, x, q: DiscreteMeasure, moments=None):
    """Diffusion coefficient at x under the frozen measure q."""
    if model.factored is not None and moments is not None:
        return model.factored.b(np.asarray(x, dtype=float), moments)
    return _kernel_average(model.diffusion_kernel, model.outer_diffusion, x, q)


# ---------------------------------------------------------------------------
# initial laws


@dataclass(frozen=True)
class PointMass:
    x: float


@dataclass(frozen=True)
class GaussianLaw:
    mean: float
    stddev: float
    n_points: int


@dataclass(frozen=True)
class ExplicitLaw:
    measure: DiscreteMeasure


InitialLaw = Union[PointMass, GaussianLaw, ExplicitLaw]


def initial_measure(law: InitialLaw) -> DiscreteMeasure:
    from .gauss import gauss_hermite

    if isinstance(law, PointMass):
        return DiscreteMeasure([law.x], [1.0])
    if isinstance(law, GaussianLaw):
        return gauss_hermite(law.n_points, law.mean, law.stddev)
    if isinstance(law, ExplicitLaw):
        law.measure.require_unsigned()
        return law.measure
    raise TypeError(f"unsupported initial law: {law!r}")


# ---------------------------------------------------------------------------
# built-in problems


@dataclass(frozen=True)
class BuiltinProblem:
    model: MeanFieldModel
    initial: InitialLaw
    reference: baselines.ReferenceOracle


def _const_kernel(c):
    return lambda x, y: c + 0.0 * x + 0.0 * y


def _gbm(alpha=-1.0, sigma=0.5, x0=1.0):
    fac = FactoredForm(
        dim=0,
        r=lambda x: np.empty((0,) + np.shape(x)),
        a=lambda x, m: alpha * x,
        b=lambda x, m: sigma * x,
        da_dx=lambda x, m: alpha + 0.0 * x,
        d2a_dx2=lambda x, m: 0.0 * x,
        db_dx=lambda x, m: sigma + 0.0 * x,
        d2b_dx2=lambda x, m: 0.0 * x,
        da_dmom=lambda x, m: np.empty((0,) + np.shape(x)),
        db_dmom=lambda x, m: np.empty((0,) + np.shape(x)),
        dr_dx=lambda x: np.empty((0,) + np.shape(x)),
        d2r_dx2=lambda x: np.empty((0,) + np.shape(x)),
    )
    model = MeanFieldModel(
        drift_kernel=lambda x, y: alpha * x + 0.0 * y,
        diffusion_kernel=lambda x, y: sigma * x + 0.0 * y,
        factored=fac,
        lambda_hint=0.25,
        name="gbm",
    )
    reference = baselines.ReferenceOracle(
        mean_at=lambda t: x0 * math.exp(alpha * t),
        second_moment_at=lambda t: x0**2 * math.exp((2.0 * alpha + sigma**2) * t),
        kind="closed_form",
    )
    return BuiltinProblem(model, PointMass(x0), reference)


def _ou_meanfield(alpha=-0.5, beta=0.8, sigma2=0.5, x0=1.0):
    sigma = math.sqrt(sigma2)
    fac = FactoredForm(
        dim=1,
        r=lambda x: np.asarray(x)[None, ...],
        a=lambda x, m: alpha * x + beta * m[0],
        b=lambda x, m: sigma + 0.0 * x,
        da_dx=lambda x, m: alpha + 0.0 * x,
        d2a_dx2=lambda x, m: 0.0 * x,
        db_dx=lambda x, m: 0.0 * x,
        d2b_dx2=lambda x, m: 0.0 * x,
        da_dmom=lambda x, m: np.broadcast_to(beta, (1,) + np.shape(x)),
        db_dmom=lambda x, m: np.zeros((1,) + np.shape(x)),
        dr_dx=lambda x: np.ones((1,) + np.shape(x)),
        d2r_dx2=lambda x: np.zeros((1,) + np.shape(x)),
    )
    model = MeanFieldModel(
        drift_kernel=lambda x, y: alpha * x + beta * y,
        diffusion_kernel=_const_kernel(sigma),
        factored=fac,
        lambda_hint=sigma2,
        name="ou_meanfield",
    )
    reference = baselines.ReferenceOracle(
        mean_at=lambda t: baselines.ou_moments(alpha, beta, sigma2, x0, t)[0],
        second_moment_at=lambda t: baselines.ou_moments(alpha, beta, sigma2, x0, t)[1],
        kind="closed_form",
    )
    return BuiltinProblem(model, PointMass(x0), reference)


def _polydrift(alpha=2.0, x0=1.0):
    fac = FactoredForm(
        dim=2,
        r=lambda x: np.stack([np.asarray(x, dtype=float), np.asarray(x, dtype=float) ** 2]),
        a=lambda x, m: alpha * x + m[0] - x * m[1],
        b=lambda x, m: x,
        da_dx=lambda x, m: (alpha - m[1]) + 0.0 * x,
        d2a_dx2=lambda x, m: 0.0 * x,
        db_dx=lambda x, m: 1.0 + 0.0 * x,
        d2b_dx2=lambda x, m: 0.0 * x,
        da_dmom=lambda x, m: np.stack([np.ones_like(np.asarray(x, dtype=float)), -np.asarray(x, dtype=float)]),
        db_dmom=lambda x, m: np.zeros((2,) + np.shape(x)),
        dr_dx=lambda x: np.stack([np.ones_like(np.asarray(x, dtype=float)), 2.0 * np.asarray(x, dtype=float)]),
        d2r_dx2=lambda x: np.stack([np.zeros_like(np.asarray(x, dtype=float)), 2.0 * np.ones_like(np.asarray(x, dtype=float))]),
    )
    model = MeanFieldModel(
        drift_kernel=lambda x, y: alpha * x + y - x * y**2,
        diffusion_kernel=lambda x, y: x + 0.0 * y,
        factored=fac,
        lambda_hint=1.0,
        name="polydrift",
    )
    reference = baselines.ReferenceOracle(
        mean_at=lambda t: baselines.polydrift_moments(alpha, x0, t)[0],
        second_moment_at=lambda t: baselines.polydrift_moments(alpha, x0, t)[1],
        kind="ode",
    )
    return BuiltinProblem(model, PointMass(x0), reference)


def _plane_rotator(coupling=1.0, kbt=0.125, mu0=math.pi / 4.0,
                   var0=3.0 * math.pi / 4.0, n_points=40):
    K = coupling
    sigma = math.sqrt(2.0 * kbt)

    def r(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.sin(x), np.cos(x)])

    fac = FactoredForm(
        dim=2,
        r=r,
        a=lambda x, m: K * (m[0] * np.cos(x) - m[1] * np.sin(x)) - np.sin(x),
        b=lambda x, m: sigma + 0.0 * x,
        da_dx=lambda x, m: -K * (m[0] * np.sin(x) + m[1] * np.cos(x)) - np.cos(x),
        d2a_dx2=lambda x, m: -K * (m[0] * np.cos(x) - m[1] * np.sin(x)) + np.sin(x),
        db_dx=lambda x, m: 0.0 * x,
        d2b_dx2=lambda x, m: 0.0 * x,
        da_dmom=lambda x, m: np.stack([K * np.cos(np.asarray(x, dtype=float)), -K * np.sin(np.asarray(x, dtype=float))]),
        db_dmom=lambda x, m: np.zeros((2,) + np.shape(x)),
        dr_dx=lambda x: np.stack([np.cos(np.asarray(x, dtype=float)), -np.sin(np.asarray(x, dtype=float))]),
        d2r_dx2=lambda x: np.stack([-np.sin(np.asarray(x, dtype=float)), -np.cos(np.asarray(x, dtype=float))]),
    )
    model = MeanFieldModel(
        drift_kernel=lambda x, y: K * np.sin(y - x) - np.sin(x),
        diffusion_kernel=_const_kernel(sigma),
        factored=fac,
        domain=Circle(2.0 * math.pi),
        lambda_hint=2.0 * kbt,
        name="plane_rotator",
    )
    reference = baselines.ReferenceOracle(kind="self_convergence")
    return BuiltinProblem(model, GaussianLaw(mu0, math.sqrt(var0), n_points), reference)


def _burgers(sigma2=0.2, ell=1e-3, exact_kernel=False, x0=0.0):
    sigma = math.sqrt(sigma2)
    if exact_kernel:
        def drift_kernel(x, y):
            # 1 - H(x - y) with H(0) = 1
            return np.where(np.asarray(x - y) >= 0.0, 0.0, 1.0)
    else:
        def drift_kernel(x, y):
            return 0.5 * erfc((x - y) / ell)

    model = MeanFieldModel(
        drift_kernel=drift_kernel,
        diffusion_kernel=_const_kernel(sigma),
        lambda_hint=sigma2,
        name="burgers",
    )
    reference = baselines.ReferenceOracle(
        mean_at=lambda t: x0 + 0.5 * t,
        second_moment_at=lambda t: baselines.burgers_second_moment(sigma2, t),
        cdf_at=lambda t, x: baselines.burgers_exact_cdf(sigma2, t, x),
        kind="closed_form",
    )
    return BuiltinProblem(model, PointMass(x0), reference)


_BUILTINS = {
    "gbm": _gbm,
    "ou_meanfield": _ou_meanfield,
    "polydrift": _polydrift,
    "plane_rotator": _plane_rotator,
    "burgers": _burgers,
}


def builtin(name: str, **overrides) -> BuiltinProblem:
    """Return (model, initial law, reference oracle) for a named benchmark."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownModelError(
            f"unknown model {name!r}; choose from {sorted(_BUILTINS)}"
        ) from None
    return factory(**overrides)
