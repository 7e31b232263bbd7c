"""Convergence sweeps, slope fitting, and experiment reproduction."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import baselines
from .measure import DiscreteMeasure, TestFunction, expectation, interpolated_cdf
from .models import BuiltinProblem, builtin, initial_measure
from .stepper import (
    Fixed,
    PerStep,
    SelectionMode,
    Smooth,
    StepperConfig,
    propagate,
    propagate_extrapolated,
    total_gauss_work,
)

NOISE_FLOOR_FACTOR = 1e2 * np.finfo(float).eps

OBSERVABLES = {
    "mean": TestFunction(lambda x: x, growth_exponent=1, name="mean"),
    "second_moment": TestFunction(lambda x: x**2, growth_exponent=2, name="second_moment"),
    "sin": TestFunction(np.sin, growth_exponent=0, name="sin"),
    "sin2": TestFunction(lambda x: np.sin(x) ** 2, growth_exponent=0, name="sin2"),
}


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    scheme: str
    observable: str
    error: float
    rel_error: float
    wall_time: float
    work: float


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow] = field(default_factory=list)
    slopes: dict = field(default_factory=dict)
    work_slopes: dict = field(default_factory=dict)
    degenerate: set = field(default_factory=set)
    metadata: dict = field(default_factory=dict)

    def rows_for(self, scheme: str, observable: Optional[str] = None):
        return [
            r
            for r in self.rows
            if r.scheme == scheme and (observable is None or r.observable == observable)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("dt,scheme,observable,error,rel_error,wall_time,work\n")
            for r in self.rows:
                fh.write(
                    f"{r.dt:.17g},{r.scheme},{r.observable},{r.error:.17g},"
                    f"{r.rel_error:.17g},{r.wall_time:.17g},{r.work:.17g}\n"
                )


def fit_slope(xs, ys, floor: float = 0.0):
    """Least-squares slope of log ys against log xs.

    Pairs with ys at or below ``floor`` are excluded (flat noise floor).
    Returns (slope, degenerate): fewer than 3 usable pairs flags the fit
    as degenerate with a NaN slope.
    """
    pairs = [(x, y) for x, y in zip(xs, ys) if y > floor and x > 0.0]
    if len(pairs) < 3:
        return float("nan"), True
    lx = np.log([p[0] for p in pairs])
    ly = np.log([p[1] for p in pairs])
    slope = float(np.polyfit(lx, ly, 1)[0])
    return slope, False


def _scheme_order(scheme: str) -> int:
    return 1 if scheme == "gq1" else 2


def _default_selection(scheme: str) -> SelectionMode:
    # extrapolated/second-order runs keep the compression error well below
    # the target order; plain gq1 defaults to the per-step growth rule
    return PerStep() if scheme == "gq1" else Smooth()


def _run_scheme(problem: BuiltinProblem, scheme: str, cfg: StepperConfig):
    q0 = initial_measure(problem.initial)
    if scheme == "gq1e":
        res = propagate_extrapolated(problem.model, q0, cfg, base_scheme="gq1")
        work = total_gauss_work(res.fine_diags) + total_gauss_work(res.coarse_diags)
        return res.measure, list(res.fine_diags) + list(res.coarse_diags), work
    final, diags = propagate(problem.model, q0, cfg, scheme=scheme)
    return final, diags, total_gauss_work(diags)


def run_convergence(
    problem,
    scheme: str,
    dt_grid: Iterable[float],
    observables: Iterable[str] = ("mean", "second_moment"),
    *,
    selection: Optional[SelectionMode] = None,
    horizon: float = 1.0,
    compression_period: int = 1,
    lambda_override: Optional[float] = None,
    radius_override: Optional[float] = None,
    reference_measure: Optional[DiscreteMeasure] = None,
    keep_diagnostics: bool = False,
) -> ConvergenceReport:
    """Sweep dt, compare observables against the reference, fit slopes.

    ``problem`` is a built-in name or a BuiltinProblem.  For
    self-convergence references, pass the reference measure explicitly.
    """
    if isinstance(problem, str):
        problem = builtin(problem)
    dt_grid = list(dt_grid)
    if any(a <= b for a, b in zip(dt_grid, dt_grid[1:])):
        raise ValueError("dt_grid must be strictly decreasing")
    sel = selection if selection is not None else _default_selection(scheme)
    oracle = _oracle_values(problem, observables, horizon, reference_measure)

    report = ConvergenceReport(
        metadata={
            "model": problem.model.name,
            "scheme": scheme,
            "horizon": horizon,
            "selection": type(sel).__name__.lower(),
        }
    )
    all_diags = {}
    for dt in dt_grid:
        cfg = StepperConfig(
            dt=dt,
            horizon=horizon,
            compression_period=compression_period,
            selection=sel,
            order=_scheme_order(scheme),
            lambda_override=lambda_override,
            radius_override=radius_override,
        )
        start = time.perf_counter()
        final, diags, work = _run_scheme(problem, scheme, cfg)
        elapsed = time.perf_counter() - start
        if keep_diagnostics:
            all_diags[dt] = diags
        for name in observables:
            value = expectation(final, OBSERVABLES[name])
            ref = oracle[name]
            err = abs(value - ref)
            rel = err / abs(ref) if ref != 0.0 else float("inf")
            report.rows.append(
                ConvergenceRow(dt, scheme, name, err, rel, elapsed, work)
            )
    for name in observables:
        rows = report.rows_for(scheme, name)
        floor = NOISE_FLOOR_FACTOR * abs(oracle[name])
        slope, degenerate = fit_slope(
            [r.dt for r in rows], [r.error for r in rows], floor
        )
        report.slopes[(scheme, name)] = slope
        if degenerate:
            report.degenerate.add((scheme, name))
    if keep_diagnostics:
        report.metadata["diagnostics"] = all_diags
    return report


def _oracle_values(problem, observables, horizon, reference_measure):
    values = {}
    for name in observables:
        if reference_measure is not None:
            values[name] = expectation(reference_measure, OBSERVABLES[name])
        elif name == "mean" and problem.reference.mean_at is not None:
            values[name] = problem.reference.mean_at(horizon)
        elif name == "second_moment" and problem.reference.second_moment_at is not None:
            values[name] = problem.reference.second_moment_at(horizon)
        else:
            raise ValueError(
                f"no reference available for observable {name!r}; "
                "pass reference_measure for self-convergence problems"
            )
    return values


def self_convergence_reference(
    problem: BuiltinProblem,
    dt_ref: float,
    *,
    horizon: float = 1.0,
    selection: Optional[SelectionMode] = None,
) -> DiscreteMeasure:
    """Well-resolved second-order run used as the reference solution."""
    cfg = StepperConfig(
        dt=dt_ref,
        horizon=horizon,
        selection=selection if selection is not None else Smooth(),
        order=2,
    )
    final, _ = propagate(problem.model, initial_measure(problem.initial), cfg, scheme="gq2")
    return final


# ---------------------------------------------------------------------------
# Burgers experiment


@dataclass(frozen=True)
class BurgersResult:
    l1_error: float
    n_points: int
    dt: float
    ell: float


def signed_cdf_l1(result, reference_cdf, interval, n_nodes: int) -> float:
    """L1 distance between the extrapolated (signed) cdf and a reference.

    The signed combination's cdf is 2 F_fine - F_coarse from the two
    unsigned runs, each reconstructed as a continuous curve through the
    jump midpoints of its staircase.
    """
    lo, hi = interval
    h = (hi - lo) / n_nodes
    xs = lo + h * (np.arange(n_nodes) + 0.5)
    approx = 2.0 * interpolated_cdf(result.fine, xs) - interpolated_cdf(
        result.coarse, xs
    )
    ref = np.asarray(reference_cdf(xs), dtype=float)
    return float(h * np.sum(np.abs(approx - ref)))


def run_burgers(
    dt: float,
    ell: float,
    *,
    sigma2: float = 0.2,
    interval=(-3.0, 4.0),
    n_nodes: int = 7000,
) -> BurgersResult:
    """Extrapolated first-order run of the regularized Burgers model,
    measured as L1 cdf distance against the exact solution at t = 1."""
    if dt <= 0.0 or ell <= 0.0:
        raise ValueError("dt and ell must be positive")
    problem = builtin("burgers", sigma2=sigma2, ell=ell)
    n_steps = max(1, round(1.0 / dt))
    cfg = StepperConfig(dt=1.0 / n_steps, selection=Smooth(), order=2)
    res = propagate_extrapolated(problem.model, initial_measure(problem.initial), cfg)
    l1 = signed_cdf_l1(
        res, lambda x: problem.reference.cdf_at(1.0, x), interval, n_nodes
    )
    return BurgersResult(l1, len(res.measure), cfg.dt, ell)


# ---------------------------------------------------------------------------
# MLMC comparison


def compare_mlmc(
    dt_grid: Iterable[float],
    mlmc_tolerances: Iterable[float],
    seed: int = 0,
) -> ConvergenceReport:
    """Error-versus-work comparison of the quadrature schemes and MLMC on
    the geometric Brownian motion benchmark.

    MLMC work is rescaled so its first point matches the first quadrature
    point, mirroring the usual normalization of cpu-time plots.
    """
    problem = builtin("gbm")
    exact = problem.reference.mean_at(1.0)
    report = ConvergenceReport(metadata={"model": "gbm", "seed": seed})
    for scheme in ("gq1", "gq1e", "gq2"):
        sub = run_convergence(problem, scheme, dt_grid, observables=("mean",))
        report.rows.extend(sub.rows)
        report.slopes.update(sub.slopes)
    mlmc = baselines.mlmc_estimate(
        problem.model,
        lambda x: x,
        list(mlmc_tolerances),
        x0=1.0,
        seed=seed,
    )
    gq1_rows = report.rows_for("gq1", "mean")
    first_work = next((r.work for r in gq1_rows if r.work > 0.0), 1.0)
    scale = first_work / mlmc[0].work if mlmc and mlmc[0].work > 0.0 else 1.0
    for res in mlmc:
        err = abs(res.estimate - exact)
        report.rows.append(
            ConvergenceRow(
                dt=res.tolerance,
                scheme="mlmc",
                observable="mean",
                error=err,
                rel_error=err / abs(exact),
                wall_time=0.0,
                work=res.work * scale,
            )
        )
    for scheme in ("gq1", "gq1e", "gq2", "mlmc"):
        rows = report.rows_for(scheme, "mean")
        slope, degenerate = fit_slope(
            [r.work for r in rows],
            [r.error for r in rows],
            NOISE_FLOOR_FACTOR * abs(exact),
        )
        report.work_slopes[scheme] = slope
        if degenerate:
            report.degenerate.add((scheme, "work"))
    return report


# ---------------------------------------------------------------------------
# optional density output


def pdf_from_cdf_spline(m: DiscreteMeasure, xs) -> np.ndarray:
    """Density estimate from differentiating a monotone spline fit of the
    cdf; a plotting nicety, not used by any solver path."""
    from scipy.interpolate import PchipInterpolator

    m.require_unsigned()
    knots = np.concatenate(
        ([m.points[0] - 1e-9], m.points, [m.points[-1] + 1e-9])
    )
    values = np.concatenate(([0.0], np.cumsum(m.weights), [m.mass]))
    spline = PchipInterpolator(knots, values)
    return spline.derivative()(np.asarray(xs, dtype=float))


def plot_report_svg(report: ConvergenceReport, path, x_field: str = "dt") -> None:
    """Emit a log-log SVG line chart of error against dt or work."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    keys = sorted({(r.scheme, r.observable) for r in report.rows})
    for scheme, observable in keys:
        rows = report.rows_for(scheme, observable)
        xs = [getattr(r, x_field) for r in rows]
        ys = [r.error for r in rows]
        ax.loglog(xs, ys, marker="o", label=f"{scheme}:{observable}")
    ax.set_xlabel(x_field)
    ax.set_ylabel("error")
    ax.legend(fontsize="small")
    fig.savefig(path, format="svg")
    plt.close(fig)
