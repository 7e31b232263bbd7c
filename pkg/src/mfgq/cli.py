"""Command line front end.

Subcommands: ``run`` (single propagation, final measure to CSV),
``convergence`` (dt sweep report), ``compare-mlmc`` (error-versus-work
comparison on the GBM benchmark), ``burgers`` (L1 cdf error of the
extrapolated scheme on the regularized Burgers model).

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import gauss, harness, models, stepper
from .models import builtin, initial_measure
from .stepper import Fixed, MeanField, PerStep, Smooth, StepperConfig

EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class CliError(ValueError):
    pass


def parse_selection(text: str):
    text = text.strip().lower()
    if text == "perstep":
        return PerStep()
    if text == "meanfield":
        return MeanField()
    if text == "smooth":
        return Smooth()
    if text.startswith("fixed:"):
        try:
            m = int(text.split(":", 1)[1])
        except ValueError as exc:
            raise CliError(f"bad fixed selection {text!r}") from exc
        return Fixed(m)
    raise CliError(
        f"unknown selection {text!r}; expected perstep, meanfield, smooth or fixed:M"
    )


def parse_float_list(text: str):
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise CliError(f"bad numeric list {text!r}") from exc
    if not values:
        raise CliError("empty numeric list")
    return values


def load_config(path):
    """Read a JSON or YAML mapping of option names to values."""
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            import yaml

            data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise CliError("config file must contain a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def _merged(args, config, key, default=None):
    """Explicit flags win; config fills the rest; then the default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfgq",
        description="Deterministic quadrature solvers for 1d mean-field SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or YAML file of option defaults")
        p.add_argument("--out", help="output CSV path (default: stdout)")

    p_run = sub.add_parser("run", help="propagate one model, write the final measure")
    p_run.add_argument("--model", help="built-in model name")
    p_run.add_argument("--scheme", choices=["gq1", "gq1e", "gq2"])
    p_run.add_argument("--dt", type=float)
    p_run.add_argument("--t", type=float, help="final time (default 1.0)")
    p_run.add_argument("--selection", help="perstep|meanfield|smooth|fixed:M")
    p_run.add_argument("--k", type=int, help="compression period in steps")
    p_run.add_argument("--lambda", dest="lam", type=float,
                       help="override the diffusion lower bound")
    p_run.add_argument("--diagnostics", help="also write per-step diagnostics CSV")
    common(p_run)

    p_conv = sub.add_parser("convergence", help="dt sweep with slope fits")
    p_conv.add_argument("--model")
    p_conv.add_argument("--schemes", help="comma list, e.g. gq1,gq1e,gq2")
    p_conv.add_argument("--dt-grid", dest="dt_grid", help="comma list, decreasing")
    p_conv.add_argument("--observables", help="comma list (default mean,second_moment)")
    p_conv.add_argument("--selection")
    p_conv.add_argument("--t", type=float)
    common(p_conv)

    p_mlmc = sub.add_parser("compare-mlmc", help="error-vs-work on the GBM benchmark")
    p_mlmc.add_argument("--seed", type=int)
    p_mlmc.add_argument("--dt-grid", dest="dt_grid")
    p_mlmc.add_argument("--tolerances")
    common(p_mlmc)

    p_burgers = sub.add_parser("burgers", help="extrapolated run of the Burgers model")
    p_burgers.add_argument("--dt", type=float)
    p_burgers.add_argument("--ell", type=float)
    common(p_burgers)

    return parser


def _write_or_print(text: str, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args, config) -> int:
    model_name = _merged(args, config, "model")
    scheme = _merged(args, config, "scheme", "gq1")
    dt = _merged(args, config, "dt")
    if model_name is None or dt is None:
        raise CliError("run requires --model and --dt")
    dt = float(dt)
    horizon = float(_merged(args, config, "t", 1.0))
    sel_text = _merged(args, config, "selection")
    selection = parse_selection(sel_text) if sel_text else PerStep()
    problem = builtin(model_name)
    cfg = StepperConfig(
        dt=dt,
        horizon=horizon,
        compression_period=int(_merged(args, config, "k", 1)),
        selection=selection,
        order=1 if scheme == "gq1" else 2,
        lambda_override=_merged(args, config, "lam"),
    )
    q0 = initial_measure(problem.initial)
    if scheme == "gq1e":
        res = stepper.propagate_extrapolated(problem.model, q0, cfg)
        final, diags = res.measure, list(res.fine_diags) + list(res.coarse_diags)
    else:
        final, diags = stepper.propagate(problem.model, q0, cfg, scheme=scheme)
    diag_path = _merged(args, config, "diagnostics")
    if diag_path:
        stepper.diagnostics_to_csv(diags, diag_path)
    out = _merged(args, config, "out")
    if out:
        final.to_csv(out)
    else:
        sys.stdout.write("x,w\n")
        for x, w in zip(final.points, final.weights):
            sys.stdout.write(f"{x:.17g},{w:.17g}\n")
    return 0


def cmd_convergence(args, config) -> int:
    model_name = _merged(args, config, "model")
    grid_text = _merged(args, config, "dt_grid")
    if model_name is None or grid_text is None:
        raise CliError("convergence requires --model and --dt-grid")
    dt_grid = (
        parse_float_list(grid_text) if isinstance(grid_text, str) else list(grid_text)
    )
    schemes_text = _merged(args, config, "schemes", "gq1")
    schemes = (
        [s.strip() for s in schemes_text.split(",") if s.strip()]
        if isinstance(schemes_text, str)
        else list(schemes_text)
    )
    obs_text = _merged(args, config, "observables", "mean,second_moment")
    observables = (
        [s.strip() for s in obs_text.split(",") if s.strip()]
        if isinstance(obs_text, str)
        else list(obs_text)
    )
    for s in schemes:
        if s not in ("gq1", "gq1e", "gq2"):
            raise CliError(f"unknown scheme {s!r}")
    sel_text = _merged(args, config, "selection")
    selection = parse_selection(sel_text) if sel_text else None
    horizon = float(_merged(args, config, "t", 1.0))

    report = harness.ConvergenceReport(metadata={"model": model_name})
    for scheme in schemes:
        sub = harness.run_convergence(
            model_name,
            scheme,
            dt_grid,
            observables=observables,
            selection=selection,
            horizon=horizon,
        )
        report.rows.extend(sub.rows)
        report.slopes.update(sub.slopes)
        report.degenerate |= sub.degenerate
    _emit_report(report, _merged(args, config, "out"))
    return 0


def _emit_report(report, out):
    lines = ["dt,scheme,observable,error,rel_error,wall_time,work\n"]
    for r in report.rows:
        lines.append(
            f"{r.dt:.17g},{r.scheme},{r.observable},{r.error:.17g},"
            f"{r.rel_error:.17g},{r.wall_time:.17g},{r.work:.17g}\n"
        )
    _write_or_print("".join(lines), out)
    for key, slope in sorted(report.slopes.items()):
        tag = " (degenerate)" if key in report.degenerate else ""
        sys.stderr.write(f"slope {key[0]}/{key[1]}: {slope:.4f}{tag}\n")


def cmd_compare_mlmc(args, config) -> int:
    seed = int(_merged(args, config, "seed", 0))
    grid_text = _merged(args, config, "dt_grid")
    dt_grid = (
        parse_float_list(grid_text)
        if isinstance(grid_text, str)
        else (list(grid_text) if grid_text else [2.0**-k for k in range(3, 10)])
    )
    tol_text = _merged(args, config, "tolerances")
    tolerances = (
        parse_float_list(tol_text)
        if isinstance(tol_text, str)
        else (list(tol_text) if tol_text else [2e-2, 1e-2, 5e-3, 2e-3, 1e-3])
    )
    report = harness.compare_mlmc(dt_grid, tolerances, seed=seed)
    _emit_report(report, _merged(args, config, "out"))
    for scheme, slope in sorted(report.work_slopes.items()):
        sys.stderr.write(f"work-slope {scheme}: {slope:.4f}\n")
    return 0


def cmd_burgers(args, config) -> int:
    dt = _merged(args, config, "dt")
    ell = _merged(args, config, "ell")
    if dt is None or ell is None:
        raise CliError("burgers requires --dt and --ell")
    result = harness.run_burgers(float(dt), float(ell))
    text = (
        "dt,ell,l1_error,n_points\n"
        f"{result.dt:.17g},{result.ell:.17g},{result.l1_error:.17g},{result.n_points}\n"
    )
    _write_or_print(text, _merged(args, config, "out"))
    return 0


_COMMANDS = {
    "run": cmd_run,
    "convergence": cmd_convergence,
    "compare-mlmc": cmd_compare_mlmc,
    "burgers": cmd_burgers,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else 0
    try:
        config = load_config(args.config) if getattr(args, "config", None) else {}
        return _COMMANDS[args.command](args, config)
    except (
        CliError,
        ValueError,
        models.UnknownModelError,
        FileNotFoundError,
    ) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except (
        gauss.NoConvergenceError,
        stepper.NoSolutionError,
        FloatingPointError,
        ArithmeticError,
    ) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
