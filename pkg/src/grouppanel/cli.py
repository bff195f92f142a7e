"""Command-line front door: fit, test, select-k, and simulate subcommands.

Exit codes are a stable contract: 0 success, 2 input error, 3 numeric
failure, 4 partial simulation.  Configuration comes from an optional
flat key=value file; command-line flags win over file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import io as gio
from .errors import DataFormatError, DegenerateResidualsError, GroupPanelError
from .estimators import (
    OptimOptions,
    classo_fit,
    cross_validate_lambda,
    feasible_kmeans,
    hssp_fit,
    kmeans_lasso_fit,
)
from .hettests import r_test, s_test, within_group_tests
from .panel import residuals_from_centers, unit_ols, within_transform
from .selection import gap_statistic, index_select
from .simulate import SimConfig, run_replications

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_PARTIAL = 4

_METHOD_ALIASES = {
    "ssp": "SSP",
    "km": "Km",
    "fkm": "F-Km",
    "f-km": "F-Km",
    "hssp": "H-SSP",
    "h-ssp": "H-SSP",
}

AUTO_K_MAX = 20


def _read_config_file(path: str) -> dict:
    """Flat key=value file; '#' starts a comment; JSON manifests also accepted."""
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        data = json.loads(text)
        return data.get("config", data)
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"bad config line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _standardize(panel):
    """Z-score y and every covariate over all observations."""
    from .panel import PanelData

    y = panel.y
    x = panel.x
    ys = (y - y.mean()) / y.std()
    xs = (x - x.mean(axis=(0, 1))) / x.std(axis=(0, 1))
    return PanelData(y=ys, x=xs, unit_labels=panel.unit_labels,
                     time_labels=panel.time_labels, demeaned=False)


def _resolve_out_dir(args) -> Path:
    out = args.out or os.environ.get("GROUPPANEL_OUT") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


_OPTIM_KEYS = {"tol": float, "max_iter": int, "smoothing": float,
               "restarts": int, "seed": int}
_RUN_KEYS = {"method": str, "k": str, "lambda": str, "out": str,
             "standardize": lambda v: str(v).lower() in ("1", "true", "yes"),
             "k_max": int, "log_level": str}


def _apply_config(args) -> None:
    """Merge a flat key=value config into parsed args; flags win."""
    if not getattr(args, "config", None):
        return
    values = _read_config_file(args.config)
    for key, value in values.items():
        if key in _OPTIM_KEYS:
            if getattr(args, key, None) is None:
                setattr(args, key, _OPTIM_KEYS[key](value))
        elif key in _RUN_KEYS:
            dest = "lam" if key == "lambda" else key
            if getattr(args, dest, None) in (None, False):
                setattr(args, dest, _RUN_KEYS[key](value))
        else:
            raise DataFormatError(f"unknown config key {key!r}")


def _finalize_defaults(args) -> None:
    if getattr(args, "seed", None) is None:
        args.seed = 0
    if getattr(args, "method", None) is None:
        args.method = getattr(args, "_default_method", "fkm")
    if getattr(args, "k", None) is None:
        args.k = "auto"
    if getattr(args, "lam", None) is None:
        args.lam = "cv"
    if getattr(args, "k_max", None) is None:
        args.k_max = AUTO_K_MAX
    if getattr(args, "log_level", None):
        import logging

        logging.basicConfig(level=args.log_level.upper())


def _optim_options(args) -> OptimOptions:
    opts = OptimOptions(seed=args.seed)
    for key in ("tol", "max_iter", "smoothing", "restarts"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(opts, key, value)
    return opts


def _prepare_panel(args):
    panel = gio.load_panel_csv(args.data)
    if getattr(args, "standardize", False):
        panel = _standardize(panel)
    return within_transform(panel)


def _resolve_k(args, panel) -> int:
    if str(args.k) != "auto":
        return int(args.k)
    points = unit_ols(panel).beta
    k_max = min(args.k_max, panel.n_units - 1)
    res = gap_statistic(points, k_max, seed=args.seed)
    return res.selected_k


def _fit_with_method(panel, method, k, args):
    opts = _optim_options(args)
    if method == "F-Km":
        return feasible_kmeans(panel, k, seed=opts.seed, restarts=opts.restarts)
    fitter = {"SSP": classo_fit, "Km": kmeans_lasso_fit, "H-SSP": hssp_fit}[method]
    if str(args.lam) == "cv":
        cv = cross_validate_lambda(panel, k, method=method, opts=opts)
        fit = fitter(panel, k, cv.selected_lambda, opts)
        fit.cv = cv
        return fit
    return fitter(panel, k, float(args.lam), opts)


def cmd_fit(args) -> int:
    try:
        _apply_config(args)
        _finalize_defaults(args)
        out = _resolve_out_dir(args)
        panel = _prepare_panel(args)
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    method = _METHOD_ALIASES.get(args.method.lower())
    if method is None:
        print(f"input error: unknown method {args.method!r}", file=sys.stderr)
        return EXIT_INPUT
    stage = "k-selection"
    try:
        k = _resolve_k(args, panel)
        stage = "fit"
        fit = _fit_with_method(panel, method, k, args)
    except GroupPanelError as exc:
        print(f"estimation failure at {stage} ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
    gio.write_fit_result(fit, out, unit_labels=panel.unit_labels)
    with (out / "summary.txt").open("a", encoding="utf-8") as fh:
        fh.write(f"resolved_k: {k}\n")
        fh.write(f"seed: {args.seed}\n")
    print(f"fit written to {out} (method={method}, k={k}, lambda={fit.lam:g})")
    return EXIT_OK


def cmd_test(args) -> int:
    try:
        _apply_config(args)
        _finalize_defaults(args)
        out = _resolve_out_dir(args)
        panel = _prepare_panel(args)
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        k = _resolve_k(args, panel)
        fit = feasible_kmeans(panel, k, seed=args.seed)
        resid = residuals_from_centers(panel, fit.centers, fit.assignment)
        results = [s_test(panel, resid), r_test(panel, resid)]
        results += within_group_tests(panel, fit, "s")
        results += within_group_tests(panel, fit, "r")
    except DegenerateResidualsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GroupPanelError as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    gio.write_test_results(results, out / "tests.csv")
    for res in results[:2]:
        print(f"{res.scope}: statistic={res.statistic:.4f} "
              f"p={res.p_value:.4g} {res.stars}")
    print(f"test results written to {out / 'tests.csv'} (k={k})")
    return EXIT_OK


def cmd_select_k(args) -> int:
    try:
        _apply_config(args)
        _finalize_defaults(args)
        out = _resolve_out_dir(args)
        panel = _prepare_panel(args)
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        points = unit_ols(panel).beta
        k_max = min(args.k_max, panel.n_units - 1)
        if args.method == "gap":
            res = gap_statistic(points, k_max, seed=args.seed)
            gio.write_gap_result(res, out / "gap.csv")
            selected = res.selected_k
        else:
            res = index_select(points, args.method, k_max, seed=args.seed)
            gio.write_index_scores(res, out / "selectk.csv")
            selected = res.selected_k
    except GroupPanelError as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"selected k = {selected} ({args.method})")
    return EXIT_OK


_SIM_INT_KEYS = ("n_units", "n_periods", "n_covariates", "k_true", "reps",
                 "master_seed", "k_max", "cv_folds", "n_jobs")
_SIM_FLOAT_KEYS = ("eta_variance", "noise_variance", "alpha_level")


def _sim_config_from_mapping(values: dict) -> SimConfig:
    kwargs = {}
    for key, val in values.items():
        if key in _SIM_INT_KEYS:
            kwargs[key] = int(val)
        elif key in _SIM_FLOAT_KEYS:
            kwargs[key] = float(val)
        elif key == "centers_true":
            if isinstance(val, str):
                rows = [row for row in val.split(";") if row.strip()]
                kwargs[key] = tuple(
                    tuple(float(v) for v in row.split(",")) for row in rows
                )
            else:
                kwargs[key] = tuple(tuple(float(v) for v in row) for row in val)
        elif key in ("estimators", "tests", "selectors"):
            if isinstance(val, str):
                kwargs[key] = tuple(v.strip() for v in val.split(",") if v.strip())
            else:
                kwargs[key] = tuple(val)
        elif key == "reps_completed":
            continue
        else:
            raise DataFormatError(f"unknown simulation config key {key!r}")
    return SimConfig(**kwargs)


def cmd_simulate(args) -> int:
    out = _resolve_out_dir(args)
    try:
        values = _read_config_file(args.config)
        if args.jobs is not None:
            values["n_jobs"] = args.jobs
        elif "n_jobs" not in values:
            values["n_jobs"] = os.cpu_count() or 1
        if args.seed is not None:
            values["master_seed"] = args.seed
        config = _sim_config_from_mapping(values)
    except (DataFormatError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    table = run_replications(config)
    written = gio.write_metrics_tables(table, out)
    print(f"wrote {len(written)} artifacts to {out} "
          f"({table.reps_completed}/{config.reps} replications)")
    if table.reps_completed < 0.9 * config.reps:
        print("partial simulation: more than 10% of replications failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grouppanel",
        description="Latent group structure in linear panels: fit, test, "
                    "select the number of groups, and run simulations.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--data", required=True, help="long-format CSV path")
        p.add_argument("--config", default=None,
                       help="flat key=value file; flags win over file values")
        p.add_argument("--out", default=None, help="output directory "
                       "(default: $GROUPPANEL_OUT or '.')")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--standardize", action="store_true",
                       help="z-score y and covariates before fitting")
        p.add_argument("--log-level", dest="log_level", default=None)
        for key, caster in (("tol", float), ("max-iter", int),
                            ("smoothing", float), ("restarts", int)):
            p.add_argument(f"--{key}", dest=key.replace("-", "_"),
                           type=caster, default=None,
                           help="optimizer option (see docs)")

    fit = sub.add_parser("fit", help="estimate slopes, centers, and groups")
    add_common(fit)
    fit.add_argument("--method", default=None,
                     help="ssp | km | fkm | hssp (default fkm)")
    fit.add_argument("--k", default=None, help="number of groups or 'auto'")
    fit.add_argument("--lambda", dest="lam", default=None,
                     help="penalty weight or 'cv'")
    fit.add_argument("--k-max", dest="k_max", type=int, default=None,
                     help="grid ceiling for --k auto (default 20)")
    fit.set_defaults(func=cmd_fit, _default_method="fkm")

    test = sub.add_parser("test", help="run heterogeneity tests")
    add_common(test)
    test.add_argument("--k", default=None, help="number of groups or 'auto'")
    test.add_argument("--k-max", dest="k_max", type=int, default=None)
    test.set_defaults(func=cmd_test)

    sel = sub.add_parser("select-k", help="choose the number of groups")
    add_common(sel)
    sel.add_argument("--method", default=None,
                     choices=["gap", "silhouette", "ch", "db"])
    sel.add_argument("--k-max", dest="k_max", type=int, default=None)
    sel.set_defaults(func=cmd_select_k, _default_method="gap")

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--config", required=True, help="flat key=value config "
                     "or a manifest.json from a previous run")
    sim.add_argument("--out", default=None)
    sim.add_argument("--seed", type=int, default=None,
                     help="override master_seed from the config")
    sim.add_argument("--jobs", type=int, default=None,
                     help="parallel replications (default from config)")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GroupPanelError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
