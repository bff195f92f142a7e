"""Long-format CSV ingestion and artifact writers.

File schemas are documented in docs/formats.md.  All writers emit a
fixed column order with deterministic float formatting so a rerun with
the same seed produces byte-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DataFormatError
from .estimators import CvReport, FitResult
from .hettests import SkippedGroup
from .panel import PanelData
from .selection import GapResult, IndexScores
from .simulate import MetricsTable

PANEL_FLOAT_FMT = "%.17g"
TABLE_FLOAT_FMT = "%.12g"


def _fmt(value: float, fmt: str = TABLE_FLOAT_FMT) -> str:
    return fmt % value


def load_panel_csv(path: Union[str, Path]) -> PanelData:
    """Read a long-format panel: header ``unit,time,y,x1,...,xp``.

    Rows may appear in any order; the loader sorts by (unit, time),
    validates balance (every unit observed at every period exactly
    once), and rejects missing or non-finite cells.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except Exception as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    cols = list(frame.columns)
    for required in ("unit", "time", "y"):
        if required not in cols:
            raise DataFormatError(f"missing required column '{required}'")
    x_cols: List[str] = []
    j = 1
    while f"x{j}" in cols:
        x_cols.append(f"x{j}")
        j += 1
    if not x_cols:
        raise DataFormatError("missing required column 'x1'")
    extra = [c for c in cols if c not in ("unit", "time", "y", *x_cols)]
    if any(c.startswith("x") and c[1:].isdigit() for c in extra):
        gap = next(c for c in extra if c.startswith("x") and c[1:].isdigit())
        raise DataFormatError(f"covariate columns must be contiguous x1..xp; found {gap}")

    frame = frame.sort_values(["unit", "time"], kind="mergesort")
    units = frame["unit"].drop_duplicates().tolist()
    times = sorted(frame["time"].drop_duplicates().tolist())
    n, t = len(units), len(times)
    if len(frame) != n * t:
        raise DataFormatError(
            f"unbalanced panel: {len(frame)} rows but {n} units x {t} periods"
        )
    counts = frame.groupby("unit", sort=True)["time"].count()
    if (counts != t).any():
        bad = counts[counts != t].index[0]
        raise DataFormatError(f"unbalanced panel: unit {bad!r} has {counts[bad]} rows")
    dup = frame.duplicated(subset=["unit", "time"])
    if dup.any():
        row = frame[dup].iloc[0]
        raise DataFormatError(f"duplicate cell for unit {row['unit']!r}, time {row['time']!r}")

    values = frame[["y", *x_cols]].to_numpy(dtype=float)
    if not np.isfinite(values).all():
        raise DataFormatError("panel contains missing or non-finite values")
    y = values[:, 0].reshape(n, t)
    x = values[:, 1:].reshape(n, t, len(x_cols))
    return PanelData(
        y=y,
        x=x,
        unit_labels=tuple(str(u) for u in units),  # already in row order
        time_labels=tuple(str(s) for s in times),
        demeaned=False,
    )


def write_panel_csv(data: PanelData, path: Union[str, Path]) -> None:
    """Write a panel back to the long format with full float precision."""
    path = Path(path)
    p = data.n_covariates
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        header = ",".join(["unit", "time", "y"] + [f"x{j + 1}" for j in range(p)])
        fh.write(header + "\n")
        for i, unit in enumerate(data.unit_labels):
            for s, stamp in enumerate(data.time_labels):
                cells = [str(unit), str(stamp), _fmt(data.y[i, s], PANEL_FLOAT_FMT)]
                cells += [_fmt(data.x[i, s, j], PANEL_FLOAT_FMT) for j in range(p)]
                fh.write(",".join(cells) + "\n")


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def write_fit_result(fit: FitResult, out_dir: Union[str, Path],
                     unit_labels: Optional[Sequence[str]] = None) -> None:
    """Emit beta.csv, centers.csv, assignment.csv, summary.txt (and cv.csv)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    beta = fit.beta.beta
    n, p = beta.shape
    labels = list(unit_labels) if unit_labels is not None else [f"u{i + 1}" for i in range(n)]

    _write_rows(
        out / "beta.csv",
        ["unit"] + [f"beta{j + 1}" for j in range(p)],
        ([labels[i]] + [_fmt(beta[i, j]) for j in range(p)] for i in range(n)),
    )
    alpha = fit.centers.alpha
    _write_rows(
        out / "centers.csv",
        ["group"] + [f"alpha{j + 1}" for j in range(p)],
        ([k + 1] + [_fmt(alpha[k, j]) for j in range(p)] for k in range(alpha.shape[0])),
    )
    _write_rows(
        out / "assignment.csv",
        ["unit", "group"],
        ([labels[i], int(fit.assignment.labels[i]) + 1] for i in range(n)),
    )
    with (out / "summary.txt").open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"method: {fit.method}\n")
        fh.write(f"k: {fit.centers.k}\n")
        fh.write(f"lambda: {_fmt(fit.lam)}\n")
        fh.write(f"iterations: {fit.iterations}\n")
        fh.write(f"converged: {fit.converged}\n")
        fh.write(f"objective: {_fmt(fit.objective_trace[-1])}\n")
    if fit.cv is not None:
        write_cv_report(fit.cv, out / "cv.csv")


def write_cv_report(cv: CvReport, path: Union[str, Path]) -> None:
    folds = cv.fold_losses.shape[1]
    header = ["lambda"] + [f"fold{f + 1}" for f in range(folds)] + ["mean", "selected"]
    rows = []
    means = cv.fold_losses.mean(axis=1)
    for g, lam in enumerate(cv.grid):
        rows.append(
            [_fmt(lam)]
            + [_fmt(v) for v in cv.fold_losses[g]]
            + [_fmt(means[g]), int(lam == cv.selected_lambda)]
        )
    _write_rows(Path(path), header, rows)


def write_test_results(results: Sequence, path: Union[str, Path]) -> None:
    """TestResult / SkippedGroup rows: scope, statistic, df, p_value, n_used, stars."""
    rows = []
    for res in results:
        if isinstance(res, SkippedGroup):
            rows.append([res.scope, "", "", "", res.size, f"skipped:{res.reason}"])
        else:
            rows.append(
                [res.scope, _fmt(res.statistic), res.df, _fmt(res.p_value),
                 res.n_used, res.stars]
            )
    _write_rows(Path(path), ["scope", "statistic", "df", "p_value", "n_used", "stars"], rows)


def write_gap_result(res: GapResult, path: Union[str, Path]) -> None:
    rows = []
    for j, k in enumerate(res.k_grid):
        rows.append(
            [int(k), _fmt(res.log_w[j]), _fmt(res.ref_log_w_mean[j]),
             _fmt(res.s_k[j]), _fmt(res.gap[j]), int(k == res.selected_k)]
        )
    _write_rows(Path(path), ["k", "log_w", "ref_log_w_mean", "s_k", "gap", "selected"], rows)


def write_index_scores(res: IndexScores, path: Union[str, Path]) -> None:
    rows = [
        [int(k), _fmt(res.scores[j]), int(k == res.selected_k)]
        for j, k in enumerate(res.k_grid)
    ]
    _write_rows(Path(path), ["k", "score", "selected"], rows)


_TABLE_FILES = {
    "table1_beta_mse.csv": "mse_beta",
    "table2_alpha_mse.csv": "mse_alpha1",
    "table3_rand.csv": "rand_index",
}


def write_metrics_tables(table: MetricsTable, out_dir: Union[str, Path]) -> List[str]:
    """Emit the per-table CSV analogs plus digest.md and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = table.config
    written: List[str] = []

    def base_row(name):
        return [cfg.n_units, cfg.n_periods, cfg.regime, name]

    if table.estimator_rows:
        for fname, metric in _TABLE_FILES.items():
            rows = [
                base_row(name) + [_fmt(vals[metric]), table.reps_completed]
                for name, vals in table.estimator_rows.items()
            ]
            _write_rows(out / fname, ["N", "T", "regime", "estimator", metric, "reps"], rows)
            written.append(fname)
    if "gap" in table.selection_rows:
        freq = table.selection_rows["gap"].get(cfg.k_true, 0.0)
        _write_rows(
            out / "table4_gapfreq.csv",
            ["N", "T", "regime", "selector", "freq_true_k", "reps"],
            [base_row("gap") + [_fmt(freq), table.reps_completed]],
        )
        written.append("table4_gapfreq.csv")
    for kind, fname in (("s", "table5_s_test.csv"), ("r", "table6_r_test.csv")):
        if kind in table.test_rows:
            vals = table.test_rows[kind]
            rows = [
                base_row("CS") + [_fmt(vals["cs_rejection"]), table.reps_completed],
                base_row("WG") + [_fmt(vals["wg_rejection"]), table.reps_completed],
            ]
            _write_rows(out / fname, ["N", "T", "regime", "scope", "rejection", "reps"], rows)
            written.append(fname)
    if table.selection_rows:
        fname = "table8_k1.csv" if cfg.k_true == 1 else "table7_k2.csv"
        header = ["N", "T", "regime", "selector"] + [f"freq_k{k}" for k in range(1, cfg.k_max + 1)]
        rows = []
        for sel, freqs in table.selection_rows.items():
            rows.append(base_row(sel) + [_fmt(freqs[k]) for k in range(1, cfg.k_max + 1)])
        _write_rows(out / fname, header, rows)
        written.append(fname)

    digest = [f"# Simulation digest", "",
              f"- N={cfg.n_units}, T={cfg.n_periods}, p={cfg.n_covariates}, "
              f"K0={cfg.k_true}, regime={cfg.regime}",
              f"- reps completed: {table.reps_completed}/{cfg.reps}", ""]
    for name, vals in table.estimator_rows.items():
        digest.append(
            f"- {name}: MSE(beta)={vals['mse_beta']:.6g}, "
            f"MSE(alpha1)={vals['mse_alpha1']:.6g}, RI={vals['rand_index']:.4f}"
        )
    for kind, vals in table.test_rows.items():
        digest.append(
            f"- {kind}-test: CS rejection={vals['cs_rejection']:.4f}, "
            f"WG rejection={vals['wg_rejection']:.4f}"
        )
    for sel, freqs in table.selection_rows.items():
        digest.append(f"- {sel}: freq(K={cfg.k_true})={freqs.get(cfg.k_true, 0.0):.4f}")
    if table.failures:
        digest.append("")
        digest.append(f"- failures: {len(table.failures)}")
    (out / "digest.md").write_text("\n".join(digest) + "\n", encoding="utf-8")
    written.append("digest.md")

    manifest = {"config": cfg.to_dict(), "reps_completed": table.reps_completed}
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append("manifest.json")
    return written
