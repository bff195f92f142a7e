"""Monte Carlo engine: data generation, replication orchestration, and
aggregation into per-table summaries.

Replication r of a run with master seed m draws from the stream keyed by
(m, r), so results are identical for any execution order or degree of
parallelism.  Draw order within a replication is x, then the noise, then
the slope deviations.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Tuple

import numpy as np
from joblib import Parallel, delayed

from .cluster import Centers, GroupAssignment, rand_index
from .errors import ShapeMismatchError
from .estimators import (
    FitResult,
    OptimOptions,
    classo_fit,
    cross_validate_lambda,
    feasible_kmeans,
    hssp_fit,
    kmeans_lasso_fit,
)
from .hettests import SkippedGroup, r_test, s_test, within_group_tests
from .panel import (
    CoefficientMatrix,
    PanelData,
    make_panel,
    residuals_from_centers,
    within_transform,
)
from .rng import generator
from .selection import gap_statistic, index_select

DEFAULT_CENTERS = ((0.5,), (2.0,))

PENALIZED = ("SSP", "Km", "H-SSP")
ALL_ESTIMATORS = ("SSP", "Km", "F-Km", "H-SSP")
ALL_SELECTORS = ("gap", "silhouette", "ch", "db")


@dataclass
class SimConfig:
    n_units: int = 100
    n_periods: int = 100
    n_covariates: int = 1
    k_true: int = 2
    centers_true: Tuple[Tuple[float, ...], ...] = DEFAULT_CENTERS
    eta_variance: float = 0.2
    noise_variance: float = 1.0
    reps: int = 200
    master_seed: int = 0
    estimators: Tuple[str, ...] = ALL_ESTIMATORS
    tests: Tuple[str, ...] = ()
    selectors: Tuple[str, ...] = ()
    alpha_level: float = 0.05
    k_max: int = 5
    cv_folds: int = 10
    n_jobs: int = 1

    def __post_init__(self):
        self.centers_true = tuple(tuple(float(v) for v in row) for row in self.centers_true)
        self.estimators = tuple(self.estimators)
        self.tests = tuple(self.tests)
        self.selectors = tuple(self.selectors)
        if len(self.centers_true) != self.k_true:
            raise ValueError("centers_true must have k_true rows")
        if any(len(row) != self.n_covariates for row in self.centers_true):
            raise ValueError("centers_true rows must have n_covariates entries")
        if self.eta_variance < 0:
            raise ValueError("eta_variance must be nonnegative")
        if self.reps < 1:
            raise ValueError("reps must be positive")
        bad = [e for e in self.estimators if e not in ALL_ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}")
        bad = [t for t in self.tests if t not in ("s", "r")]
        if bad:
            raise ValueError(f"unknown tests {bad}")
        bad = [s for s in self.selectors if s not in ALL_SELECTORS]
        if bad:
            raise ValueError(f"unknown selectors {bad}")
        if self.k_true > 1:
            arr = np.asarray(self.centers_true)
            d = np.linalg.norm(arr[:, None] - arr[None, :], axis=2)
            if d[np.triu_indices(self.k_true, 1)].min() <= 0:
                raise ValueError("true centers must be pairwise distinct")

    @property
    def regime(self) -> str:
        return "null" if self.eta_variance == 0 else "alternative"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["centers_true"] = [list(row) for row in self.centers_true]
        d["estimators"] = list(self.estimators)
        d["tests"] = list(self.tests)
        d["selectors"] = list(self.selectors)
        return d


@dataclass
class TruthRecord:
    beta_true: CoefficientMatrix
    assignment_true: GroupAssignment
    centers_true: Centers


@dataclass
class MetricsTable:
    """Aggregated replication metrics for one simulated scenario."""

    config: SimConfig
    estimator_rows: Dict[str, Dict[str, float]]
    test_rows: Dict[str, Dict[str, float]]
    selection_rows: Dict[str, Dict[int, float]]
    reps_completed: int
    failures: List[str] = field(default_factory=list)


def true_group_sizes(n: int, k: int) -> np.ndarray:
    """Contiguous blocks of floor(N/K), remainder into the last group."""
    base = n // k
    sizes = np.full(k, base, dtype=int)
    sizes[-1] += n - base * k
    return sizes


def generate_dgp(config: SimConfig, rep_seed: int) -> Tuple[PanelData, TruthRecord]:
    """Simulate one raw (not yet demeaned) panel plus the generating truth."""
    n, t, p = config.n_units, config.n_periods, config.n_covariates
    rng = generator(config.master_seed, rep_seed)
    x = rng.standard_normal((n, t, p))
    eps = rng.standard_normal((n, t)) * math.sqrt(config.noise_variance)
    eta = rng.normal(0.0, math.sqrt(config.eta_variance), size=(n, p))
    sizes = true_group_sizes(n, config.k_true)
    labels = np.repeat(np.arange(config.k_true), sizes)
    alpha = np.asarray(config.centers_true, dtype=float)
    beta = alpha[labels] + eta
    y = np.einsum("np,ntp->nt", beta, x) + eps
    truth = TruthRecord(
        beta_true=CoefficientMatrix(beta=beta, estimator_tag="truth"),
        assignment_true=GroupAssignment(labels=labels, n_groups=config.k_true),
        centers_true=Centers(alpha=alpha),
    )
    return make_panel(y, x), truth


def mse(beta_hat, truth: TruthRecord) -> float:
    """Mean squared slope error over units and covariates."""
    bh = np.atleast_2d(np.asarray(getattr(beta_hat, "beta", beta_hat), dtype=float))
    bt = truth.beta_true.beta
    if bh.shape != bt.shape:
        raise ShapeMismatchError(f"shape {bh.shape} does not match truth {bt.shape}")
    return float(np.mean((bh - bt) ** 2))


def align_centers(estimated: np.ndarray, true: np.ndarray) -> np.ndarray:
    """Permute estimated center rows to best match the true centers."""
    k = true.shape[0]
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(k)):
        cost = float(np.sum((estimated[list(perm)] - true) ** 2))
        if cost < best_cost:
            best, best_cost = perm, cost
    return estimated[list(best)]


def _fit_estimator(name: str, panel: PanelData, config: SimConfig,
                   opts: OptimOptions) -> FitResult:
    if name == "F-Km":
        return feasible_kmeans(panel, config.k_true, seed=opts.seed, restarts=opts.restarts)
    cv = cross_validate_lambda(panel, config.k_true, method=name,
                               folds=config.cv_folds, opts=opts)
    fitter = {"SSP": classo_fit, "Km": kmeans_lasso_fit, "H-SSP": hssp_fit}[name]
    fit = fitter(panel, config.k_true, cv.selected_lambda, opts)
    fit.cv = cv
    return fit


def _one_replication(config: SimConfig, rep: int) -> dict:
    raw, truth = generate_dgp(config, rep)
    panel = within_transform(raw)
    opts = OptimOptions(seed=rep)
    out: dict = {"rep": rep}

    fits: Dict[str, FitResult] = {}
    needed = set(config.estimators)
    if config.tests:
        needed.add("F-Km")
    for name in sorted(needed):
        fits[name] = _fit_estimator(name, panel, config, opts)

    for name in config.estimators:
        fit = fits[name]
        aligned = align_centers(fit.centers.alpha, truth.centers_true.alpha)
        err1 = float(np.mean((aligned[0] - truth.centers_true.alpha[0]) ** 2))
        out[f"{name}/mse_beta"] = mse(fit.beta, truth)
        out[f"{name}/mse_alpha1"] = err1
        out[f"{name}/rand"] = rand_index(fit.assignment, truth.assignment_true)

    if config.tests:
        fkm = fits["F-Km"]
        resid = residuals_from_centers(panel, fkm.centers, fkm.assignment)
        for kind in config.tests:
            runner = s_test if kind == "s" else r_test
            res = runner(panel, resid)
            out[f"{kind}/cs_reject"] = float(res.p_value < config.alpha_level)
            wg = within_group_tests(panel, fkm, kind)
            flags = [float(r.p_value < config.alpha_level)
                     for r in wg if not isinstance(r, SkippedGroup)]
            out[f"{kind}/wg_reject"] = float(np.mean(flags)) if flags else float("nan")

    if config.selectors:
        points = fits.get("F-Km")
        beta_pts = points.beta.beta if points is not None else None
        if beta_pts is None:
            from .panel import unit_ols

            beta_pts = unit_ols(panel).beta
        for sel in config.selectors:
            if sel == "gap":
                res = gap_statistic(beta_pts, config.k_max, seed=rep)
                out["gap/selected"] = res.selected_k
            else:
                res = index_select(beta_pts, sel, config.k_max, seed=rep)
                out[f"{sel}/selected"] = res.selected_k
    return out


def _safe_replication(config: SimConfig, rep: int) -> dict:
    try:
        return _one_replication(config, rep)
    except Exception as exc:  # recorded, never aborts the batch
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}


def run_replications(config: SimConfig) -> MetricsTable:
    """Run all replications and aggregate means and frequencies.

    Per-replication failures are excluded from the aggregates and listed
    in ``failures``.  Seeds are pre-assigned per replication, so the
    result does not depend on ``n_jobs``.
    """
    reps = range(config.reps)
    if config.n_jobs == 1:
        results = [_safe_replication(config, r) for r in reps]
    else:
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_safe_replication)(config, r) for r in reps
        )
    results.sort(key=lambda d: d["rep"])
    good = [r for r in results if "error" not in r]
    failures = [f"rep {r['rep']}: {r['error']}" for r in results if "error" in r]

    estimator_rows: Dict[str, Dict[str, float]] = {}
    for name in config.estimators:
        estimator_rows[name] = {
            "mse_beta": _mean(good, f"{name}/mse_beta"),
            "mse_alpha1": _mean(good, f"{name}/mse_alpha1"),
            "rand_index": _mean(good, f"{name}/rand"),
        }
    test_rows: Dict[str, Dict[str, float]] = {}
    for kind in config.tests:
        test_rows[kind] = {
            "cs_rejection": _mean(good, f"{kind}/cs_reject"),
            "wg_rejection": _mean(good, f"{kind}/wg_reject"),
        }
    selection_rows: Dict[str, Dict[int, float]] = {}
    for sel in config.selectors:
        key = f"{sel}/selected"
        counts = np.zeros(config.k_max + 1)
        total = 0
        for r in good:
            if key in r:
                counts[int(r[key])] += 1
                total += 1
        freqs = counts / total if total else counts
        selection_rows[sel] = {k: float(freqs[k]) for k in range(1, config.k_max + 1)}

    return MetricsTable(
        config=config,
        estimator_rows=estimator_rows,
        test_rows=test_rows,
        selection_rows=selection_rows,
        reps_completed=len(good),
        failures=failures,
    )


def _mean(rows: List[dict], key: str) -> float:
    vals = [r[key] for r in rows if key in r and not math.isnan(r[key])]
    return float(np.mean(vals)) if vals else float("nan")
