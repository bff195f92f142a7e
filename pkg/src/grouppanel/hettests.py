"""Heterogeneity tests: cross-sectional and within-group chi-squared
statistics built from per-unit auxiliary regressions of residuals on
regressors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy.special import gammaincc

from .errors import DegenerateResidualsError, ShapeMismatchError
from .estimators import FitResult
from .panel import PanelData, ResidualMatrix, residuals_from_centers

MIN_GROUP_SIZE = 10
DEGENERATE_FLOOR = 1e-14


@dataclass
class UnitTScore:
    """Per-unit auxiliary regression summary (one entry per covariate)."""

    t: np.ndarray
    sigma_hat: np.ndarray
    gamma_hat: np.ndarray


@dataclass
class TestResult:
    statistic: float
    df: int
    p_value: float
    per_unit: np.ndarray
    scope: str
    n_used: int

    @property
    def stars(self) -> str:
        return significance_stars(self.p_value)


@dataclass
class SkippedGroup:
    """Placeholder for a group too small or too degenerate to test."""

    group: int
    size: int
    reason: str
    scope: str = ""

    def __post_init__(self):
        if not self.scope:
            self.scope = f"group({self.group + 1})"


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail chi-squared probability via the regularized incomplete gamma."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if df < 1:
        raise ValueError("df must be a positive integer")
    return float(gammaincc(df / 2.0, x / 2.0))


def significance_stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def _marginal_stats(x: np.ndarray, eps: np.ndarray, labels):
    """Per-unit, per-covariate auxiliary regression pieces.

    Returns (t_scores, t_r2, gamma, sigma) each of shape (N, p) where
    ``t_r2`` holds T * R^2 of the regression of eps on each covariate.
    Raises DegenerateResidualsError naming the first offending unit.
    """
    t_len = eps.shape[1]
    xx = np.einsum("ntp,ntp->np", x, x)
    xe = np.einsum("ntp,nt->np", x, eps)
    ee = np.einsum("nt,nt->n", eps, eps)
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = xe / xx
        vv = ee[:, None] - xe**2 / xx
    bad = (
        (xx < DEGENERATE_FLOOR)
        | (vv < DEGENERATE_FLOOR)
        | (ee[:, None] < DEGENERATE_FLOOR)
        | ~np.isfinite(vv)
    )
    if bad.any():
        i = int(np.nonzero(bad.any(axis=1))[0][0])
        raise DegenerateResidualsError(labels[i])
    sigma = np.sqrt(vv / t_len)
    t_scores = xe / (sigma * np.sqrt(xx))
    t_r2 = t_len * (xe**2 / xx) / ee[:, None]
    return t_scores, t_r2, gamma, sigma


def unit_t(data: PanelData, unit: int, eps_i: np.ndarray) -> UnitTScore:
    """Auxiliary regression t-score for one unit (per covariate).

    gamma regresses the residual on the covariate; sigma is the root
    mean square of what is left; t is the covariance of residual and
    covariate scaled to unit variance under homogeneity.
    """
    if data.n_periods < 3:
        raise ShapeMismatchError("unit_t needs at least three periods")
    eps = np.asarray(eps_i, dtype=float).reshape(1, -1)
    if eps.shape[1] != data.n_periods:
        raise ShapeMismatchError("residual vector length must equal T")
    x = data.x[unit : unit + 1]
    t_scores, _, gamma, sigma = _marginal_stats(x, eps, [data.unit_labels[unit]])
    return UnitTScore(t=t_scores[0], sigma_hat=sigma[0], gamma_hat=gamma[0])


def _s_statistic(comp: np.ndarray) -> float:
    """Standardize per-covariate sums of centered components into chi-squared.

    ``comp`` is (N, p) holding t^2 - 1 or T r^2 - 1.  Per covariate:
    S_j = N^(-1/2) sum_i comp_ij / s_j with s_j^2 = N^(-1) sum comp_ij^2;
    the statistic is sum_j S_j^2.  Sums are compensated so the reduction
    is order-independent.
    """
    n = comp.shape[0]
    stat = 0.0
    for j in range(comp.shape[1]):
        col = comp[:, j]
        ssq = math.fsum(float(c) * float(c) for c in col) / n
        if ssq <= 0:
            continue
        num = math.fsum(float(c) for c in col) / math.sqrt(n)
        stat += num * num / ssq
    return stat


def _run_test(x: np.ndarray, eps: np.ndarray, labels, kind: str, scope: str) -> TestResult:
    t_scores, t_r2, _, _ = _marginal_stats(x, eps, labels)
    if kind == "s":
        comp = t_scores**2 - 1.0
        per_unit = t_scores
    else:
        comp = t_r2 - 1.0
        per_unit = t_r2
    stat = _s_statistic(comp)
    df = comp.shape[1]
    return TestResult(
        statistic=float(stat),
        df=df,
        p_value=chi2_sf(float(stat), df),
        per_unit=per_unit,
        scope=scope,
        n_used=comp.shape[0],
    )


def s_test(data: PanelData, residuals: ResidualMatrix) -> TestResult:
    """Cross-sectional heterogeneity test from squared t-scores."""
    eps = residuals.eps
    if eps.shape != data.y.shape:
        raise ShapeMismatchError("residual matrix must match the panel")
    return _run_test(data.x, eps, data.unit_labels, "s", "cross-section")


def r_test(data: PanelData, residuals: ResidualMatrix) -> TestResult:
    """Cross-sectional fit test from auxiliary-regression R-squared values."""
    eps = residuals.eps
    if eps.shape != data.y.shape:
        raise ShapeMismatchError("residual matrix must match the panel")
    return _run_test(data.x, eps, data.unit_labels, "r", "cross-section")


def within_group_tests(data: PanelData, fit: FitResult,
                       kind: str = "s") -> List[Union[TestResult, SkippedGroup]]:
    """Run the s- or r-statistic inside each estimated group.

    Residuals are recomputed against the group's center.  Groups smaller
    than ``MIN_GROUP_SIZE`` or with degenerate residuals are reported as
    SkippedGroup entries; the batch never aborts.
    """
    if kind not in ("s", "r"):
        raise ValueError("kind must be 's' or 'r'")
    resid = residuals_from_centers(data, fit.centers, fit.assignment)
    out: List[Union[TestResult, SkippedGroup]] = []
    for k in range(fit.centers.k):
        idx = fit.assignment.members(k)
        size = int(idx.size)
        if size < MIN_GROUP_SIZE:
            out.append(SkippedGroup(group=k, size=size, reason="group-too-small"))
            continue
        labels = [data.unit_labels[i] for i in idx]
        try:
            res = _run_test(data.x[idx], resid.eps[idx], labels, kind, f"group({k + 1})")
        except DegenerateResidualsError:
            out.append(SkippedGroup(group=k, size=size, reason="degenerate-residuals"))
            continue
        out.append(res)
    return out
