"""Balanced-panel container, the within transformation, and least-squares baselines.

A panel holds an outcome matrix ``y`` of shape (N, T) and a regressor
array ``x`` of shape (N, T, p).  All estimators downstream assume the
one-way within transformation has been applied, which eliminates unit
fixed effects.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AlreadyDemeanedError,
    DegenerateUnitWarning,
    EmptySubsetError,
    ShapeMismatchError,
    SingularGramError,
    UnassignedUnitError,
)

GRAM_CONDITION_LIMIT = 1e12
DEMEAN_TOL = 1e-10

ESTIMATOR_TAGS = ("unit-ols", "classo", "kmeans-lasso", "hssp", "truth")


@dataclass(frozen=True)
class PanelData:
    """A balanced panel: every unit observed at the same T periods.

    ``demeaned`` records whether the within transformation has been
    applied; when True each unit's time means of y and of every
    covariate are zero to within ``DEMEAN_TOL``.
    """

    y: np.ndarray
    x: np.ndarray
    unit_labels: tuple
    time_labels: tuple
    demeaned: bool = False

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "unit_labels", tuple(self.unit_labels))
        object.__setattr__(self, "time_labels", tuple(self.time_labels))
        if y.ndim != 2 or x.ndim != 3:
            raise ShapeMismatchError("y must be (N, T) and x must be (N, T, p)")
        n, t = y.shape
        if x.shape[0] != n or x.shape[1] != t:
            raise ShapeMismatchError(f"x shape {x.shape} does not match y shape {y.shape}")
        if len(self.unit_labels) != n:
            raise ShapeMismatchError("unit_labels length must equal N")
        if len(self.time_labels) != t:
            raise ShapeMismatchError("time_labels length must equal T")
        if not (np.isfinite(y).all() and np.isfinite(x).all()):
            raise ShapeMismatchError("panel contains non-finite values")
        if self.demeaned:
            if np.abs(y.mean(axis=1)).max() > DEMEAN_TOL:
                raise ShapeMismatchError("demeaned flag set but y has nonzero unit means")
            if np.abs(x.mean(axis=1)).max() > DEMEAN_TOL:
                raise ShapeMismatchError("demeaned flag set but x has nonzero unit means")

    @property
    def n_units(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[2]


def make_panel(y, x, unit_labels=None, time_labels=None, demeaned=False) -> PanelData:
    """Convenience constructor generating default labels."""
    y = np.asarray(y, dtype=float)
    n, t = y.shape
    if unit_labels is None:
        unit_labels = tuple(f"u{i + 1}" for i in range(n))
    if time_labels is None:
        time_labels = tuple(f"t{s + 1}" for s in range(t))
    return PanelData(y=y, x=x, unit_labels=unit_labels, time_labels=time_labels, demeaned=demeaned)


@dataclass(frozen=True)
class CoefficientMatrix:
    """Per-unit slope matrix (N, p) with a tag naming the producing estimator."""

    beta: np.ndarray
    estimator_tag: str = "unit-ols"

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "beta", beta)
        if not np.isfinite(beta).all():
            raise ShapeMismatchError("coefficient matrix contains non-finite entries")
        if self.estimator_tag not in ESTIMATOR_TAGS:
            raise ValueError(f"unknown estimator tag {self.estimator_tag!r}")


@dataclass(frozen=True)
class PooledCoefficient:
    """A single slope vector shared across units, plus a dispersion diagnostic."""

    beta: np.ndarray
    covariance_scale: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).ravel()
        object.__setattr__(self, "beta", beta)
        if not np.isfinite(beta).all():
            raise ShapeMismatchError("pooled coefficient contains non-finite entries")
        if self.covariance_scale < 0:
            raise ValueError("covariance_scale must be nonnegative")


@dataclass(frozen=True)
class ResidualMatrix:
    """Residuals (N, T) together with the kind of fit that produced them."""

    eps: np.ndarray
    source: str = "unit-ols"

    def __post_init__(self):
        eps = np.asarray(self.eps, dtype=float)
        object.__setattr__(self, "eps", eps)
        if eps.ndim != 2:
            raise ShapeMismatchError("residual matrix must be (N, T)")
        if self.source not in ("unit-ols", "group-center", "pooled"):
            raise ValueError(f"unknown residual source {self.source!r}")


def within_transform(data: PanelData) -> PanelData:
    """Subtract each unit's time means from y and from every covariate.

    Raises AlreadyDemeanedError if the flag is already set.  Emits a
    DegenerateUnitWarning for any covariate column that is constant
    within a unit (its demeaned column is identically zero).
    """
    if data.demeaned:
        raise AlreadyDemeanedError("panel is already demeaned")
    y = data.y - data.y.mean(axis=1, keepdims=True)
    x = data.x - data.x.mean(axis=1, keepdims=True)
    flat = np.ptp(data.x, axis=1) == 0  # (N, p)
    if flat.any():
        units = np.unique(np.nonzero(flat)[0])
        names = ", ".join(str(data.unit_labels[i]) for i in units[:5])
        warnings.warn(
            f"constant covariate column(s) for unit(s) {names}; demeaned column is all zeros",
            DegenerateUnitWarning,
            stacklevel=2,
        )
    return PanelData(
        y=y, x=x, unit_labels=data.unit_labels, time_labels=data.time_labels, demeaned=True
    )


def gram_matrices(data: PanelData) -> np.ndarray:
    """Per-unit Gram matrices x_i'x_i of shape (N, p, p)."""
    return np.einsum("ntp,ntq->npq", data.x, data.x)


def cross_moments(data: PanelData) -> np.ndarray:
    """Per-unit cross moments x_i'y_i of shape (N, p)."""
    return np.einsum("ntp,nt->np", data.x, data.y)


def _check_gram(gram: np.ndarray, unit) -> None:
    eig = np.linalg.eigvalsh(gram)
    lo, hi = eig[0], eig[-1]
    if hi <= 0 or lo <= 0 or hi / lo > GRAM_CONDITION_LIMIT:
        raise SingularGramError(unit)


def unit_ols(data: PanelData) -> CoefficientMatrix:
    """Unit-by-unit OLS slopes on demeaned data.

    Row i solves the normal equations (x_i'x_i) b = x_i'y_i via a
    symmetric factorization; a unit whose Gram matrix has condition
    number above ``GRAM_CONDITION_LIMIT`` raises SingularGramError.
    """
    _require_demeaned(data)
    grams = gram_matrices(data)
    rhs = cross_moments(data)
    eig = np.linalg.eigvalsh(grams)  # (N, p) ascending
    bad = (eig[:, 0] <= 0) | (eig[:, -1] / np.maximum(eig[:, 0], 1e-300) > GRAM_CONDITION_LIMIT)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise SingularGramError(data.unit_labels[i])
    beta = np.linalg.solve(grams, rhs[..., None])[..., 0]
    return CoefficientMatrix(beta=beta, estimator_tag="unit-ols")


def pooled_ols(data: PanelData) -> PooledCoefficient:
    """Pooled OLS over the stacked panel: one slope vector for everyone."""
    _require_demeaned(data)
    gram = np.einsum("ntp,ntq->pq", data.x, data.x)
    rhs = np.einsum("ntp,nt->p", data.x, data.y)
    _check_gram(gram, "pooled")
    beta = np.linalg.solve(gram, rhs)
    resid = data.y - np.einsum("p,ntp->nt", beta, data.x)
    scale = float(np.mean(resid**2))
    return PooledCoefficient(beta=beta, covariance_scale=scale)


def mean_group(data: PanelData, subset: Optional[Sequence[int]] = None) -> PooledCoefficient:
    """Arithmetic mean of unit OLS slopes over ``subset`` (default: all units)."""
    rows = unit_ols(data).beta
    if subset is None:
        sel = rows
    else:
        idx = np.asarray(list(subset), dtype=int)
        if idx.size == 0:
            raise EmptySubsetError("mean_group called with an empty subset")
        sel = rows[idx]
    beta = sel.mean(axis=0)
    scale = float(np.mean((sel - beta) ** 2))
    return PooledCoefficient(beta=beta, covariance_scale=scale)


def residuals_from_centers(data: PanelData, centers, assignment) -> ResidualMatrix:
    """Residuals when each unit's slope is its assigned group center."""
    alpha = np.atleast_2d(np.asarray(getattr(centers, "alpha", centers), dtype=float))
    labels = np.asarray(getattr(assignment, "labels", assignment), dtype=int)
    if labels.shape[0] != data.n_units:
        raise UnassignedUnitError("assignment does not cover all units")
    if labels.min() < 0 or labels.max() >= alpha.shape[0]:
        bad = int(np.nonzero((labels < 0) | (labels >= alpha.shape[0]))[0][0])
        raise UnassignedUnitError(data.unit_labels[bad])
    fitted = np.einsum("np,ntp->nt", alpha[labels], data.x)
    return ResidualMatrix(eps=data.y - fitted, source="group-center")


def fixed_effects(raw: PanelData, beta: CoefficientMatrix) -> np.ndarray:
    """Recover unit intercepts from the raw (pre-transform) panel."""
    if raw.demeaned:
        raise AlreadyDemeanedError("fixed effects require the raw panel")
    b = beta.beta
    return raw.y.mean(axis=1) - np.einsum("np,np->n", b, raw.x.mean(axis=1))


def _require_demeaned(data: PanelData) -> None:
    if not data.demeaned:
        raise ShapeMismatchError("operation requires a demeaned panel; call within_transform first")
