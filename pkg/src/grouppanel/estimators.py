"""Penalized group estimators for panels with latent group structure.

The objective couples a least-squares panel loss with a multiplicative
distance penalty that pulls each unit's slope toward one of K group
centers:

    (1/(NT)) sum_i sum_t (1/2)(y_it - b_i'x_it)^2
        + (lam/N) sum_i prod_k ||b_i - a_k||_2

Three fitters share one block-coordinate descent core and differ only in
the center step and in what the returned slope matrix contains:

* ``classo_fit``      -- weighted-mean center step; final slopes snapped
                         to their assigned (post-classification) center.
* ``hssp_fit``        -- same iteration, but the per-unit slopes are
                         returned unsnapped.
* ``kmeans_lasso_fit``-- center step replaced by a full k-means solve on
                         the current slope rows; slopes never snapped.

``feasible_kmeans`` skips the penalty entirely: unit OLS followed by
k-means on the estimated slopes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cluster import Centers, GroupAssignment, classify, kmeans
from .errors import ShapeMismatchError, TooFewPeriodsError
from .panel import (
    GRAM_CONDITION_LIMIT,
    CoefficientMatrix,
    PanelData,
    cross_moments,
    gram_matrices,
    unit_ols,
)

MAX_HALVINGS = 30

CV_GRID_MULTIPLIERS = (0.125, 0.25, 0.5, 1.0, 2.0)


@dataclass
class OptimOptions:
    """Knobs for the block-coordinate descent fitters."""

    tol: float = 1e-6
    max_iter: int = 500
    smoothing: float = 1e-8
    restarts: int = 10
    seed: int = 0
    initial_centers: Optional[np.ndarray] = None


@dataclass
class FitResult:
    """Output of any group fitter.

    ``beta`` holds the estimator's final slope rows; ``beta_unsnapped``
    retains the raw block-coordinate iterate so the heterogeneity-
    preserving variant can reuse a snapped fit without re-running.
    """

    beta: CoefficientMatrix
    centers: Centers
    assignment: GroupAssignment
    lam: float
    objective_trace: list
    converged: bool
    iterations: int
    method: str
    beta_unsnapped: Optional[CoefficientMatrix] = None
    cv: Optional["CvReport"] = None


@dataclass
class CvReport:
    """Held-out prediction losses over the lambda grid."""

    grid: np.ndarray
    fold_losses: np.ndarray  # (len(grid), folds)
    selected_lambda: float


# ---------------------------------------------------------------------------
# objective pieces


def _beta_array(beta) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(beta, "beta", beta), dtype=float))


def _center_array(centers) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(centers, "alpha", centers), dtype=float))


def _distances(beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    diff = beta[:, None, :] - alpha[None, :, :]
    return np.sqrt(np.einsum("nkp,nkp->nk", diff, diff))


def penalty_products(beta, centers) -> np.ndarray:
    """Per-unit products prod_k ||b_i - a_k||_2, shape (N,)."""
    return _distances(_beta_array(beta), _center_array(centers)).prod(axis=1)


def ppl_objective(data: PanelData, beta, centers, lam: float) -> float:
    """Penalized objective evaluated directly from the panel."""
    b = _beta_array(beta)
    alpha = _center_array(centers)
    if b.shape[0] != data.n_units or b.shape[1] != data.n_covariates:
        raise ShapeMismatchError("beta shape does not match panel")
    if alpha.shape[1] != data.n_covariates:
        raise ShapeMismatchError("centers shape does not match panel")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    resid = data.y - np.einsum("np,ntp->nt", b, data.x)
    n, t = data.y.shape
    loss = 0.5 * float(np.sum(resid**2)) / (n * t)
    pen = float(penalty_products(b, alpha).sum()) * lam / n
    return loss + pen


def penalty_gradient(beta_i, centers, smoothing: float = 1e-8) -> np.ndarray:
    """Gradient of prod_k ||b - a_k||_2 at one slope vector.

    Each norm in a denominator is floored at ``smoothing``, which removes
    the singularity at the centers.
    """
    b = np.asarray(beta_i, dtype=float).ravel()
    alpha = _center_array(centers)
    diff = b[None, :] - alpha  # (K, p)
    dists = np.linalg.norm(diff, axis=1)
    k = alpha.shape[0]
    grad = np.zeros_like(b)
    for j in range(k):
        loo = np.prod(np.delete(dists, j))
        grad += diff[j] / max(dists[j], smoothing) * loo
    return grad


def _penalty_grad_all(beta: np.ndarray, alpha: np.ndarray, smoothing: float) -> np.ndarray:
    """Vectorized penalty gradient for all units, shape (N, p)."""
    diff = beta[:, None, :] - alpha[None, :, :]  # (N, K, p)
    dists = np.sqrt(np.einsum("nkp,nkp->nk", diff, diff))  # (N, K)
    k = alpha.shape[0]
    grad = np.zeros_like(beta)
    for j in range(k):
        loo = np.prod(np.delete(dists, j, axis=1), axis=1)  # (N,)
        grad += diff[:, j, :] / np.maximum(dists[:, j], smoothing)[:, None] * loo[:, None]
    return grad


def _loo_product(dists: np.ndarray, kstar: np.ndarray) -> np.ndarray:
    """Product over centers excluding each unit's nearest one."""
    masked = dists.copy()
    masked[np.arange(dists.shape[0]), kstar] = 1.0
    return masked.prod(axis=1)


# ---------------------------------------------------------------------------
# block-coordinate descent core


class _PenalizedCore:
    """Shared state for one penalized fit: sufficient statistics and steps."""

    def __init__(self, data: PanelData, k: int, lam: float, opts: OptimOptions):
        self.data = data
        self.k = k
        self.lam = lam
        self.opts = opts
        self.n = data.n_units
        self.t = data.n_periods
        self.p = data.n_covariates
        self.grams = gram_matrices(data)  # (N, p, p)
        self.rhs = cross_moments(data)  # (N, p)
        self.yy = np.einsum("nt,nt->n", data.y, data.y)
        eig = np.linalg.eigvalsh(self.grams)
        self.step0 = (self.n * self.t) / np.maximum(eig[:, -1], 1e-12)

    def unit_losses(self, beta: np.ndarray) -> np.ndarray:
        quad = np.einsum("ni,nij,nj->n", beta, self.grams, beta)
        lin = np.einsum("ni,ni->n", beta, self.rhs)
        return (0.5 * self.yy - lin + 0.5 * quad) / (self.n * self.t)

    def unit_objectives(self, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        pen = _distances(beta, alpha).prod(axis=1)
        return self.unit_losses(beta) + self.lam / self.n * pen

    def objective(self, beta: np.ndarray, alpha: np.ndarray) -> float:
        return float(self.unit_objectives(beta, alpha).sum())

    def _unit_obj_at(self, trial: np.ndarray, idx: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        pen = _distances(trial, alpha).prod(axis=1)
        quad = np.einsum("ni,nij,nj->n", trial, self.grams[idx], trial)
        lin = np.einsum("ni,ni->n", trial, self.rhs[idx])
        out = (0.5 * self.yy[idx] - lin + 0.5 * quad) / (self.n * self.t)
        return out + self.lam / self.n * pen

    def beta_step(self, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """One proximal-gradient step per unit on the smoothed objective.

        Forward step on the loss plus the penalty factors other than the
        nearest center; backward (prox) step on the nearest-center norm
        with its product coefficient frozen, which is a soft threshold
        toward that center.  Steps are halved per unit until the exact
        per-unit objective does not increase, so the sweep never raises
        the total objective.
        """
        if self.lam == 0.0:
            return beta  # unit OLS already minimizes the loss exactly
        floor = self.opts.smoothing
        scale = self.lam / self.n
        diff = beta[:, None, :] - alpha[None, :, :]
        dists = np.sqrt(np.einsum("nkp,nkp->nk", diff, diff))
        kstar = np.argmin(dists, axis=1)
        rows = np.arange(self.n)
        loo = _loo_product(dists, kstar)
        grad = np.einsum("nij,nj->ni", self.grams, beta) - self.rhs
        grad /= self.n * self.t
        grad += scale * (
            _penalty_grad_all(beta, alpha, floor)
            - diff[rows, kstar]
            / np.maximum(dists[rows, kstar], floor)[:, None]
            * loo[:, None]
        )
        near = alpha[kstar]
        coef = scale * loo
        f0 = self.unit_objectives(beta, alpha)
        new = beta.copy()
        step = self.step0.copy()
        active = rows.copy()
        for _ in range(MAX_HALVINGS + 1):
            if active.size == 0:
                break
            z = beta[active] - step[active, None] * grad[active]
            w = z - near[active]
            wn = np.linalg.norm(w, axis=1)
            shrink = np.maximum(0.0, 1.0 - step[active] * coef[active] / np.maximum(wn, 1e-300))
            trial = near[active] + shrink[:, None] * w
            f_try = self._unit_obj_at(trial, active, alpha)
            ok = f_try <= f0[active] + 1e-18
            if ok.any():
                new[active[ok]] = trial[ok]
            active = active[~ok]
            step[active] *= 0.5
        return new

    def weighted_center_step(self, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """First-order-condition center update, damped to guarantee descent.

        Each center moves toward the weighted mean of all slope rows with
        weights prod_{l != k} ||b_i - a_l|| / max(||b_i - a_k||, floor);
        the step is halved toward the previous centers until the penalty
        total does not increase.
        """
        floor = self.opts.smoothing
        diff = beta[:, None, :] - alpha[None, :, :]
        dists = np.sqrt(np.einsum("nkp,nkp->nk", diff, diff))
        cand = alpha.copy()
        for j in range(self.k):
            loo = np.prod(np.delete(dists, j, axis=1), axis=1)
            w = loo / np.maximum(dists[:, j], floor)
            total = w.sum()
            if total > 0:
                cand[j] = (w[:, None] * beta).sum(axis=0) / total
        pen0 = _distances(beta, alpha).prod(axis=1).sum()
        scale = 1.0
        for _ in range(20):
            trial = alpha + scale * (cand - alpha)
            if _distances(beta, trial).prod(axis=1).sum() <= pen0 + 1e-15:
                return trial
            scale *= 0.5
        return alpha

    def kmeans_center_step(self, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Full k-means solve on the current slope rows, aligned to the
        previous center order."""
        sol = kmeans(beta, self.k, restarts=self.opts.restarts, seed=self.opts.seed)
        return _align_centers(sol.centers.alpha, alpha)


def _align_centers(cand: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Reorder candidate center rows to minimize total distance to ``ref``."""
    cost = np.linalg.norm(cand[:, None, :] - ref[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost.T)
    return cand[cols]


MAX_INNER_PASSES = 400


def _exact_beta_block_1d(core: _PenalizedCore, alpha: np.ndarray) -> np.ndarray:
    """Exact per-unit minimizer for one covariate and at most two centers.

    The per-unit objective is quadratic plus mu * prod_k |b - c_k|, a
    piecewise polynomial whose minimum lies at an interval stationary
    point or at a center; all candidates are evaluated in closed form.
    """
    a = core.grams[:, 0, 0] / (core.n * core.t)
    btil = core.rhs[:, 0] / core.grams[:, 0, 0]
    mu = core.lam / core.n
    c = np.sort(alpha[:, 0])
    if c.size == 1:
        c1 = c[0]
        cands = np.stack(
            [
                np.minimum(btil + mu / a, c1),  # stationary point left of the center
                np.maximum(btil - mu / a, c1),  # stationary point right of the center
                np.full_like(btil, c1),
            ],
            axis=1,
        )
    else:
        c1, c2 = float(c[0]), float(c[1])
        r_out = (a * btil + mu * (c1 + c2)) / (a + 2.0 * mu)
        denom_in = a - 2.0 * mu
        with np.errstate(divide="ignore", invalid="ignore"):
            r_in = (a * btil - mu * (c1 + c2)) / denom_in
        r_in = np.where(np.abs(denom_in) > 1e-14, r_in, c1)
        cands = np.stack(
            [
                np.minimum(r_out, c1),
                np.clip(r_in, c1, c2),
                np.maximum(r_out, c2),
                np.full_like(btil, c1),
                np.full_like(btil, c2),
            ],
            axis=1,
        )
    pen = np.ones_like(cands)
    for ck in alpha[:, 0]:
        pen *= np.abs(cands - ck)
    vals = 0.5 * a[:, None] * (cands - btil[:, None]) ** 2 + mu * pen
    best = cands[np.arange(core.n), np.argmin(vals, axis=1)]
    return best[:, None]


def _beta_block(core: _PenalizedCore, beta: np.ndarray, alpha: np.ndarray,
                tol: float) -> np.ndarray:
    """Per-unit slope update for fixed centers: exact in the scalar
    two-center case, otherwise proximal passes run to convergence."""
    if core.lam == 0.0:
        return beta
    if core.p == 1 and core.k <= 2:
        return _exact_beta_block_1d(core, alpha)
    current = beta
    for _ in range(MAX_INNER_PASSES):
        nxt = core.beta_step(current, alpha)
        delta = float(np.abs(nxt - current).max()) if nxt.size else 0.0
        current = nxt
        if delta < tol:
            break
    return current


def _run_descent(core: _PenalizedCore, center_step: str):
    opts = core.opts
    beta = unit_ols(core.data).beta.copy()
    if opts.initial_centers is not None:
        alpha = np.atleast_2d(np.asarray(opts.initial_centers, dtype=float)).copy()
        if alpha.shape != (core.k, core.p):
            raise ShapeMismatchError("initial_centers must be (k, p)")
    else:
        alpha = kmeans(beta, core.k, restarts=opts.restarts, seed=opts.seed).centers.alpha.copy()
    trace = [core.objective(beta, alpha)]
    converged = False
    iterations = 0
    alpha_hist = [alpha.copy()]
    for it in range(1, opts.max_iter + 1):
        beta_new = _beta_block(core, beta, alpha, opts.tol)
        if center_step == "kmeans":
            alpha_new = core.kmeans_center_step(beta_new, alpha)
            q = core.objective(beta_new, alpha_new)
            if q > trace[-1] + 1e-12:
                # a center jump that raises the objective stalls the descent;
                # retain the previous centers for this sweep
                alpha_new = alpha
                q = core.objective(beta_new, alpha_new)
        else:
            alpha_new = core.weighted_center_step(beta_new, alpha)
            q = core.objective(beta_new, alpha_new)
        if it % 4 == 0 and len(alpha_hist) >= 2:
            accel = _aitken(alpha_hist[-2], alpha_hist[-1], alpha_new)
            if accel is not None:
                beta_acc = _beta_block(core, beta_new, accel, opts.tol)
                q_acc = core.objective(beta_acc, accel)
                if q_acc <= trace[-1] + 1e-12:
                    beta_new, alpha_new, q = beta_acc, accel, q_acc
        delta = 0.0
        if beta_new.size:
            delta = max(delta, float(np.abs(beta_new - beta).max()))
        delta = max(delta, float(np.abs(alpha_new - alpha).max()))
        beta, alpha = beta_new, alpha_new
        alpha_hist.append(alpha.copy())
        if len(alpha_hist) > 3:
            alpha_hist.pop(0)
        trace.append(q)
        iterations = it
        if delta < opts.tol:
            converged = True
            break
    return beta, alpha, trace, converged, iterations


def _aitken(a0: np.ndarray, a1: np.ndarray, a2: np.ndarray):
    """Aitken extrapolation of a slowly contracting center sequence.

    Returns the extrapolated centers, or None when the sequence is not
    usably contracting; acceptance is safeguarded by the caller against
    the exact objective.
    """
    d1 = a1 - a0
    d2 = a2 - a1
    denom = d1 - d2
    if not np.any(np.abs(d2) > 0):
        return None
    safe = np.abs(denom) > 1e-12
    if not safe.any():
        return None
    corr = np.zeros_like(a2)
    np.divide(d2 * d2, denom, out=corr, where=safe)
    if not np.isfinite(corr).all():
        return None
    return a2 + corr


def _group_pooled_centers(core: _PenalizedCore, assignment: GroupAssignment,
                          fallback: np.ndarray) -> np.ndarray:
    """Post-classification centers: pooled OLS inside each assigned group."""
    alpha = fallback.copy()
    for j in range(core.k):
        idx = assignment.members(j)
        if idx.size == 0:
            continue
        gram = core.grams[idx].sum(axis=0)
        rhs = core.rhs[idx].sum(axis=0)
        eig = np.linalg.eigvalsh(gram)
        if eig[0] <= 0 or eig[-1] / max(eig[0], 1e-300) > GRAM_CONDITION_LIMIT:
            continue
        alpha[j] = np.linalg.solve(gram, rhs)
    return alpha


def _penalized_fit(data: PanelData, k: int, lam: float, opts: Optional[OptimOptions],
                   center_step: str, snap: bool, method: str, tag: str) -> FitResult:
    if not data.demeaned:
        raise ShapeMismatchError("fitters require a demeaned panel")
    if k < 1:
        raise ValueError("k must be at least 1")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    opts = opts or OptimOptions()
    core = _PenalizedCore(data, k, lam, opts)
    beta, alpha, trace, converged, iterations = _run_descent(core, center_step)
    assignment = classify(beta, alpha)
    if center_step == "weiszfeld":
        alpha = _group_pooled_centers(core, assignment, alpha)
    final_beta = alpha[assignment.labels] if snap else beta
    return FitResult(
        beta=CoefficientMatrix(beta=final_beta, estimator_tag=tag),
        centers=Centers(alpha=alpha),
        assignment=assignment,
        lam=lam,
        objective_trace=trace,
        converged=converged,
        iterations=iterations,
        method=method,
        beta_unsnapped=CoefficientMatrix(beta=beta, estimator_tag=tag),
    )


def classo_fit(data: PanelData, k: int, lam: float,
               opts: Optional[OptimOptions] = None) -> FitResult:
    """Penalized fit with homogeneous groups: slopes snap to their center.

    The center step follows the first-order condition of the penalty
    (a damped weighted-mean update); after classification the centers
    are re-estimated by pooled OLS within each assigned group and every
    unit's slope row is set to its group's center.  The raw iterate is
    kept in ``beta_unsnapped``.
    """
    return _penalized_fit(data, k, lam, opts, "weiszfeld", True, "SSP", "classo")


def hssp_fit(data: PanelData, k: int, lam: float,
             opts: Optional[OptimOptions] = None) -> FitResult:
    """Heterogeneity-preserving variant: same iteration as ``classo_fit``
    but the per-unit slope rows are returned unsnapped."""
    return _penalized_fit(data, k, lam, opts, "weiszfeld", False, "H-SSP", "hssp")


def kmeans_lasso_fit(data: PanelData, k: int, lam: float,
                     opts: Optional[OptimOptions] = None) -> FitResult:
    """Penalized fit whose center step is a full k-means solve on the
    current slope rows; slopes are never snapped to the centers."""
    return _penalized_fit(data, k, lam, opts, "kmeans", False, "Km", "kmeans-lasso")


def feasible_kmeans(data: PanelData, k: int, seed: int = 0, restarts: int = 10) -> FitResult:
    """Unit OLS followed by k-means on the estimated slope rows."""
    if not data.demeaned:
        raise ShapeMismatchError("feasible k-means requires a demeaned panel")
    beta = unit_ols(data)
    sol = kmeans(beta.beta, k, restarts=restarts, seed=seed)
    core_loss = float(
        0.5 * np.sum((data.y - np.einsum("np,ntp->nt", beta.beta, data.x)) ** 2)
        / (data.n_units * data.n_periods)
    )
    return FitResult(
        beta=beta,
        centers=sol.centers,
        assignment=sol.assignment,
        lam=0.0,
        objective_trace=[core_loss],
        converged=True,
        iterations=0,
        method="F-Km",
        beta_unsnapped=beta,
    )


_FITTERS = {
    "SSP": classo_fit,
    "Km": kmeans_lasso_fit,
    "H-SSP": hssp_fit,
}


def lambda_grid(t: int) -> np.ndarray:
    """Tuning grid {0.125, 0.25, 0.5, 1, 2} * T^(-1/3)."""
    return np.array(CV_GRID_MULTIPLIERS) * t ** (-1.0 / 3.0)


def cross_validate_lambda(data: PanelData, k: int, method: str = "Km",
                          folds: int = 10,
                          opts: Optional[OptimOptions] = None) -> CvReport:
    """Blocked k-fold selection of the penalty weight.

    Folds are contiguous time blocks in original order.  For each grid
    value the estimator is refit on the training periods (re-demeaned)
    and scored by mean squared prediction error on the held-out block,
    centered by the training means.  The smallest lambda attaining the
    minimal mean fold loss wins.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    t = data.n_periods
    if t < 2 * folds:
        raise TooFewPeriodsError(f"need T >= {2 * folds} periods for {folds} folds")
    if method not in _FITTERS:
        raise ValueError(f"method must be one of {sorted(_FITTERS)}")
    fitter = _FITTERS[method]
    grid = lambda_grid(t)
    blocks = np.array_split(np.arange(t), folds)
    fold_losses = np.empty((grid.size, folds))
    for f, test_idx in enumerate(blocks):
        mask = np.ones(t, dtype=bool)
        mask[test_idx] = False
        y_tr = data.y[:, mask]
        x_tr = data.x[:, mask, :]
        ym = y_tr.mean(axis=1, keepdims=True)
        xm = x_tr.mean(axis=1, keepdims=True)
        train = PanelData(
            y=y_tr - ym,
            x=x_tr - xm,
            unit_labels=data.unit_labels,
            time_labels=tuple(data.time_labels[i] for i in np.nonzero(mask)[0]),
            demeaned=True,
        )
        y_te = data.y[:, test_idx] - ym
        x_te = data.x[:, test_idx, :] - xm
        for g, lam in enumerate(grid):
            fit = fitter(train, k, float(lam), opts)
            pred = np.einsum("np,ntp->nt", fit.beta.beta, x_te)
            fold_losses[g, f] = float(np.mean((y_te - pred) ** 2))
    mean_loss = fold_losses.mean(axis=1)
    selected = float(grid[int(np.argmin(mean_loss))])
    return CvReport(grid=grid, fold_losses=fold_losses, selected_lambda=selected)
