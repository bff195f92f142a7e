"""Choosing the number of groups: gap statistic plus the silhouette,
Calinski-Harabasz, and Davies-Bouldin indices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import _as_points, kmeans
from .errors import KGridTooLargeError, MethodNeedsK2Error, ShapeMismatchError
from .rng import generator

DEFAULT_B_REFS = 50


@dataclass
class GapResult:
    k_grid: np.ndarray
    log_w: np.ndarray
    ref_log_w_mean: np.ndarray
    s_k: np.ndarray
    gap: np.ndarray
    selected_k: int
    b_refs: int


@dataclass
class IndexScores:
    method: str
    k_grid: np.ndarray
    scores: np.ndarray
    selected_k: int


def within_dispersion(points, assignment) -> float:
    """Pooled within-cluster dispersion around the cluster means.

    Equals the half-normalized pairwise form
    sum_k (1/(2 N_k)) sum_{i,j in G_k} ||b_i - b_j||^2; empty groups
    contribute zero.
    """
    pts = _as_points(points)
    labels = np.asarray(getattr(assignment, "labels", assignment), dtype=int)
    if labels.shape[0] != pts.shape[0]:
        raise ShapeMismatchError("assignment does not cover the point set")
    total = 0.0
    for k in np.unique(labels):
        grp = pts[labels == k]
        if grp.shape[0] == 0:
            continue
        center = grp.mean(axis=0)
        total += float(np.sum((grp - center) ** 2))
    return total


def _log_dispersion(points: np.ndarray, k: int, restarts: int, seed: int) -> float:
    sol = kmeans(points, k, restarts=restarts, seed=seed)
    with np.errstate(divide="ignore"):
        return float(np.log(sol.within_ss))


def gap_statistic(points, k_max: int, b_refs: int = DEFAULT_B_REFS, seed: int = 0,
                  restarts: int = 10) -> GapResult:
    """Gap statistic over K = 1..k_max with a uniform reference distribution.

    References are drawn uniformly on the per-coordinate bounding box of
    the points.  The simulation band is s_k = sd_k * sqrt(1 + 1/B) and
    the selected K is the smallest one with
    gap[k] >= gap[k+1] - s[k+1], falling back to k_max.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if k_max < 1:
        raise KGridTooLargeError("k_max must be at least 1")
    if k_max > n - 1:
        raise KGridTooLargeError(f"k_max={k_max} exceeds N-1={n - 1}")
    if b_refs < 1:
        raise ValueError("b_refs must be at least 1")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    rng = generator(seed, 0)
    refs = rng.uniform(lo, hi, size=(b_refs, n, pts.shape[1]))
    ks = np.arange(1, k_max + 1)
    log_w = np.empty(k_max)
    ref_logs = np.empty((b_refs, k_max))
    for j, k in enumerate(ks):
        log_w[j] = _log_dispersion(pts, int(k), restarts, seed)
        for b in range(b_refs):
            ref_logs[b, j] = _log_dispersion(refs[b], int(k), restarts, seed)
    ref_mean = ref_logs.mean(axis=0)
    sd = ref_logs.std(axis=0)
    s_k = sd * np.sqrt(1.0 + 1.0 / b_refs)
    gap = ref_mean - log_w
    selected = int(ks[-1])
    for j in range(k_max - 1):
        if gap[j] >= gap[j + 1] - s_k[j + 1]:
            selected = int(ks[j])
            break
    return GapResult(
        k_grid=ks,
        log_w=log_w,
        ref_log_w_mean=ref_mean,
        s_k=s_k,
        gap=gap,
        selected_k=selected,
        b_refs=b_refs,
    )


def _silhouette(pts: np.ndarray, labels: np.ndarray, k: int) -> float:
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijp,ijp->ij", diff, diff))
    sil = np.zeros(n)
    for i in range(n):
        own = labels[i]
        same = labels == own
        n_own = same.sum()
        if n_own <= 1:
            sil[i] = 0.0
            continue
        a = dist[i, same].sum() / (n_own - 1)
        b = np.inf
        for j in range(k):
            if j == own:
                continue
            other = labels == j
            if other.any():
                b = min(b, dist[i, other].mean())
        sil[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(sil.mean())


def _calinski_harabasz(pts: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    n, k = pts.shape[0], centers.shape[0]
    overall = pts.mean(axis=0)
    between = 0.0
    within = 0.0
    for j in range(k):
        grp = pts[labels == j]
        if grp.shape[0] == 0:
            continue
        between += grp.shape[0] * float(np.sum((centers[j] - overall) ** 2))
        within += float(np.sum((grp - centers[j]) ** 2))
    if within <= 0:
        return np.inf
    return (between / (k - 1)) / (within / (n - k))


def _davies_bouldin(pts: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    k = centers.shape[0]
    spread = np.zeros(k)
    for j in range(k):
        grp = pts[labels == j]
        if grp.shape[0]:
            spread[j] = float(np.mean(np.linalg.norm(grp - centers[j], axis=1)))
    db = 0.0
    for j in range(k):
        worst = 0.0
        for m in range(k):
            if m == j:
                continue
            d = float(np.linalg.norm(centers[j] - centers[m]))
            if d > 0:
                worst = max(worst, (spread[j] + spread[m]) / d)
            else:
                worst = np.inf
        db += worst
    return db / k


def index_select(points, method: str, k_max: int, seed: int = 0,
                 restarts: int = 10) -> IndexScores:
    """Pick K by a classical internal index; grids start at K = 2."""
    if method not in ("silhouette", "ch", "db"):
        raise ValueError("method must be one of 'silhouette', 'ch', 'db'")
    if k_max < 2:
        raise MethodNeedsK2Error(f"{method} needs k_max >= 2")
    pts = _as_points(points)
    ks = np.arange(2, k_max + 1)
    scores = np.empty(ks.size)
    for j, k in enumerate(ks):
        sol = kmeans(pts, int(k), restarts=restarts, seed=seed)
        labels = sol.assignment.labels
        centers = sol.centers.alpha
        if method == "silhouette":
            scores[j] = _silhouette(pts, labels, int(k))
        elif method == "ch":
            scores[j] = _calinski_harabasz(pts, labels, centers)
        else:
            scores[j] = _davies_bouldin(pts, labels, centers)
    if method == "db":
        selected = int(ks[int(np.argmin(scores))])
    else:
        selected = int(ks[int(np.argmax(scores))])
    return IndexScores(method=method, k_grid=ks, scores=scores, selected_k=selected)
