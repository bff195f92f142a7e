"""Lloyd k-means with k-means++ seeding, nearest-center classification,
and the Rand index.

Distances are squared Euclidean inside the k-means objective and plain
Euclidean in classification; the two argmins coincide.  All routines are
deterministic given their seed: restart r of ``kmeans(seed=s)`` draws
from the stream keyed by ``(s, r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import KTooLargeError, LengthMismatchError, ShapeMismatchError
from .rng import generator

KMEANS_MAX_ITER = 300
KMEANS_SHIFT_TOL = 1e-8


@dataclass(frozen=True)
class Centers:
    """K group centers, one row per group."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        if not np.isfinite(alpha).all():
            raise ShapeMismatchError("centers contain non-finite entries")

    @property
    def k(self) -> int:
        return self.alpha.shape[0]

    def min_pairwise_distance(self) -> float:
        if self.k < 2:
            return np.inf
        d = np.linalg.norm(self.alpha[:, None, :] - self.alpha[None, :, :], axis=2)
        return float(d[np.triu_indices(self.k, 1)].min())


@dataclass(frozen=True)
class GroupAssignment:
    """Zero-based group labels for N units.

    Labels are stored 0-based for array indexing; file artifacts write
    them 1-based.
    """

    labels: np.ndarray
    n_groups: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1:
            raise ShapeMismatchError("labels must be one-dimensional")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_groups):
            raise ShapeMismatchError("labels out of range for n_groups")

    @property
    def n_units(self) -> int:
        return self.labels.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_groups)

    def members(self, k: int) -> np.ndarray:
        return np.nonzero(self.labels == k)[0]


@dataclass(frozen=True)
class KmeansSolution:
    centers: Centers
    assignment: GroupAssignment
    within_ss: float
    restarts_used: int


def _as_points(points) -> np.ndarray:
    pts = np.asarray(getattr(points, "beta", points), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkp,nkp->nk", diff, diff)


def _plusplus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = np.einsum("np,np->n", points - centers[0], points - centers[0])
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = points[idx]
        cand = np.einsum("np,np->n", points - centers[j], points - centers[j])
        d2 = np.minimum(d2, cand)
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    k = centers.shape[0]
    labels = np.zeros(points.shape[0], dtype=int)
    for _ in range(max_iter):
        labels = np.argmin(_sq_dists(points, centers), axis=1)
        # empty-cluster repair: reseed at the point farthest from its center;
        # with fewer distinct points than centers there is nothing to gain,
        # so zero-distance repairs are skipped
        for j in range(k):
            if not np.any(labels == j):
                d2 = np.einsum("np,np->n", points - centers[labels],
                               points - centers[labels])
                far = int(np.argmax(d2))
                if d2[far] <= 0:
                    continue
                centers[j] = points[far]
                labels[far] = j
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = points[members].mean(axis=0)
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < tol:
            break
    labels = np.argmin(_sq_dists(points, centers), axis=1)
    within = float(np.einsum("np,np->", points - centers[labels], points - centers[labels]))
    return centers, labels, within


def kmeans(points, k: int, restarts: int = 10, seed: int = 0,
           max_iter: int = KMEANS_MAX_ITER, tol: float = KMEANS_SHIFT_TOL) -> KmeansSolution:
    """Best-of-restarts Lloyd iteration from k-means++ seeds.

    Ties across restarts resolve to the earliest restart, so output is
    deterministic given ``seed``.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if k > n:
        raise KTooLargeError(f"k={k} exceeds the {n} available points")
    best = None
    for r in range(max(1, restarts)):
        rng = generator(seed, r)
        init = _plusplus_seed(pts, k, rng)
        centers, labels, within = _lloyd(pts, init.copy(), max_iter, tol)
        if best is None or within < best[2] - 1e-12:
            best = (centers, labels, within, r + 1)
    centers, labels, within, used = best
    return KmeansSolution(
        centers=Centers(alpha=centers),
        assignment=GroupAssignment(labels=labels, n_groups=k),
        within_ss=within,
        restarts_used=used,
    )


def classify(beta, centers) -> GroupAssignment:
    """Map each slope row to its nearest center (ties to the lowest index)."""
    pts = _as_points(beta)
    alpha = np.atleast_2d(np.asarray(getattr(centers, "alpha", centers), dtype=float))
    if pts.shape[1] != alpha.shape[1]:
        raise ShapeMismatchError("points and centers disagree on dimension")
    labels = np.argmin(_sq_dists(pts, alpha), axis=1)
    return GroupAssignment(labels=labels, n_groups=alpha.shape[0])


def rand_index(a, b) -> float:
    """Fraction of unit pairs on which two partitions agree.

    Counts pairs co-grouped in both partitions plus pairs separated in
    both, over all C(N, 2) pairs.  Label-permutation invariant.
    """
    la = np.asarray(getattr(a, "labels", a), dtype=int)
    lb = np.asarray(getattr(b, "labels", b), dtype=int)
    if la.shape != lb.shape:
        raise LengthMismatchError("assignments cover different numbers of units")
    n = la.shape[0]
    if n < 2:
        return 1.0
    # contingency counts via flattened joint labels
    ka = la.max() + 1
    joint = np.bincount(la * (lb.max() + 1) + lb)
    same_both = int((joint * (joint - 1) // 2).sum())
    ca = np.bincount(la)
    cb = np.bincount(lb)
    same_a = int((ca * (ca - 1) // 2).sum())
    same_b = int((cb * (cb - 1) // 2).sum())
    total = n * (n - 1) // 2
    tp = same_both
    fn = same_a - tp
    fp = same_b - tp
    tn = total - tp - fn - fp
    return (tp + tn) / total
