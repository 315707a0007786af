"""Flat-kernel mean shift over per-point instance embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted


@dataclass
class ClusterResult:
    """``instance_ids`` are contiguous from 1; 0 marks points excluded from clustering."""

    instance_ids: np.ndarray
    modes: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.modes)


def bin_seeds(x: np.ndarray, bin_size: float) -> np.ndarray:
    """One data point per occupied grid bin: the one closest to the bin's mean.

    Choosing by distance rather than position in the array keeps the seed set
    independent of point order.
    """
    keys = np.floor(x / bin_size).astype(np.int64)
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    nb = inv.max() + 1
    means = np.zeros((nb, x.shape[1]))
    np.add.at(means, inv, x)
    means /= np.bincount(inv, minlength=nb)[:, None]
    d = np.sum((x - means[inv]) ** 2, axis=1)
    # lexsort: by bin, then distance, then coordinates for exact ties
    order = np.lexsort(tuple(x.T[::-1]) + (d, inv))
    first = order[np.r_[True, inv[order][1:] != inv[order][:-1]]]
    return x[first]


def meanshift(embeddings, bandwidth: float = 1.5, max_iters: int = 300, tol: float | None = None,
              bin_seeding: bool = True) -> ClusterResult:
    """Cluster rows of ``embeddings`` with a flat kernel of radius ``bandwidth``.

    Each seed moves to the mean of the points within ``bandwidth`` until its
    shift drops below ``tol``; converged modes closer than ``bandwidth / 2``
    are merged (denser modes win) and each point joins its nearest mode.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("need a nonempty (M, D) embedding array")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    tol = 1e-3 * bandwidth if tol is None else tol
    tree = cKDTree(x)
    seeds = bin_seeds(x, bandwidth / 2.0) if bin_seeding else x.copy()

    modes = seeds.copy()
    counts = np.zeros(len(modes), dtype=np.int64)
    active = np.ones(len(modes), dtype=bool)
    for _ in range(max_iters):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        nbrs = tree.query_ball_point(modes[idx], bandwidth)
        for j, nb in zip(idx, nbrs):
            counts[j] = len(nb)
            if not nb:
                active[j] = False
                continue
            new = x[nb].mean(axis=0)
            if np.linalg.norm(new - modes[j]) < tol:
                active[j] = False
            modes[j] = new
    # final densities at converged positions
    counts = np.array([len(nb) for nb in tree.query_ball_point(modes, bandwidth)], dtype=np.int64)

    order = np.lexsort(tuple(modes.T[::-1]) + (-counts,))
    kept = []
    for j in order:
        if counts[j] == 0:
            continue
        if kept and np.min(np.linalg.norm(modes[kept] - modes[j], axis=1)) < bandwidth / 2.0:
            continue
        kept.append(j)
    centers = modes[kept]
    _, nearest = cKDTree(centers).query(x, k=1)
    nearest = np.atleast_1d(nearest)
    used = np.unique(nearest)
    remap = np.zeros(len(centers), dtype=np.int64)
    remap[used] = np.arange(1, len(used) + 1)
    return ClusterResult(remap[nearest], centers[used])


def cluster_instances(embeddings, foreground, bandwidth: float = 1.5, **kwargs) -> ClusterResult:
    """Mean shift over foreground points only; background points get id 0."""
    fg = np.asarray(foreground, dtype=bool)
    ids = np.zeros(len(fg), dtype=np.int64)
    if not fg.any():
        return ClusterResult(ids, np.zeros((0, np.asarray(embeddings).shape[1])))
    res = meanshift(np.asarray(embeddings)[fg], bandwidth, **kwargs)
    ids[fg] = res.instance_ids
    return ClusterResult(ids, res.modes)


class FlatMeanShift(ClusterMixin, BaseEstimator):
    """Estimator wrapper around :func:`meanshift`."""

    def __init__(self, bandwidth=1.5, max_iters=300, tol=None, bin_seeding=True):
        self.bandwidth = bandwidth
        self.max_iters = max_iters
        self.tol = tol
        self.bin_seeding = bin_seeding

    def fit(self, X, y=None):
        X = check_array(X)
        res = meanshift(X, self.bandwidth, self.max_iters, self.tol, self.bin_seeding)
        self.cluster_centers_ = res.modes
        self.labels_ = res.instance_ids
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X)
        _, nearest = cKDTree(self.cluster_centers_).query(X, k=1)
        return np.atleast_1d(nearest) + 1
