"""Point-network building blocks with explicit forward/backward passes.

Geometry (sampling, grouping, interpolation) depends only on point
coordinates, so it is computed once per cloud and stored as sparse operators;
the learned layers then reduce to dense products and segment maxima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree


def farthest_point_sample(xyz: np.ndarray, k: int) -> np.ndarray:
    """Indices of ``k`` points chosen by farthest-point sampling.

    Starts from the point farthest from the centroid, so the selected set
    does not depend on the input order (up to exact distance ties).
    """
    n = len(xyz)
    k = min(int(k), n)
    out = np.empty(k, dtype=np.int64)
    d = np.sum((xyz - xyz.mean(axis=0)) ** 2, axis=1)
    cur = int(np.argmax(d))
    dist = np.full(n, np.inf)
    for i in range(k):
        out[i] = cur
        dist = np.minimum(dist, np.sum((xyz - xyz[cur]) ** 2, axis=1))
        cur = int(np.argmax(dist))
    return out


def ball_group(src: np.ndarray, centers: np.ndarray, radius: float, nsample: int) -> np.ndarray:
    """``(K, nsample)`` neighbor indices into ``src``: nearest points within ``radius``.

    Slots beyond the available neighbors repeat the nearest one, which leaves
    the pooled maximum unchanged.
    """
    tree = cKDTree(src)
    k = min(nsample, len(src))
    d, idx = tree.query(centers, k=k, distance_upper_bound=radius)
    d = d.reshape(len(centers), k)
    idx = idx.reshape(len(centers), k)
    miss = ~np.isfinite(d)
    idx = np.where(miss, idx[:, :1], idx)
    # a center farther than radius from every source point still takes its nearest one
    lonely = miss[:, 0]
    if lonely.any():
        idx[lonely] = tree.query(centers[lonely], k=1)[1][:, None]
    if k < nsample:
        idx = np.concatenate([idx, np.repeat(idx[:, :1], nsample - k, axis=1)], axis=1)
    return idx


def interpolation_matrix(src: np.ndarray, dst: np.ndarray, k: int = 3, eps: float = 1e-8) -> sp.csr_matrix:
    """Sparse ``(len(dst), len(src))`` inverse-distance weights over the ``k`` nearest sources."""
    k = min(k, len(src))
    d, idx = cKDTree(src).query(dst, k=k)
    d = d.reshape(len(dst), k)
    idx = idx.reshape(len(dst), k)
    w = 1.0 / (d + eps)
    w /= w.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(len(dst)), k)
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(len(dst), len(src)))


def gather_matrix(idx: np.ndarray, n_src: int) -> sp.csr_matrix:
    flat = idx.ravel()
    return sp.csr_matrix((np.ones(len(flat)), (np.arange(len(flat)), flat)), shape=(len(flat), n_src))


@dataclass
class StageGeometry:
    """One abstraction stage: sampled centers, grouped neighbors, back-interpolation."""

    centers: np.ndarray
    xyz: np.ndarray
    gather: sp.csr_matrix
    rel: np.ndarray
    nsample: int
    upsample: sp.csr_matrix


def stage_geometry(src_xyz, k, radius, nsample) -> StageGeometry:
    centers = farthest_point_sample(src_xyz, k)
    xyz = src_xyz[centers]
    idx = ball_group(src_xyz, xyz, radius, nsample)
    rel = (src_xyz[idx] - xyz[:, None, :]).reshape(-1, 3) / radius
    return StageGeometry(centers, xyz, gather_matrix(idx, len(src_xyz)), rel, nsample,
                         interpolation_matrix(xyz, src_xyz))


def dense_forward(x, w, b, relu: bool):
    z = x @ w + b
    return np.maximum(z, 0.0) if relu else z


def mlp_forward(x, layers, final_relu: bool = True):
    """Returns output and the list of layer inputs/outputs needed by :func:`mlp_backward`."""
    cache = []
    for i, (w, b) in enumerate(layers):
        relu = final_relu or i < len(layers) - 1
        y = dense_forward(x, w, b, relu)
        cache.append((x, y, relu))
        x = y
    return x, cache


def mlp_backward(g, layers, cache):
    """Parameter gradients ``[(dW, db), ...]`` and the input gradient."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        x, y, relu = cache[i]
        if relu:
            g = g * (y > 0)
        grads[i] = (x.T @ g, g.sum(axis=0))
        g = g @ layers[i][0].T
    return grads, g


def group_max_forward(h, nsample):
    """Max over consecutive blocks of ``nsample`` rows."""
    blocks = h.reshape(-1, nsample, h.shape[1])
    arg = blocks.argmax(axis=1)
    return np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :], arg


def group_max_backward(g, arg, nsample):
    k, c = g.shape
    out = np.zeros((k, nsample, c))
    np.put_along_axis(out, arg[:, None, :], g[:, None, :], axis=1)
    return out.reshape(k * nsample, c)
