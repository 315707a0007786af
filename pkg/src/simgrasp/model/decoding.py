"""Per-point grasp decoding from raw grasp-head channels."""

from __future__ import annotations

import numpy as np

from ..grasp import Grasp, GripperModel, canonicalize_close, rotations_from_vectors
from ..losses import DEPTH, SCORE, VA, VC, WIDTH


def decode_poses(points, grasp_out, idx, gripper: GripperModel, parallel_tol: float = 1e-6):
    """Vectorized poses at rows ``idx``; rows with zero or parallel direction channels are dropped.

    Returns ``(kept_idx, centers, rotations, widths, depths, scores)``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    va = grasp_out[idx, VA]
    vc = grasp_out[idx, VC]
    na = np.linalg.norm(va, axis=1)
    nc = np.linalg.norm(vc, axis=1)
    ok = (na > 0) & (nc > 0)
    cosang = np.abs(np.sum(va * vc, axis=1)) / np.where(ok, na * nc, 1.0)
    ok &= cosang <= 1.0 - parallel_tol
    idx, va, vc = idx[ok], va[ok], vc[ok]
    if len(idx) == 0:
        return idx, np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0), np.zeros(0), np.zeros(0)
    rot = rotations_from_vectors(va, vc)
    # closing is symmetric; flip to the canonical half-space, keeping a right-handed frame
    flip = np.where(rot[:, 0, 1] < 0, -1.0, 1.0)
    rot[:, :, 1] *= flip[:, None]
    rot[:, :, 2] *= flip[:, None]
    depth = np.clip(grasp_out[idx, DEPTH], 0.0, gripper.finger_length)
    width = np.clip(grasp_out[idx, WIDTH], 0.0, gripper.max_width)
    score = np.clip(grasp_out[idx, SCORE], 0.0, 1.0)
    centers = np.asarray(points, float)[idx] + depth[:, None] * rot[:, :, 0]
    return idx, centers, rot, width, depth, score


def decode_grasps(points, grasp_out, mask, gripper: GripperModel, parallel_tol: float = 1e-6):
    """Per-point grasps (``None`` outside ``mask`` or where the two directions are parallel)."""
    out = [None] * len(points)
    idx, centers, rot, width, depth, score = decode_poses(points, grasp_out, np.nonzero(mask)[0], gripper,
                                                          parallel_tol)
    for j, i in enumerate(idx):
        c = canonicalize_close(rot[j, :, 1])
        out[i] = Grasp(centers[j], rot[j, :, 0].copy(), c, float(width[j]), float(depth[j]), float(score[j]), 0)
    return out
