"""Parallel-jaw grasp representation and candidate generation.

A grasp is ``(t, v_A, v_C, width, depth, score)``.  Its rotation is
``[v_A, v_C, v_A x v_C]``, so the gripper frame has x along the approach
direction, y along the closing direction and z along the binormal.

Gripper frame conventions (origin at the grasp center ``t``)::

    closing region   -L/2 <= x <= L/2,        |y| <  w/2,            |z| <= H/2
    fingers          -L/2 <= x <= L/2,  w/2 <= |y| <= w/2 + T,       |z| <= H/2
    base bar   -L/2 - B <= x <  -L/2,         |y| <= w/2 + T,        |z| <= H/2

with ``L`` finger length, ``T`` finger thickness, ``H`` finger height and
``B`` base depth.  The surface anchor of a grasp is ``t - depth * v_A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

PARALLEL_TOL = 1e-6


@dataclass(frozen=True)
class GripperModel:
    max_width: float = 0.085
    finger_length: float = 0.04
    finger_thickness: float = 0.01
    finger_height: float = 0.02
    base_depth: float = 0.02

    def __post_init__(self):
        for name in ("max_width", "finger_length", "finger_thickness", "finger_height", "base_depth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gripper {name} must be strictly positive")

    @property
    def outer_radius(self) -> float:
        """Radius of a ball around the grasp center containing the whole gripper at max width."""
        x = self.finger_length / 2.0 + self.base_depth
        y = self.max_width / 2.0 + self.finger_thickness
        return math.sqrt(x * x + y * y + (self.finger_height / 2.0) ** 2)

    @property
    def max_dimension(self) -> float:
        return max(self.max_width + 2 * self.finger_thickness, self.finger_length + self.base_depth,
                   self.finger_height)


def rotation_from_vectors(v_a, v_c) -> np.ndarray:
    """Rotation ``[a, c, a x c]`` after Gram-Schmidt of ``v_c`` against ``v_a``."""
    a = np.asarray(v_a, dtype=float)
    c = np.asarray(v_c, dtype=float)
    na, nc = np.linalg.norm(a), np.linalg.norm(c)
    if na == 0 or nc == 0:
        raise ValueError("approach and closing vectors must be nonzero")
    a = a / na
    c = c / nc
    if abs(a @ c) > 1.0 - PARALLEL_TOL:
        raise ValueError("approach and closing vectors are (nearly) parallel")
    c = c - (a @ c) * a
    c /= np.linalg.norm(c)
    return np.column_stack([a, c, np.cross(a, c)])


def rotations_from_vectors(v_a, v_c) -> np.ndarray:
    """Batched :func:`rotation_from_vectors`; returns ``(n, 3, 3)``."""
    a = np.asarray(v_a, float)
    c = np.asarray(v_c, float)
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    dot = np.einsum("ij,ij->i", a, c)
    if np.any(np.abs(dot) > 1.0 - PARALLEL_TOL):
        raise ValueError("approach and closing vectors are (nearly) parallel")
    c = c - dot[:, None] * a
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return np.stack([a, c, np.cross(a, c)], axis=2)


def canonicalize_close(v_c) -> np.ndarray:
    """Flip the closing direction so that its x component is nonnegative.

    A zero x component keeps the input sign.
    """
    v = np.asarray(v_c, dtype=float)
    if not np.any(v):
        raise ValueError("closing vector must be nonzero")
    return -v if v[0] < 0 else v.copy()


@dataclass
class Grasp:
    t: np.ndarray
    v_A: np.ndarray
    v_C: np.ndarray
    width: float
    depth: float
    score: float = 0.0
    instance_id: int = 0

    @classmethod
    def from_pose(cls, anchor, v_a, v_c, width, depth, score=0.0, instance_id=0, gripper=None) -> "Grasp":
        """Build a canonical grasp whose center is ``anchor`` advanced by ``depth`` along the approach."""
        rot = rotation_from_vectors(v_a, v_c)
        a = rot[:, 0]
        c = canonicalize_close(rot[:, 1])
        if gripper is not None:
            width = min(max(float(width), 0.0), gripper.max_width)
        return cls(np.asarray(anchor, float) + float(depth) * a, a, c, float(width), float(depth),
                   float(score), int(instance_id))

    @property
    def rotation(self) -> np.ndarray:
        return np.column_stack([self.v_A, self.v_C, np.cross(self.v_A, self.v_C)])

    @property
    def anchor(self) -> np.ndarray:
        return self.t - self.depth * self.v_A

    def check(self, gripper: GripperModel | None = None, tol: float = 1e-9):
        if abs(np.linalg.norm(self.v_A) - 1) > tol or abs(np.linalg.norm(self.v_C) - 1) > tol:
            raise ValueError("grasp vectors must be unit length")
        if abs(self.v_A @ self.v_C) > tol:
            raise ValueError("approach and closing vectors must be orthogonal")
        if self.v_C[0] < 0:
            raise ValueError("closing vector is not canonical")
        if self.width < 0 or self.depth < 0 or (gripper is not None and self.width > gripper.max_width + tol):
            raise ValueError("width/depth out of range")
        return self

    def transformed(self, rot, trans) -> "Grasp":
        """Rigidly moved copy.  The closing sign is left as is (it need not stay canonical)."""
        rot = np.asarray(rot, float)
        return Grasp(rot @ self.t + trans, rot @ self.v_A, rot @ self.v_C, self.width, self.depth,
                     self.score, self.instance_id)

    def to_dict(self):
        return {
            "t": [float(x) for x in self.t],
            "v_A": [float(x) for x in self.v_A],
            "v_C": [float(x) for x in self.v_C],
            "width": float(self.width),
            "depth": float(self.depth),
            "score": float(self.score),
            "instance_id": int(self.instance_id),
        }

    @classmethod
    def from_dict(cls, d) -> "Grasp":
        return cls(np.asarray(d["t"], float), np.asarray(d["v_A"], float), np.asarray(d["v_C"], float),
                   float(d["width"]), float(d["depth"]), float(d["score"]), int(d.get("instance_id", 0)))


def stack_grasps(grasps):
    """Arrays ``(t, R, width)`` for a list of grasps."""
    if not grasps:
        return np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros(0)
    t = np.array([g.t for g in grasps])
    va = np.array([g.v_A for g in grasps])
    vc = np.array([g.v_C for g in grasps])
    rot = np.stack([va, vc, np.cross(va, vc)], axis=2)
    w = np.array([g.width for g in grasps])
    return t, rot, w


def rotation_angle_deg(r1, r2) -> float:
    cos = (np.trace(r1.T @ r2) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def se3_distance(g1: Grasp, g2: Grasp):
    """(translation in meters, rotation angle in degrees) between two grasp poses."""
    return float(np.linalg.norm(g1.t - g2.t)), rotation_angle_deg(g1.rotation, g2.rotation)


def se3_distances(g: Grasp, t, rot):
    """Vectorized distances from ``g`` to poses ``(t: n x 3, rot: n x 3 x 3)``."""
    dt = np.linalg.norm(t - g.t, axis=1)
    cos = (np.einsum("ij,nij->n", g.rotation, rot) - 1.0) / 2.0
    return dt, np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def tangent_basis(n):
    """Two unit vectors spanning the plane orthogonal to ``n`` (deterministic)."""
    n = np.asarray(n, float)
    ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b1 = np.cross(n, ref)
    b1 /= np.linalg.norm(b1)
    return b1, np.cross(n, b1)


def candidate_frames(normal, per_point: int, n_perturb: int = 2, tilt_deg: float = 20.0):
    """Approach/closing pairs for one surface point: ``(k, 3)`` and ``(k, 3)`` arrays."""
    a0 = -np.asarray(normal, float)
    a0 /= np.linalg.norm(a0)
    b1, b2 = tangent_basis(a0)
    approaches = [a0]
    tilt = math.radians(tilt_deg)
    for j in range(n_perturb):
        phi = 2.0 * math.pi * j / n_perturb
        approaches.append(math.cos(tilt) * a0 + math.sin(tilt) * (math.cos(phi) * b1 + math.sin(phi) * b2))
    va, vc = [], []
    for a in approaches:
        c1, c2 = tangent_basis(a)
        for k in range(per_point):
            th = math.pi * k / per_point
            va.append(a)
            vc.append(math.cos(th) * c1 + math.sin(th) * c2)
    return np.array(va), np.array(vc)


def sample_grasp_candidates(cloud, gripper: GripperModel, per_point: int = 6, scene_cloud=None,
                            depths=(0.01, 0.02), n_perturb: int = 2, tilt_deg: float = 20.0,
                            clearance: float = 0.01, seed_indices=None):
    """Approach-based candidates at every foreground point of ``cloud``.

    For each seed point the approach is the inward normal plus ``n_perturb``
    tilted copies; ``per_point`` closing directions are spread over the
    tangent half-circle (closing is symmetric); each pose is tried at every
    depth.  Width is the symmetric extent of ``scene_cloud`` points inside
    the max-width closing region plus ``clearance`` per side, clipped to the
    gripper.  Candidates whose closing region is empty are dropped.
    """
    scene_cloud = cloud if scene_cloud is None else scene_cloud
    if seed_indices is None:
        fg = np.ones(len(cloud), bool) if cloud.semantic is None else cloud.semantic > 0
        seed_indices = np.nonzero(fg)[0]
    if len(seed_indices) == 0:
        return []
    tree = cKDTree(scene_cloud.points)
    half_l, half_h = gripper.finger_length / 2.0, gripper.finger_height / 2.0
    reach = math.sqrt(half_l ** 2 + (gripper.max_width / 2.0) ** 2 + half_h ** 2) + max(depths)
    out = []
    for i in seed_indices:
        p = cloud.points[i]
        inst = 0 if cloud.instance_id is None else int(cloud.instance_id[i])
        va, vc = candidate_frames(cloud.normals[i], per_point, n_perturb, tilt_deg)
        rot = rotations_from_vectors(va, vc)
        nbr = scene_cloud.points[tree.query_ball_point(p, reach)]
        for d in depths:
            centers = p[None, :] + d * rot[:, :, 0]
            local = to_gripper_frame(nbr, centers, rot)
            inside = (np.abs(local[..., 0]) <= half_l) & (np.abs(local[..., 1]) < gripper.max_width / 2.0) \
                & (np.abs(local[..., 2]) <= half_h)
            ext = np.where(inside, np.abs(local[..., 1]), -np.inf).max(axis=1)
            ok = np.nonzero(np.isfinite(ext))[0]
            width = np.minimum(2.0 * ext[ok] + 2.0 * clearance, gripper.max_width)
            a = rot[ok, :, 0]
            c = rot[ok, :, 1] * np.where(rot[ok, 0, 1] < 0, -1.0, 1.0)[:, None]
            for j in range(len(ok)):
                out.append(Grasp(centers[ok[j]], a[j], c[j], float(width[j]), float(d), 0.0, inst))
    return out


@dataclass
class PointGraspLabels:
    """Per-point grasp supervision.

    ``graspable`` is 1 (graspable), 0 (not graspable) or -1 (ignored);
    ``grasp_index`` points into the grasp list, -1 where unmapped.
    """

    graspable: np.ndarray
    grasp_index: np.ndarray

    @property
    def mask(self):
        return self.graspable >= 0


def map_points_to_grasps(cloud, grasps, radius: float = 0.005, min_score=None, priority=None) -> PointGraspLabels:
    """Map each point to at most one grasp whose surface anchor is within ``radius``.

    Among nearby grasps the highest score wins, then the lowest list index.
    With ``min_score``, grasps scoring above it are preferred and a point
    whose nearby grasps all score ``<= min_score`` is labeled non-graspable
    instead of graspable.  ``priority`` (e.g. collision-free flags) ranks
    between the ``min_score`` test and the score.  Points with no nearby
    grasp are ignored.
    """
    n = len(cloud)
    graspable = np.full(n, -1, dtype=np.int8)
    index = np.full(n, -1, dtype=np.int64)
    if not grasps:
        return PointGraspLabels(graspable, index)
    anchors = np.array([g.anchor for g in grasps])
    scores = np.array([g.score for g in grasps])
    prio = np.zeros(len(grasps)) if priority is None else np.asarray(priority, float)
    good = np.ones(len(grasps)) if min_score is None else (scores > min_score).astype(float)
    hits = cKDTree(anchors).query_ball_point(cloud.points, radius)
    for i, near in enumerate(hits):
        if not near:
            continue
        near = np.sort(np.asarray(near))
        # lexsort: last key is primary; stable on index order
        best = near[np.lexsort((-scores[near], -prio[near], -good[near]))[0]]
        if not good[best]:
            graspable[i] = 0
        else:
            graspable[i] = 1
            index[i] = best
    return PointGraspLabels(graspable, index)


def to_gripper_frame(points, t, rot):
    """Points expressed in one or more gripper frames.

    ``t`` ``(3,)`` and ``rot`` ``(3, 3)`` give ``(m, 3)``; batched ``(k, 3)`` and
    ``(k, 3, 3)`` give ``(k, m, 3)``.
    """
    points = np.asarray(points, float)
    if np.ndim(t) == 1:
        return (points - t) @ rot
    return rotate_into(points, rot) - np.einsum("kj,kji->ki", t, rot)[:, None, :]


def rotate_into(vectors, rot):
    """``vectors @ rot[k]`` for every k as one GEMM: ``(m, 3)`` -> ``(k, m, 3)``."""
    k = len(rot)
    flat = np.asarray(vectors, float) @ np.transpose(rot, (1, 0, 2)).reshape(3, 3 * k)
    return flat.reshape(len(vectors), k, 3).transpose(1, 0, 2)


def closing_region_mask(local, width, gripper: GripperModel):
    """Points strictly between the finger inner faces, over the finger length and height."""
    w = np.asarray(width, float)
    if local.ndim == 3:
        w = w[:, None]
    return (np.abs(local[..., 0]) <= gripper.finger_length / 2.0) & (np.abs(local[..., 1]) < w / 2.0) \
        & (np.abs(local[..., 2]) <= gripper.finger_height / 2.0)
