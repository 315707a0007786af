"""Point-cloud collision checks for the three-box parallel-jaw gripper."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .grasp import Grasp, GripperModel, closing_region_mask, to_gripper_frame


class CollisionBalanceWarning(UserWarning):
    """Only one collision class is present, so no rebalancing happened."""


@dataclass
class OrientedBox:
    center: np.ndarray
    rotation: np.ndarray
    half_extents: np.ndarray

    @property
    def volume(self) -> float:
        return float(8.0 * np.prod(self.half_extents))

    def contains(self, points) -> np.ndarray:
        local = (np.asarray(points, float) - self.center) @ self.rotation
        return np.all(np.abs(local) <= self.half_extents + 1e-12, axis=1)


@dataclass
class CollisionLabel:
    grasp_index: int
    c: int
    contact_exempt_count: int

    def to_dict(self):
        return {"grasp_index": int(self.grasp_index), "c": int(self.c),
                "contact_exempt_count": int(self.contact_exempt_count)}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["grasp_index"]), int(d["c"]), int(d["contact_exempt_count"]))


class SpatialGrid:
    """Uniform hash grid over a static point set; immutable after construction."""

    def __init__(self, points, cell_size: float):
        self.points = np.asarray(points, float)
        self.cell_size = float(cell_size)
        keys = np.floor(self.points / self.cell_size).astype(np.int64)
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        self._order = order
        sk = keys[order]
        self._cells = {}
        if len(sk):
            change = np.nonzero(np.any(np.diff(sk, axis=0) != 0, axis=1))[0] + 1
            starts = np.concatenate([[0], change])
            ends = np.concatenate([change, [len(sk)]])
            for s, e in zip(starts, ends):
                self._cells[tuple(sk[s])] = (s, e)

    def query_box(self, lo, hi) -> np.ndarray:
        """Indices of all points in cells overlapping the axis-aligned box ``[lo, hi]``."""
        a = np.floor(np.asarray(lo) / self.cell_size).astype(np.int64)
        b = np.floor(np.asarray(hi) / self.cell_size).astype(np.int64)
        parts = []
        for i in range(a[0], b[0] + 1):
            for j in range(a[1], b[1] + 1):
                for k in range(a[2], b[2] + 1):
                    span = self._cells.get((i, j, k))
                    if span is not None:
                        parts.append(self._order[span[0]:span[1]])
        if not parts:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(parts))

    def query_ball(self, center, radius: float) -> np.ndarray:
        c = np.asarray(center, float)
        return self.query_box(c - radius, c + radius)


def build_grid(cloud, gripper: GripperModel) -> SpatialGrid:
    return SpatialGrid(cloud.points, gripper.max_dimension)


def gripper_occupancy(grasp: Grasp, gripper: GripperModel):
    """World-frame boxes ``[left finger, right finger, base]`` at the grasp's width."""
    rot = grasp.rotation
    w, th = grasp.width, gripper.finger_thickness
    hl, hh = gripper.finger_length / 2.0, gripper.finger_height / 2.0
    finger_half = np.array([hl, th / 2.0, hh])
    locals_ = [
        (np.array([0.0, -(w / 2.0 + th / 2.0), 0.0]), finger_half),
        (np.array([0.0, w / 2.0 + th / 2.0, 0.0]), finger_half),
        (np.array([-hl - gripper.base_depth / 2.0, 0.0, 0.0]),
         np.array([gripper.base_depth / 2.0, w / 2.0 + th, hh])),
    ]
    return [OrientedBox(grasp.t + rot @ c, rot.copy(), h) for c, h in locals_]


def occupied_mask(local, width, gripper: GripperModel):
    """Per-point membership in a finger or the base box; ``width`` broadcasts against ``local[..., 0]``."""
    w = np.asarray(width, float)
    x, ay, az = local[..., 0], np.abs(local[..., 1]), np.abs(local[..., 2])
    hl, hh, th = gripper.finger_length / 2.0, gripper.finger_height / 2.0, gripper.finger_thickness
    fingers = (np.abs(x) <= hl) & (ay >= w / 2.0) & (ay <= w / 2.0 + th)
    base = (x < -hl) & (x >= -hl - gripper.base_depth) & (ay <= w / 2.0 + th)
    return (az <= hh) & (fingers | base)


def collision_from_local(local, width, gripper: GripperModel):
    """Collision and exempt counts from gripper-frame points.

    Works on ``(m, 3)`` with scalar width or ``(k, m, 3)`` with ``(k,)`` widths.
    Returns ``(collides, exempt_count)``.
    """
    w = np.asarray(width, float)
    if local.ndim == 3:
        w = w[:, None]
    hit = occupied_mask(local, w, gripper)
    exempt = closing_region_mask(local, width, gripper)
    return hit.any(axis=-1), exempt.sum(axis=-1)


def check_collision(grasp: Grasp, cloud, gripper: GripperModel, grid: SpatialGrid | None = None,
                    grasp_index: int = 0) -> CollisionLabel:
    """``c = 1`` iff no point of ``cloud`` lies in a finger or the base box."""
    grid = build_grid(cloud, gripper) if grid is None else grid
    reach = math.sqrt((gripper.finger_length / 2.0 + gripper.base_depth) ** 2
                      + (grasp.width / 2.0 + gripper.finger_thickness) ** 2
                      + (gripper.finger_height / 2.0) ** 2)
    idx = grid.query_ball(grasp.t, reach)
    local = to_gripper_frame(cloud.points[idx], grasp.t, grasp.rotation)
    collides, exempt = collision_from_local(local, grasp.width, gripper)
    return CollisionLabel(grasp_index, 0 if collides else 1, int(exempt))


def collision_free_many(t, rot, width, points, tree, gripper: GripperModel) -> np.ndarray:
    """Vectorized :func:`check_collision` flags for ``k`` poses against one cloud.

    ``t`` ``(k, 3)``, ``rot`` ``(k, 3, 3)``, ``width`` ``(k,)``; ``tree`` is a
    ``cKDTree`` over ``points``.  Returns a boolean ``(k,)`` array, True where
    no point occupies a finger or the base.
    """
    t = np.asarray(t, float)
    width = np.asarray(width, float)
    k = len(t)
    if k == 0:
        return np.zeros(0, dtype=bool)
    reach = np.sqrt((gripper.finger_length / 2.0 + gripper.base_depth) ** 2
                    + (width / 2.0 + gripper.finger_thickness) ** 2 + (gripper.finger_height / 2.0) ** 2)
    hits = tree.query_ball_point(t, reach)
    counts = np.fromiter((len(h) for h in hits), dtype=np.int64, count=k)
    if counts.sum() == 0:
        return np.ones(k, dtype=bool)
    owner = np.repeat(np.arange(k), counts)
    idx = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])
    local = np.einsum("nj,nji->ni", points[idx] - t[owner], rot[owner])
    hit = occupied_mask(local, width[owner], gripper)
    return np.bincount(owner, weights=hit, minlength=k) == 0


def generate_collision_dataset(grasps, cloud, gripper: GripperModel, balance=1.0, seed: int = 0,
                               grid: SpatialGrid | None = None):
    """Collision labels for ``grasps``, optionally subsampled to ``positive:negative = balance``.

    With one class absent a :class:`CollisionBalanceWarning` is emitted and
    every label is kept.
    """
    if not grasps:
        raise ValueError("grasp list is empty")
    grid = build_grid(cloud, gripper) if grid is None else grid
    labels = [check_collision(g, cloud, gripper, grid, i) for i, g in enumerate(grasps)]
    return rebalance(labels, balance, seed)


def rebalance(labels, balance=1.0, seed: int = 0):
    if balance is None:
        return labels
    pos = [lab for lab in labels if lab.c == 1]
    neg = [lab for lab in labels if lab.c == 0]
    if not pos or not neg:
        warnings.warn("only one collision class present; no rebalancing", CollisionBalanceWarning, stacklevel=2)
        return labels
    rng = np.random.default_rng(seed)
    if len(pos) > balance * len(neg):
        n_pos = max(1, int(round(balance * len(neg))))
        pos = [pos[i] for i in np.sort(rng.choice(len(pos), n_pos, replace=False))]
    else:
        n_neg = max(1, int(round(len(pos) / balance)))
        neg = [neg[i] for i in np.sort(rng.choice(len(neg), min(n_neg, len(neg)), replace=False))]
    return sorted(pos + neg, key=lambda lab: lab.grasp_index)
