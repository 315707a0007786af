"""Instance-partitioned pose non-maximum suppression."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .grasp import se3_distances, stack_grasps


@dataclass
class NmsConfig:
    epsilon_t: float = 0.010
    epsilon_r: float = 30.0
    max_keep: int | None = None
    # "and": suppress only when both distances are under threshold; "or": either one
    mode: str = "and"

    def __post_init__(self):
        if self.epsilon_t <= 0 or self.epsilon_r <= 0:
            raise ValueError("thresholds must be positive")
        if self.max_keep is not None and self.max_keep < 1:
            raise ValueError("max_keep must be positive")
        if self.mode not in ("and", "or"):
            raise ValueError("mode must be 'and' or 'or'")


@dataclass
class Prediction:
    """Per-point instance ids, grasps (``None`` where no grasp) and collision-free flags."""

    instance_ids: np.ndarray
    grasps: list
    collision_free: np.ndarray

    def __post_init__(self):
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.collision_free = np.asarray(self.collision_free, dtype=bool)
        if not (len(self.instance_ids) == len(self.grasps) == len(self.collision_free)):
            raise ValueError("instance ids, grasps and collision flags must have equal length")


def suppress_mask(config: NmsConfig, dt: np.ndarray, dr: np.ndarray) -> np.ndarray:
    near_t = dt < config.epsilon_t
    near_r = dr < config.epsilon_r
    return (near_t & near_r) if config.mode == "and" else (near_t | near_r)


def instance_pose_nms(pred: Prediction, config: NmsConfig = NmsConfig()) -> list:
    """Collision-free, per-instance greedy NMS.

    Returned grasps are copies carrying their instance id, sorted by score
    descending, then instance id, then input order.
    """
    cand = [i for i, (g, c) in enumerate(zip(pred.grasps, pred.collision_free)) if c and g is not None]
    kept = []
    for inst in np.unique(pred.instance_ids[cand]) if cand else []:
        members = [i for i in cand if pred.instance_ids[i] == inst]
        members.sort(key=lambda i: -pred.grasps[i].score)
        t, rot, _ = stack_grasps([pred.grasps[i] for i in members])
        alive = np.ones(len(members), dtype=bool)
        n_kept = 0
        for j in range(len(members)):
            if not alive[j]:
                continue
            kept.append(members[j])
            n_kept += 1
            alive[j] = False
            if config.max_keep is not None and n_kept >= config.max_keep:
                break
            rest = np.nonzero(alive)[0]
            if len(rest):
                dt, dr = se3_distances(pred.grasps[members[j]], t[rest], rot[rest])
                alive[rest[suppress_mask(config, dt, dr)]] = False
    kept.sort(key=lambda i: (-pred.grasps[i].score, pred.instance_ids[i], i))
    out = []
    for i in kept:
        g = copy.deepcopy(pred.grasps[i])
        g.instance_id = int(pred.instance_ids[i])
        out.append(g)
    return out
