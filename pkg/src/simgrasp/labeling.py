"""Training-label generation: candidates -> scores -> point mapping -> collision labels."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .collision import CollisionBalanceWarning, CollisionLabel, collision_from_local, rebalance
from .grasp import Grasp, GripperModel, map_points_to_grasps, rotate_into, sample_grasp_candidates, \
    stack_grasps, to_gripper_frame
from .scene import sample_scene_surface
from .scoring import FrictionSweep, antipodal_angles, contacts_from_local, score_from_mu, sweep_mu_star


@dataclass
class LabelConfig:
    per_point: int = 6
    depths: tuple = (0.01, 0.02)
    n_perturb: int = 2
    tilt_deg: float = 20.0
    clearance: float = 0.008
    min_score: float = 0.5
    map_radius: float = 0.005
    collision_balance: float | None = 1.0
    seed: int = 0


def _groups(grasps):
    """Runs of consecutive grasps sharing a surface anchor."""
    if not grasps:
        return []
    anchors = np.array([g.anchor for g in grasps])
    cut = np.nonzero(np.any(np.abs(np.diff(anchors, axis=0)) > 1e-12, axis=1))[0] + 1
    bounds = np.concatenate([[0], cut, [len(grasps)]])
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def evaluate_grasps(grasps, cloud, gripper: GripperModel, sweep: FrictionSweep = FrictionSweep()):
    """Scores, collision-free flags and exempt counts for many grasps at once.

    Equivalent to calling :func:`~simgrasp.scoring.force_closure_score` and
    :func:`~simgrasp.collision.check_collision` per grasp.
    """
    n = len(grasps)
    scores = np.zeros(n)
    free = np.zeros(n, dtype=bool)
    exempt = np.zeros(n, dtype=np.int64)
    if n == 0:
        return scores, free, exempt
    tree = cKDTree(cloud.points)
    for a, b in _groups(grasps):
        t, rot, w = stack_grasps(grasps[a:b])
        reach = gripper.outer_radius + max(float(np.linalg.norm(t[i] - grasps[a].anchor)) for i in range(b - a))
        idx = np.asarray(tree.query_ball_point(grasps[a].anchor, reach), dtype=np.int64)
        if len(idx) == 0:
            free[a:b] = True
            continue
        local = to_gripper_frame(cloud.points[idx], t, rot)
        nloc = rotate_into(cloud.normals[idx], rot)
        p1, p2, n1, n2, valid = contacts_from_local(local, nloc, w, gripper)
        a1, a2 = antipodal_angles(p1, p2, n1, n2)
        s = np.where(valid, score_from_mu(sweep_mu_star(a1, a2, sweep), sweep), 0.0)
        hit, ex = collision_from_local(local, w, gripper)
        scores[a:b] = s
        free[a:b] = ~hit
        exempt[a:b] = ex
    return scores, free, exempt


@dataclass
class SceneLabels:
    """Supervision for one captured cloud.

    ``grasps`` are the mapped label grasps (all scoring above the filter);
    ``collision`` is parallel to ``grasps``; ``collision_used`` marks the
    balanced subset that is supervised.
    """

    grasps: list
    graspable: np.ndarray
    grasp_index: np.ndarray
    collision: list
    collision_used: np.ndarray
    stats: dict = field(default_factory=dict)

    def point_collision(self) -> np.ndarray:
        """Per-point collision target: 1 free, 0 colliding, -1 unsupervised."""
        out = np.full(len(self.graspable), -1, dtype=np.int8)
        m = self.grasp_index >= 0
        c = np.array([lab.c for lab in self.collision], dtype=np.int8)
        used = self.collision_used
        if len(c):
            gi = self.grasp_index[m]
            out[m] = np.where(used[gi], c[gi], -1)
        return out

    def point_targets(self) -> dict:
        """Dense per-point regression targets (zeros where unmapped)."""
        n = len(self.graspable)
        va = np.zeros((n, 3))
        vc = np.zeros((n, 3))
        wds = np.zeros((n, 3))
        for i in np.nonzero(self.grasp_index >= 0)[0]:
            g = self.grasps[self.grasp_index[i]]
            va[i], vc[i] = g.v_A, g.v_C
            wds[i] = (g.width, g.depth, g.score)
        return {"v_A": va, "v_C": vc, "wds": wds}


def label_scene(scene, view_cloud, gripper: GripperModel = GripperModel(), config: LabelConfig = LabelConfig(),
                sweep: FrictionSweep = FrictionSweep(), full_cloud=None) -> SceneLabels:
    """Generate grasp, point and collision labels for ``view_cloud`` of ``scene``.

    Contacts and collisions are evaluated on the complete-surface cloud of the
    scene; the view cloud only provides seed points.  Background points are
    labeled non-graspable.
    """
    full = sample_scene_surface(scene, 0.0025, 0.005) if full_cloud is None else full_cloud
    cands = sample_grasp_candidates(view_cloud, gripper, config.per_point, full, config.depths,
                                    config.n_perturb, config.tilt_deg, config.clearance)
    scores, free, exempt = evaluate_grasps(cands, full, gripper, sweep)
    for g, s in zip(cands, scores):
        g.score = float(s)
    mapping = map_points_to_grasps(view_cloud, cands, config.map_radius, config.min_score, free.astype(float))
    graspable = mapping.graspable.copy()
    if view_cloud.semantic is not None:
        graspable[view_cloud.semantic == 0] = 0

    used_idx = np.unique(mapping.grasp_index[mapping.grasp_index >= 0])
    remap = np.full(len(cands), -1, dtype=np.int64)
    remap[used_idx] = np.arange(len(used_idx))
    grasp_index = np.full(len(view_cloud), -1, dtype=np.int64)
    hit = mapping.grasp_index >= 0
    grasp_index[hit] = remap[mapping.grasp_index[hit]]
    grasps = [cands[i] for i in used_idx]
    collision = [CollisionLabel(k, int(free[i]), int(exempt[i])) for k, i in enumerate(used_idx)]
    used = np.zeros(len(grasps), dtype=bool)
    if grasps:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CollisionBalanceWarning)
            kept = rebalance(collision, config.collision_balance, config.seed)
        used[[lab.grasp_index for lab in kept]] = True
    stats = {
        "n_candidates": len(cands),
        "n_good": int((scores > config.min_score).sum()),
        "n_label_grasps": len(grasps),
        "n_graspable_points": int((graspable == 1).sum()),
        "n_ignored_points": int((graspable < 0).sum()),
        "n_collision_free": int(sum(lab.c for lab in collision)),
    }
    return SceneLabels(grasps, graspable, grasp_index, collision, used, stats)


def labels_to_json(labels: SceneLabels):
    """Three JSON-ready documents: grasp array, collision array, per-point mapping."""
    grasps = [g.to_dict() for g in labels.grasps]
    coll = [dict(lab.to_dict(), used=bool(u)) for lab, u in zip(labels.collision, labels.collision_used)]
    points = {"graspable": labels.graspable.astype(int).tolist(), "grasp_index": labels.grasp_index.astype(int).tolist(),
              "stats": labels.stats}
    return grasps, coll, points


def labels_from_json(grasps, coll, points) -> SceneLabels:
    return SceneLabels(
        [Grasp.from_dict(g) for g in grasps],
        np.asarray(points["graspable"], dtype=np.int8),
        np.asarray(points["grasp_index"], dtype=np.int64),
        [CollisionLabel.from_dict(c) for c in coll],
        np.array([bool(c.get("used", True)) for c in coll], dtype=bool),
        dict(points.get("stats", {})),
    )
