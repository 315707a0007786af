"""Top-k grasp precision averaged over friction thresholds."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .collision import build_grid, check_collision
from .grasp import GripperModel
from .scoring import find_contacts, is_antipodal


@dataclass
class EvalConfig:
    k: int = 50
    mu_thresholds: tuple = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)

    def __post_init__(self):
        self.k = int(self.k)
        self.mu_thresholds = tuple(float(m) for m in self.mu_thresholds)
        if self.k < 1:
            raise ValueError("k must be at least 1")
        mus = np.asarray(self.mu_thresholds)
        if len(mus) == 0 or np.any(mus <= 0) or np.any(np.diff(mus) <= 0):
            raise ValueError("mu thresholds must be positive and strictly ascending")


def success_row(grasp, cloud, gripper: GripperModel, mus, grid=None) -> np.ndarray:
    """Success flag of one grasp at each friction threshold in ``mus``."""
    grid = build_grid(cloud, gripper) if grid is None else grid
    mus = np.atleast_1d(np.asarray(mus, float))
    if check_collision(grasp, cloud, gripper, grid).c == 0:
        return np.zeros(len(mus), dtype=bool)
    contacts = find_contacts(grasp, cloud, gripper, grid)
    if contacts is None:
        return np.zeros(len(mus), dtype=bool)
    return np.array([is_antipodal(contacts, m) for m in mus], dtype=bool)


def grasp_success(grasp, cloud, gripper: GripperModel, mu: float, grid=None) -> bool:
    """Collision-free and antipodal at friction coefficient ``mu``."""
    return bool(success_row(grasp, cloud, gripper, [mu], grid)[0])


def running_precision(success, k: int) -> float:
    """Mean over ranks ``i = 1..k`` of the success fraction among the top ``i``; missing ranks fail."""
    s = np.zeros(k)
    hits = np.asarray(success, dtype=float)[:k]
    s[:len(hits)] = hits
    return float(np.mean(np.cumsum(s) / np.arange(1, k + 1)))


def ap_from_successes(success_matrix, config: EvalConfig = EvalConfig()):
    """``(AP, per-threshold AP)`` for a rank-ordered ``(n, len(mu_thresholds))`` success matrix."""
    m = np.asarray(success_matrix, dtype=bool).reshape(-1, len(config.mu_thresholds))
    per = np.array([running_precision(m[:, j], config.k) for j in range(m.shape[1])])
    return float(per.mean()), per


def rank_grasps(grasps):
    """Stable descending-score order."""
    return sorted(grasps, key=lambda g: -g.score)


def precision_at_k(grasps, cloud, config: EvalConfig = EvalConfig(), gripper: GripperModel = GripperModel(),
                   grid=None):
    """``(AP, per-threshold AP)`` of the top-``k`` grasps evaluated on ``cloud``."""
    if not grasps:
        warnings.warn("empty grasp list scores AP 0", RuntimeWarning, stacklevel=2)
        return 0.0, np.zeros(len(config.mu_thresholds))
    grid = build_grid(cloud, gripper) if grid is None else grid
    top = rank_grasps(grasps)[:config.k]
    rows = [success_row(g, cloud, gripper, config.mu_thresholds, grid) for g in top]
    return ap_from_successes(np.array(rows), config)


@dataclass
class EvalSummary:
    scene_ids: list
    ap: np.ndarray
    ap_per_mu: np.ndarray
    config: EvalConfig = field(default_factory=EvalConfig)

    def column(self, mu: float) -> np.ndarray:
        j = int(np.argmin(np.abs(np.asarray(self.config.mu_thresholds) - mu)))
        if abs(self.config.mu_thresholds[j] - mu) > 1e-9:
            raise KeyError(f"threshold {mu} not in the evaluation grid")
        return self.ap_per_mu[:, j]

    def means(self) -> dict:
        out = {"AP": float(self.ap.mean())}
        for mu in (0.8, 0.4):
            try:
                out[f"AP_{mu}"] = float(self.column(mu).mean())
            except KeyError:
                pass
        return out

    def rows(self):
        cols = list(self.means())
        body = []
        for i, sid in enumerate(self.scene_ids):
            row = {"scene": str(sid), "AP": float(self.ap[i])}
            for c in cols[1:]:
                row[c] = float(self.column(float(c.split("_")[1]))[i])
            body.append(row)
        body.append(dict({"scene": "mean"}, **self.means()))
        return body

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned text table, percentages as in the usual benchmark layout."""
        rows = self.rows()
        cols = list(rows[0])
        cells = [[r["scene"]] + [f"{100 * r[c]:.2f}" for c in cols[1:]] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(cols, widths))]
        lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        return "\n".join(lines) + "\n"


def evaluate_dataset(predictions: dict, clouds: dict, config: EvalConfig = EvalConfig(),
                     gripper: GripperModel = GripperModel()) -> EvalSummary:
    """Per-scene AP over ``clouds`` (scene id -> evaluation cloud); missing predictions score 0."""
    if not clouds:
        raise ValueError("need at least one scene")
    ids = list(clouds)
    ap = np.zeros(len(ids))
    per = np.zeros((len(ids), len(config.mu_thresholds)))
    for i, sid in enumerate(ids):
        if sid not in predictions:
            warnings.warn(f"no prediction for scene {sid}; counted as AP 0", RuntimeWarning, stacklevel=2)
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ap[i], per[i] = precision_at_k(predictions[sid], clouds[sid], config, gripper)
    return EvalSummary(ids, ap, per, config)


def binary_f1(pred, truth) -> float:
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    tp = np.sum(pred & truth)
    denom = 2 * tp + np.sum(pred & ~truth) + np.sum(~pred & truth)
    return float(2 * tp / denom) if denom else 1.0


def instance_miou(pred_ids, true_ids) -> float:
    """Mean IoU over ground-truth instances (ids > 0) after optimal one-to-one matching."""
    pred_ids = np.asarray(pred_ids)
    true_ids = np.asarray(true_ids)
    gt = np.unique(true_ids[true_ids > 0])
    if len(gt) == 0:
        return 1.0
    pr = np.unique(pred_ids[pred_ids > 0])
    if len(pr) == 0:
        return 0.0
    inter = np.array([[np.sum((true_ids == g) & (pred_ids == p)) for p in pr] for g in gt], dtype=float)
    union = np.array([[np.sum((true_ids == g) | (pred_ids == p)) for p in pr] for g in gt], dtype=float)
    iou = inter / union
    rows, cols = linear_sum_assignment(-iou)
    return float(iou[rows, cols].sum() / len(gt))


def top_k_success_rate(grasps, cloud, gripper: GripperModel = GripperModel(), mu: float = 0.8, k: int = 10,
                       grid=None) -> float:
    """Fraction of the top-``k`` grasps (by score) that succeed at ``mu``; 0 for an empty list."""
    top = rank_grasps(grasps)[:k]
    if not top:
        return 0.0
    grid = build_grid(cloud, gripper) if grid is None else grid
    return float(np.mean([grasp_success(g, cloud, gripper, mu, grid) for g in top]))
