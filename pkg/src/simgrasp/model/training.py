"""Adam training loop with step learning-rate decay."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..collision import collision_free_many
from ..grasp import GripperModel
from ..losses import LossWeights, Targets, loss_total
from .decoding import decode_poses
from .network import PointGraspNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A loss or gradient became non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 10
    batch_size: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    collision_targets: str = "labels"
    collision_samples: int = 64

    def __post_init__(self):
        if self.collision_targets not in ("labels", "predicted"):
            raise ValueError(f"collision_targets must be 'labels' or 'predicted', not {self.collision_targets!r}")
        if self.collision_samples < 1:
            raise ValueError("collision_samples must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.decay_every < 1:
            raise ValueError("epochs must be nonnegative; batch size and decay period positive")
        if self.lr < 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be nonnegative and decay in (0, 1]")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam moment parameters")

    @classmethod
    def full_scale_preset(cls, **overrides):
        """Full-scale schedule: 80 epochs, lr 0.05 halved every 10 epochs, batches of 64."""
        return cls(**dict(dict(epochs=80, lr=0.05, lr_decay=0.5, decay_every=10, batch_size=64), **overrides))

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** (epoch // self.decay_every)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainingSample:
    """Network input, supervision and cached geometry for one cloud.

    ``scene_points`` and ``scene_tree`` (a ``cKDTree`` over them) are the
    complete-surface cloud used to label the network's own grasps.
    """

    x: np.ndarray
    targets: Targets
    geometry: object
    scene_points: np.ndarray | None = None
    scene_tree: object = None


class PredictedCollisionTargets:
    """Collision targets from the analytic check of the grasps the network currently predicts.

    At each step up to ``n_samples`` ground-truth graspable points are drawn;
    their decoded grasps are checked against the sample's scene cloud and the
    flags replace the stored collision labels.  Targets carry no gradient.
    """

    def __init__(self, gripper: GripperModel, n_samples: int = 64, seed: int = 0):
        self.gripper = gripper
        self.n_samples = n_samples
        self.rng = np.random.default_rng([seed, 1])

    def __call__(self, sample: TrainingSample, grasp_out: np.ndarray) -> np.ndarray:
        if sample.scene_tree is None:
            raise ValueError("predicted collision targets need the scene cloud of every sample")
        graspable = np.asarray(sample.targets.graspable)
        out = np.full(len(graspable), -1, dtype=np.int64)
        cand = np.nonzero(graspable == 1)[0]
        if len(cand) > self.n_samples:
            cand = np.sort(self.rng.choice(cand, self.n_samples, replace=False))
        idx, t, rot, width, _, _ = decode_poses(sample.x[:, :3], grasp_out, cand, self.gripper)
        out[idx] = collision_free_many(t, rot, width, sample.scene_points, sample.scene_tree, self.gripper)
        return out


def batch_loss_and_grad(net: PointGraspNet, batch, weights: LossWeights, head_weights=(1.0, 1.0, 1.0),
                        collision_targets=None):
    """Summed loss, flat gradient and summed components over ``batch``.

    ``collision_targets`` optionally maps ``(sample, grasp head output)`` to
    per-point collision targets that replace the stored ones.
    """
    heads = tuple(h for h, s in zip(("seg", "grasp", "coll"), head_weights) if s)
    relabel = collision_targets is not None and "coll" in heads
    if relabel and "grasp" not in heads:
        heads = heads + ("grasp",)
    total = 0.0
    flat = np.zeros(net.n_params)
    comps = {}
    for s in batch:
        out, cache = net.forward(s.x, s.geometry, heads)
        targets = replace(s.targets, collision=collision_targets(s, out.grasp)) if relabel else s.targets
        value, g_out, comp = loss_total(out, targets, weights, head_weights)
        grads = net.backward(cache, g_out)
        total += value
        flat += net.flatten_grads(grads)
        for k, v in comp.items():
            comps[k] = comps.get(k, 0.0) + v
    return total, flat, comps


class Adam:
    def __init__(self, n, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        return params - lr * mh / (np.sqrt(vh) + self.eps)


def train(net: PointGraspNet, samples, config: TrainConfig = TrainConfig(), weights: LossWeights = LossWeights(),
          head_weights=(1.0, 1.0, 1.0), callback=None, gripper: GripperModel = GripperModel()):
    """Optimize ``net`` in place; returns the per-epoch history (mean loss per cloud and components)."""
    if not samples:
        raise ValueError("empty training set")
    relabel = None
    if config.collision_targets == "predicted":
        if any(s.scene_tree is None for s in samples):
            raise ValueError("predicted collision targets need the scene cloud of every sample")
        relabel = PredictedCollisionTargets(gripper, config.collision_samples, config.seed)
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.n_params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    params = net.get_flat()
    history = []
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        order = rng.permutation(len(samples))
        ep_loss = 0.0
        ep_comp = {}
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [samples[i] for i in order[start:start + config.batch_size]]
            value, grad, comp = batch_loss_and_grad(net, batch, weights, head_weights, relabel)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, step {step + 1}: "
                                       f"total={value!r}, components={comp}")
            if lr > 0:
                params = opt.step(params, grad, lr)
                net.set_flat(params)
            ep_loss += value
            for k, v in comp.items():
                ep_comp[k] = ep_comp.get(k, 0.0) + v
        row = {"epoch": epoch + 1, "lr": lr, "loss": ep_loss / len(samples)}
        row.update({k: v / len(samples) for k, v in sorted(ep_comp.items())})
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f", epoch + 1, lr, row["loss"])
        if callback is not None:
            callback(row)
    return history
