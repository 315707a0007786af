"""Estimator facade: fit on labeled clouds, infer final grasps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..clustering import cluster_instances
from ..grasp import GripperModel
from ..io import CheckpointError, read_checkpoint, write_checkpoint
from ..losses import EMB, GP, SEM, HeadOutputs, LossWeights, Targets
from ..nms import NmsConfig, Prediction, instance_pose_nms
from ..scene import PointCloud
from .decoding import decode_grasps
from .network import NetworkConfig, PointGraspNet
from .training import TrainConfig, TrainingSample, train


def softmax2(logits):
    """Probability of class 1 for two-column logits."""
    return 1.0 / (1.0 + np.exp(logits[:, 0] - logits[:, 1]))


@dataclass
class InferenceResult:
    heads: HeadOutputs
    foreground: np.ndarray
    graspable: np.ndarray
    instance_ids: np.ndarray
    point_grasps: list
    collision_free: np.ndarray
    grasps: list

    @property
    def prediction(self) -> Prediction:
        return Prediction(self.instance_ids, self.point_grasps, self.collision_free)


class GraspNetEstimator(BaseEstimator):
    """Per-point grasp detector with instance, grasp and collision heads.

    Parameters
    ----------
    network : dict, optional
        :class:`NetworkConfig` fields.
    loss_weights : dict, optional
        :class:`LossWeights` fields.
    head_weights : tuple
        Scale of the (segmentation, grasp, collision) objectives; 0 detaches a head.
    use_instances, use_collision : bool
        Group grasps by predicted instance / drop predicted collisions before NMS.
        With ``use_instances=False`` all grasps form one group.
    collision_targets : {"labels", "predicted"}
        Supervise the collision head with the stored labels, or with the
        analytic check of the network's own grasps at ``collision_samples``
        graspable points per step (needs ``scene_clouds`` in :meth:`fit`).
    """

    def __init__(self, network=None, loss_weights=None, epochs=30, lr=1e-3, lr_decay=0.5, decay_every=10,
                 batch_size=1, adam_beta1=0.9, adam_beta2=0.999, adam_eps=1e-8, seed=0,
                 head_weights=(1.0, 1.0, 1.0), bandwidth=1.5, graspable_threshold=0.5, collision_threshold=0.5,
                 use_instances=True, use_collision=True, nms_epsilon_t=0.010, nms_epsilon_r=30.0,
                 nms_mode="and", gripper=None, collision_targets="labels", collision_samples=64):
        self.network = network
        self.loss_weights = loss_weights
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.decay_every = decay_every
        self.batch_size = batch_size
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.seed = seed
        self.head_weights = head_weights
        self.bandwidth = bandwidth
        self.graspable_threshold = graspable_threshold
        self.collision_threshold = collision_threshold
        self.use_instances = use_instances
        self.use_collision = use_collision
        self.nms_epsilon_t = nms_epsilon_t
        self.nms_epsilon_r = nms_epsilon_r
        self.nms_mode = nms_mode
        self.gripper = gripper
        self.collision_targets = collision_targets
        self.collision_samples = collision_samples

    # configuration views
    def _network_config(self):
        return NetworkConfig(**(self.network or {}))

    def _loss_weights(self):
        return LossWeights(**(self.loss_weights or {}))

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, lr=self.lr, lr_decay=self.lr_decay, decay_every=self.decay_every,
                           batch_size=self.batch_size, adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
                           adam_eps=self.adam_eps, seed=self.seed, collision_targets=self.collision_targets,
                           collision_samples=self.collision_samples)

    def _gripper(self):
        return GripperModel(**(self.gripper or {}))

    def _nms_config(self):
        return NmsConfig(self.nms_epsilon_t, self.nms_epsilon_r, None, self.nms_mode)

    def _validate(self):
        self._train_config()
        self._loss_weights()
        self._nms_config()
        if len(self.head_weights) != 3 or min(self.head_weights) < 0 or not any(self.head_weights):
            raise ValueError("head_weights needs three nonnegative entries, not all zero")
        for name in ("graspable_threshold", "collision_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")

    # data plumbing
    def _inputs(self, cloud: PointCloud) -> np.ndarray:
        if not isinstance(cloud, PointCloud):
            raise TypeError(f"expected PointCloud, got {type(cloud).__name__}")
        return cloud.network_input

    def make_samples(self, clouds, targets, scene_clouds=None):
        """Training samples; ``scene_clouds`` are the complete-surface clouds for collision relabeling."""
        net = self.net_ if hasattr(self, "net_") else PointGraspNet(self._network_config(), self.seed)
        if len(clouds) != len(targets) or (scene_clouds is not None and len(scene_clouds) != len(clouds)):
            raise ValueError("clouds, targets and scene clouds differ in length")
        out = []
        for i, (c, t) in enumerate(zip(clouds, targets)):
            if not isinstance(t, Targets):
                t = Targets.from_labels(c, t)
            sample = TrainingSample(self._inputs(c), t, net.geometry(c.points))
            if scene_clouds is not None:
                sample.scene_points = np.asarray(scene_clouds[i].points, float)
                sample.scene_tree = cKDTree(sample.scene_points)
            out.append(sample)
        return out

    def fit(self, X, y=None, samples=None, callback=None, scene_clouds=None):
        """Train on clouds ``X`` with per-cloud :class:`Targets` or scene labels ``y``.

        ``samples`` may pass precomputed :class:`TrainingSample` objects instead.
        """
        self._validate()
        self.net_ = PointGraspNet(self._network_config(), self.seed)
        if samples is None:
            if y is None:
                raise ValueError("fit needs targets")
            samples = self.make_samples(list(X), list(y), scene_clouds)
        self.history_ = train(self.net_, samples, self._train_config(), self._loss_weights(),
                              tuple(self.head_weights), callback, self._gripper())
        return self

    # inference
    def predict_heads(self, cloud: PointCloud, geometry=None) -> HeadOutputs:
        check_is_fitted(self, "net_")
        out, _ = self.net_.forward(self._inputs(cloud), geometry)
        return out

    def infer(self, cloud: PointCloud, geometry=None) -> InferenceResult:
        """Heads, per-point grasps and the final instance-level, collision-free grasp list."""
        heads = self.predict_heads(cloud, geometry)
        gripper = self._gripper()
        n = len(cloud)
        if self.use_instances:
            fg = heads.seg[:, SEM].argmax(axis=1) == 1
        else:
            fg = np.ones(n, dtype=bool)
        graspable = fg & (softmax2(heads.grasp[:, GP]) > self.graspable_threshold)
        if self.use_instances:
            ids = cluster_instances(heads.seg[:, EMB], fg, self.bandwidth).instance_ids
        else:
            ids = np.ones(n, dtype=np.int64)
        point_grasps = decode_grasps(cloud.points, heads.grasp, graspable, gripper)
        for i, g in enumerate(point_grasps):
            if g is not None:
                g.instance_id = int(ids[i])
        if self.use_collision:
            free = softmax2(heads.coll) > self.collision_threshold
        else:
            free = np.ones(n, dtype=bool)
        final = instance_pose_nms(Prediction(ids, point_grasps, free), self._nms_config())
        return InferenceResult(heads, fg, graspable, ids, point_grasps, free, final)

    def predict(self, X):
        """Final grasp list per cloud."""
        if isinstance(X, PointCloud):
            return self.infer(X).grasps
        return [self.infer(c).grasps for c in X]

    # persistence
    def save(self, path):
        check_is_fitted(self, "net_")
        params = self.get_params()
        params["head_weights"] = list(params["head_weights"])
        config = {"estimator": params, "network": self._network_config().to_dict()}
        write_checkpoint(path, config, self.net_.manifest(), self.net_.get_flat(), getattr(self, "history_", []))

    @classmethod
    def load(cls, path) -> "GraspNetEstimator":
        header, flat = read_checkpoint(path)
        try:
            params = dict(header["config"]["estimator"])
            params["head_weights"] = tuple(params["head_weights"])
            est = cls(**params)
            net = PointGraspNet(NetworkConfig.from_dict(header["config"]["network"]), est.seed)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: incompatible checkpoint configuration ({exc})") from exc
        if [[k, list(s)] for k, s in net.manifest()] != header["manifest"]:
            raise CheckpointError(f"{path}: parameter manifest does not match the network configuration")
        net.set_flat(flat)
        est.net_ = net
        est.history_ = header.get("history", [])
        return est
