"""Synthetic tabletop scenes, analytic grasp labels and a multi-head point network for 6-DoF grasping."""

from .clustering import ClusterResult, FlatMeanShift, cluster_instances, meanshift
from .collision import CollisionLabel, check_collision, generate_collision_dataset
from .evaluation import EvalConfig, evaluate_dataset, grasp_success, precision_at_k
from .grasp import Grasp, GripperModel, canonicalize_close, rotation_from_vectors, se3_distance
from .labeling import LabelConfig, label_scene
from .losses import LossWeights
from .model import GraspNetEstimator, NetworkConfig, PointGraspNet, TrainConfig
from .nms import NmsConfig, Prediction, instance_pose_nms
from .scene import PointCloud, SceneSpec, generate_scene, render_partial_cloud, sample_scene_surface
from .scoring import FrictionSweep, force_closure_score

__version__ = "0.1.0"

__all__ = [
    "ClusterResult", "FlatMeanShift", "cluster_instances", "meanshift", "CollisionLabel", "check_collision",
    "generate_collision_dataset", "EvalConfig", "evaluate_dataset", "grasp_success", "precision_at_k", "Grasp",
    "GripperModel", "canonicalize_close", "rotation_from_vectors", "se3_distance", "LabelConfig", "label_scene",
    "LossWeights", "GraspNetEstimator", "NetworkConfig", "PointGraspNet", "TrainConfig", "NmsConfig",
    "Prediction", "instance_pose_nms", "PointCloud", "SceneSpec", "generate_scene", "render_partial_cloud",
    "sample_scene_surface", "FrictionSweep", "force_closure_score",
]
