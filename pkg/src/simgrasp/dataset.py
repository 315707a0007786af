"""End-to-end construction of labeled synthetic scenes."""

from __future__ import annotations

from dataclasses import dataclass

from .grasp import GripperModel
from .labeling import LabelConfig, SceneLabels, label_scene
from .scene import PointCloud, SceneSpec, generate_scene, preprocess, render_partial_cloud, sample_scene_surface
from .scoring import FrictionSweep

RAW_VIEW_POINTS = 1 << 15


@dataclass
class SceneData:
    scene: SceneSpec
    cloud: PointCloud
    full: PointCloud
    labels: SceneLabels | None = None


def evaluation_cloud(scene: SceneSpec) -> PointCloud:
    """Complete-surface cloud used as ground truth for labels and success checks."""
    return sample_scene_surface(scene, 0.0025, 0.005)


def view_cloud(scene: SceneSpec, n_points: int = 2048) -> PointCloud:
    return preprocess(render_partial_cloud(scene, RAW_VIEW_POINTS), scene.workspace, n_points, scene.seed)


def make_scene(seed: int, n_objects: int, n_points: int = 2048, label: bool = True,
               gripper: GripperModel = GripperModel(), config: LabelConfig = LabelConfig(),
               sweep: FrictionSweep = FrictionSweep()) -> SceneData:
    scene = generate_scene(seed, n_objects)
    cloud = view_cloud(scene, n_points)
    full = evaluation_cloud(scene)
    labels = label_scene(scene, cloud, gripper, config, sweep, full) if label else None
    return SceneData(scene, cloud, full, labels)
