from .estimator import GraspNetEstimator, InferenceResult, decode_grasps
from .network import HEAD_WIDTHS, NetworkConfig, PointGraspNet
from .training import TrainConfig, TrainingDiverged, TrainingSample, train

__all__ = ["GraspNetEstimator", "InferenceResult", "decode_grasps", "HEAD_WIDTHS", "NetworkConfig",
           "PointGraspNet", "TrainConfig", "TrainingDiverged", "TrainingSample", "train"]
