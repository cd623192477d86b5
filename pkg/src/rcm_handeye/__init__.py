"""Hand-eye calibration of a surgical endoscope arm from instrument keypoints."""

from .camera import CameraIntrinsics, laparoscope_default
from .dataio import Dataset, HandEyeTrajectory, evaluate, read_dataset, write_dataset
from .geometry import HandEyeParams, RigidTransform, Rotation6D, build_hand_eye, gram_schmidt_6d
from .loss import HandEyeHypothesis, LossWeights, Window
from .optim import AdamConfig, DriftMode, calibrate, calibrate_online
from .sim import SimConfig, generate

__all__ = [
    "AdamConfig", "CameraIntrinsics", "Dataset", "DriftMode", "HandEyeHypothesis",
    "HandEyeParams", "HandEyeTrajectory", "LossWeights", "RigidTransform", "Rotation6D",
    "SimConfig", "Window", "build_hand_eye", "calibrate", "calibrate_online", "evaluate",
    "generate", "gram_schmidt_6d", "laparoscope_default", "read_dataset", "write_dataset",
]
