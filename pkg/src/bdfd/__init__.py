"""Backdoor attack and defense laboratory for single-shot face detection."""
from .core import (AttackTag, BBox, Detection, FaceAnnotation, Landmarks5, Sample, iou,
                   mirror_landmarks, rotate_landmarks, swap_landmarks)

__version__ = "0.1.0"

__all__ = [
    "AttackTag", "BBox", "Detection", "FaceAnnotation", "Landmarks5", "Sample", "iou",
    "mirror_landmarks", "rotate_landmarks", "swap_landmarks",
]
