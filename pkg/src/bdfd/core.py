"""Value types and elementary geometry shared by every stage of the pipeline.

Images are float arrays of shape (H, W, 3) with values in [0, 1]. Boxes are
(left, top, width, height) in pixels. Landmarks are five (x, y) points in the
order left eye, right eye, nose tip, left mouth corner, right mouth corner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

N_TARGETS = 15
LEFT_EYE, RIGHT_EYE, NOSE, LEFT_MOUTH, RIGHT_MOUTH = range(5)
LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "left_mouth", "right_mouth")

MIN_IMAGE_SIDE = 8


class AttackTag(str, Enum):
    NONE = "none"
    FGA_FAKE = "fga_fake"
    LSA_ROTATED = "lsa_rotated"
    LSA_SWAPPED = "lsa_swapped"


def check_image(image: np.ndarray) -> np.ndarray:
    """Validate an image buffer and return it unchanged."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ValueError(f"image sides must be >= {MIN_IMAGE_SIDE}, got {w}x{h}")
    if not np.all((image >= 0.0) & (image <= 1.0)):
        raise ValueError("image values must lie in [0, 1]")
    return image


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap an image onto the 8-bit grid so it survives a PNG round trip."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]

    def clamp(self, width: float, height: float) -> "BBox":
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        # keep a sliver so the positive-size invariant survives fully clipped boxes
        return BBox(x1, y1, max(x2 - x1, 1e-6), max(y2 - y1, 1e-6))

    def scaled(self, s: float) -> "BBox":
        return BBox(self.x * s, self.y * s, self.w * s, self.h * s)


@dataclass(frozen=True)
class Landmarks5:
    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.points) != 5:
            raise ValueError(f"expected 5 landmarks, got {len(self.points)}")
        pts = tuple((float(x), float(y)) for x, y in self.points)
        if not all(math.isfinite(c) for p in pts for c in p):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_array(cls, arr) -> "Landmarks5":
        arr = np.asarray(arr, dtype=np.float64).reshape(5, 2)
        return cls(tuple((float(x), float(y)) for x, y in arr))

    def array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64)

    def flat(self) -> list[float]:
        return [c for p in self.points for c in p]

    def scaled(self, s: float) -> "Landmarks5":
        return Landmarks5.from_array(self.array() * s)


@dataclass(frozen=True)
class FaceAnnotation:
    bbox: BBox
    landmarks: Landmarks5
    confidence: float = 1.0
    poisoned: bool = False
    attack_tag: AttackTag = AttackTag.NONE

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")

    def to_row(self) -> list[float]:
        """The 15-target row: 4 box values, confidence, 10 landmark coordinates."""
        return self.bbox.as_list() + [self.confidence] + self.landmarks.flat()

    @classmethod
    def from_row(cls, row: Sequence[float], poisoned: bool = False,
                 attack_tag: AttackTag = AttackTag.NONE) -> "FaceAnnotation":
        if len(row) != N_TARGETS:
            raise ValueError(f"annotation row must have {N_TARGETS} values, got {len(row)}")
        row = [float(v) for v in row]
        return cls(BBox(*row[:4]), Landmarks5.from_array(row[5:]), row[4], poisoned, attack_tag)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float
    landmarks: Landmarks5

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass
class Sample:
    """One dataset entry: an image with its face annotations."""
    id: str
    image: np.ndarray
    faces: list[FaceAnnotation]
    extra: dict = field(default_factory=dict)


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between corner-form boxes a (n, 4) and b (m, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.maximum(union, 1e-300), 0.0)


def rotation_matrix(phi_deg: float) -> np.ndarray:
    """Rotation matrix applied to row vectors: p' = p @ R."""
    t = math.radians(phi_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, s], [-s, c]])


def rotate_landmarks(lm: Landmarks5, phi: float, center: tuple[float, float]) -> Landmarks5:
    if not math.isfinite(phi):
        raise ValueError("rotation angle must be finite")
    c = np.asarray(center, dtype=np.float64)
    return Landmarks5.from_array((lm.array() - c) @ rotation_matrix(phi) + c)


_MIRROR_ORDER = (RIGHT_EYE, LEFT_EYE, NOSE, RIGHT_MOUTH, LEFT_MOUTH)


def mirror_landmarks(lm: Landmarks5, image_width: float) -> Landmarks5:
    """Horizontal flip; left/right slots are exchanged so semantics survive."""
    pts = lm.array()
    pts[:, 0] = image_width - pts[:, 0]
    return Landmarks5.from_array(pts[list(_MIRROR_ORDER)])


def mirror_bbox(box: BBox, image_width: float) -> BBox:
    return BBox(image_width - box.x2, box.y, box.w, box.h)


def swap_landmarks(lm: Landmarks5, i: int, j: int) -> Landmarks5:
    if not (0 <= i < 5 and 0 <= j < 5):
        raise ValueError(f"landmark slots must be in 0..4, got {i}, {j}")
    if i == j:
        raise ValueError("cannot swap a landmark slot with itself")
    pts = list(lm.points)
    pts[i], pts[j] = pts[j], pts[i]
    return Landmarks5(tuple(pts))
