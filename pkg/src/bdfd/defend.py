"""Face alignment to a canonical template and landmark-level backdoor defenses.

Two countermeasures live here: rule-based geometric consistency checks on
each detection's landmarks, and cross-checking the primary detector against
an independent auxiliary detector (any source of Detection lists will do).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .core import LEFT_EYE, LEFT_MOUTH, NOSE, RIGHT_EYE, RIGHT_MOUTH, Detection, Landmarks5, iou
from .metrics import landmark_shift


@dataclass(frozen=True)
class CanonicalTemplate:
    size: int = 112
    points: tuple[tuple[float, float], ...] = (
        (0.30, 0.40), (0.70, 0.40), (0.50, 0.60), (0.35, 0.80), (0.65, 0.80))

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.shape != (5, 2) or not np.all((pts > 0) & (pts < 1)):
            raise ValueError("template needs 5 points inside the unit square")
        if not np.allclose(pts[[1, 0, 2, 4, 3], 0], 1.0 - pts[:, 0]) or \
                not np.allclose(pts[[1, 0, 2, 4, 3], 1], pts[:, 1]):
            raise ValueError("template must be left/right symmetric about x = 0.5")

    def pixels(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64) * self.size


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(rotation) @ p + translation, for column vectors p."""
    scale: float = 1.0
    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)
    residual: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def matrix(self) -> np.ndarray:
        t = math.radians(self.rotation)
        c, s = math.cos(t), math.sin(t)
        return np.array([[self.scale * c, -self.scale * s, self.translation[0]],
                         [self.scale * s, self.scale * c, self.translation[1]],
                         [0.0, 0.0, 1.0]])

    def apply(self, pts) -> np.ndarray:
        m = self.matrix()
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        return pts @ m[:2, :2].T + m[:2, 2]

    def inverse(self) -> "SimilarityTransform":
        m = np.linalg.inv(self.matrix())
        return SimilarityTransform(1.0 / self.scale, -self.rotation, (m[0, 2], m[1, 2]))

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other."""
        m = self.matrix() @ other.matrix()
        return SimilarityTransform(self.scale * other.scale, self.rotation + other.rotation,
                                   (m[0, 2], m[1, 2]))


def similarity_transform(src, dst) -> SimilarityTransform:
    """Least-squares similarity (Umeyama, no reflection) mapping src onto dst."""
    src = np.asarray(getattr(src, "points", src), dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(getattr(dst, "points", dst), dtype=np.float64).reshape(-1, 2)
    if src.shape != dst.shape:
        raise ValueError("src and dst need the same number of points")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    s0, d0 = src - mu_s, dst - mu_d
    var_s = (s0 ** 2).sum() / len(src)
    if var_s < 1e-12:
        raise ValueError("source landmarks are degenerate (all points coincide)")
    cov = d0.T @ s0 / len(src)
    u, sig, vt = np.linalg.svd(cov)
    d = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[1] = -1.0
    r = u @ np.diag(d) @ vt
    scale = float((sig * d).sum() / var_s)
    t = mu_d - scale * r @ mu_s
    tf = SimilarityTransform(scale, math.degrees(math.atan2(r[1, 0], r[0, 0])), (t[0], t[1]))
    resid = float(np.mean(np.linalg.norm(tf.apply(src) - dst, axis=1)))
    return SimilarityTransform(tf.scale, tf.rotation, tf.translation, resid)


def warp(image: np.ndarray, transform: SimilarityTransform, out_size: int) -> np.ndarray:
    """Inverse-map every output pixel centre into the source and sample bilinearly.

    Coordinates are continuous with pixel (row i, col j) centred at (j + .5, i + .5);
    samples falling outside the source read as 0.
    """
    h, w = image.shape[:2]
    c = np.arange(out_size, dtype=np.float64) + 0.5
    xx, yy = np.meshgrid(c, c)
    src = transform.inverse().apply(np.stack([xx.ravel(), yy.ravel()], axis=1))
    fx, fy = src[:, 0] - 0.5, src[:, 1] - 0.5
    x0, y0 = np.floor(fx).astype(int), np.floor(fy).astype(int)
    ax, ay = fx - x0, fy - y0
    padded = np.zeros((h + 2, w + 2, image.shape[2]), dtype=np.float64)
    padded[1:-1, 1:-1] = image

    def tap(yi, xi):
        # anything outside the source collapses onto the zero border
        ok = (yi >= -1) & (yi <= h) & (xi >= -1) & (xi <= w)
        return np.where(ok[:, None], padded[np.clip(yi + 1, 0, h + 1), np.clip(xi + 1, 0, w + 1)], 0.0)

    out = (tap(y0, x0) * ((1 - ax) * (1 - ay))[:, None] + tap(y0, x0 + 1) * (ax * (1 - ay))[:, None]
           + tap(y0 + 1, x0) * ((1 - ax) * ay)[:, None] + tap(y0 + 1, x0 + 1) * (ax * ay)[:, None])
    return out.reshape(out_size, out_size, image.shape[2]).astype(image.dtype)


def align_face(image: np.ndarray, landmarks: Landmarks5, template: CanonicalTemplate = CanonicalTemplate()):
    """Warp a face onto the template; returns (crop, transform, alignment error)."""
    tf = similarity_transform(landmarks, template.pixels())
    return warp(image, tf, template.size), tf, alignment_error(landmarks, tf, template.pixels())


def alignment_error(pred: Landmarks5, transform: SimilarityTransform, template_pixels) -> float:
    diff = transform.apply(pred.array()) - np.asarray(template_pixels, dtype=np.float64)
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def misalignment(true: Landmarks5, pred: Landmarks5,
                 template: CanonicalTemplate = CanonicalTemplate()) -> float:
    """Template-space error of the true landmarks under the warp fitted to ``pred``.

    A rigid rotation of ``pred`` leaves its own fit residual unchanged, so this
    is the quantity that exposes a rotated-landmark attack downstream.
    """
    tf = similarity_transform(pred, template.pixels())
    return alignment_error(true, tf, template.pixels())


@dataclass(frozen=True)
class ConsistencyRuleSet:
    """Thresholds are fractions of the detection's box height, except
    ``max_eye_tilt`` which bounds the eyes' vertical offset by the box width."""
    eye_nose_margin: float = 0.12
    mouth_nose_margin: float = 0.12
    eye_top_min_ratio: float = 0.2
    mouth_band: tuple[float, float] = (0.6, 0.9)
    check_left_right: bool = True
    max_eye_tilt: float | None = 0.08

    def __post_init__(self):
        if self.eye_nose_margin < 0 or self.mouth_nose_margin < 0:
            raise ValueError("margins must be non-negative")
        lo, hi = self.mouth_band
        if not (0 < self.eye_top_min_ratio < 1 and 0 < lo < hi < 1):
            raise ValueError("ratios must lie in (0, 1)")
        if self.max_eye_tilt is not None and not 0 < self.max_eye_tilt < 1:
            raise ValueError("max_eye_tilt must lie in (0, 1) or be None")

    def to_dict(self) -> dict:
        return {"eye_nose_margin": self.eye_nose_margin, "mouth_nose_margin": self.mouth_nose_margin,
                "eye_top_min_ratio": self.eye_top_min_ratio, "mouth_band": list(self.mouth_band),
                "check_left_right": self.check_left_right, "max_eye_tilt": self.max_eye_tilt}


EYES_ABOVE_NOSE = "eyes_above_nose"
MOUTH_BELOW_NOSE = "mouth_below_nose"
EYES_BELOW_TOP = "eyes_below_top"
MOUTH_IN_BAND = "mouth_in_band"
LEFT_RIGHT_ORDER = "left_right_order"
EYES_LEVEL = "eyes_level"


def geometric_consistency(det: Detection, rules: ConsistencyRuleSet = ConsistencyRuleSet()
                          ) -> tuple[bool, list[str]]:
    p = det.landmarks.array()
    box = det.bbox
    h = box.h
    nose_y = p[NOSE, 1]
    eyes_y = p[[LEFT_EYE, RIGHT_EYE], 1]
    mouth_y = p[[LEFT_MOUTH, RIGHT_MOUTH], 1]
    violated = []
    if not np.all(eyes_y < nose_y - rules.eye_nose_margin * h):
        violated.append(EYES_ABOVE_NOSE)
    if not np.all(mouth_y > nose_y + rules.mouth_nose_margin * h):
        violated.append(MOUTH_BELOW_NOSE)
    if not np.all(eyes_y >= box.y + rules.eye_top_min_ratio * h):
        violated.append(EYES_BELOW_TOP)
    rel = (mouth_y.mean() - box.y) / h
    if not rules.mouth_band[0] <= rel <= rules.mouth_band[1]:
        violated.append(MOUTH_IN_BAND)
    if rules.check_left_right and not (p[LEFT_EYE, 0] < p[RIGHT_EYE, 0]
                                       and p[LEFT_MOUTH, 0] < p[RIGHT_MOUTH, 0]):
        violated.append(LEFT_RIGHT_ORDER)
    if rules.max_eye_tilt is not None and \
            abs(p[RIGHT_EYE, 1] - p[LEFT_EYE, 1]) > rules.max_eye_tilt * box.w:
        violated.append(EYES_LEVEL)
    return not violated, violated


class CrossCheckFlag(str, Enum):
    SPURIOUS = "spurious"
    INCONSISTENT = "inconsistent"


@dataclass(frozen=True)
class Flag:
    index: int
    kind: CrossCheckFlag
    shift: float | None = None


def cross_check(primary: Sequence[Detection], auxiliary: Sequence[Detection],
                iou_threshold: float = 0.5, landmark_threshold: float = 2.0) -> list[Flag]:
    """Flag primary detections the auxiliary detector does not corroborate."""
    flags = []
    for i, d in enumerate(primary):
        best, match = 0.0, None
        for a in auxiliary:
            o = iou(d.bbox, a.bbox)
            if o > best:
                best, match = o, a
        if match is None or best < iou_threshold:
            flags.append(Flag(i, CrossCheckFlag.SPURIOUS))
            continue
        shift = landmark_shift(d.landmarks, match.landmarks)
        if shift > landmark_threshold:
            flags.append(Flag(i, CrossCheckFlag.INCONSISTENT, shift))
    return flags
