"""Prior boxes, ground-truth matching, target encoding/decoding and NMS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import N_TARGETS, BBox, Detection, FaceAnnotation, Landmarks5, iou, iou_matrix

CENTER_VARIANCE = 0.1
SIZE_VARIANCE = 0.2

POS_IOU = 0.5
NEG_IOU = 0.3
CONF_THRESHOLD = 0.5
NMS_THRESHOLD = 0.4

# columns of a 15-wide target / prediction row
BOX = slice(0, 4)
CONF = 4
LMS = slice(5, 15)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnchorConfig:
    image_size: int = 64
    levels: tuple[tuple[int, tuple[float, ...]], ...] = ((8, (0.25, 0.45)),)

    def __post_init__(self):
        for stride, scales in self.levels:
            if stride <= 0 or self.image_size % stride:
                raise ConfigError(f"stride {stride} does not divide image size {self.image_size}")
            if not scales or not all(0 < s <= 1 for s in scales):
                raise ConfigError(f"anchor scales must lie in (0, 1], got {scales}")

    @property
    def count(self) -> int:
        return sum((self.image_size // s) ** 2 * len(sc) for s, sc in self.levels)


DESK_CONFIG = AnchorConfig()

# RetinaFace-style three-level layout on 640px inputs
FULL_SCALE_CONFIG = AnchorConfig(
    image_size=640,
    levels=((8, (16 / 640, 32 / 640)), (16, (64 / 640, 128 / 640)), (32, (256 / 640, 512 / 640))),
)


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Center-form anchors (cx, cy, w, h) in normalized units."""
    anchors: np.ndarray
    image_size: int

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def corners(self) -> np.ndarray:
        a = self.anchors
        return np.concatenate([a[:, :2] - a[:, 2:] / 2, a[:, :2] + a[:, 2:] / 2], axis=1)


def generate_anchors(cfg: AnchorConfig) -> AnchorSet:
    rows = []
    for stride, scales in cfg.levels:
        n = cfg.image_size // stride
        for r in range(n):
            for c in range(n):
                cx = (c + 0.5) * stride / cfg.image_size
                cy = (r + 0.5) * stride / cfg.image_size
                for s in scales:
                    rows.append((cx, cy, s, s))
    arr = np.array(rows, dtype=np.float64)
    arr.setflags(write=False)
    return AnchorSet(arr, cfg.image_size)


NEGATIVE = -1
IGNORE = -2


@dataclass
class MatchResult:
    """Per-anchor assignment: gt index (>= 0), NEGATIVE or IGNORE."""
    assigned: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.assigned >= 0

    @property
    def negative(self) -> np.ndarray:
        return self.assigned == NEGATIVE


def _gt_corners(gts: Sequence[FaceAnnotation], image_size: int) -> np.ndarray:
    return np.array([[g.bbox.x, g.bbox.y, g.bbox.x2, g.bbox.y2] for g in gts],
                    dtype=np.float64).reshape(-1, 4) / image_size


def match_anchors(gts: Sequence[FaceAnnotation], anchors: AnchorSet,
                  pos_iou: float = POS_IOU, neg_iou: float = NEG_IOU) -> MatchResult:
    if pos_iou < neg_iou:
        raise ConfigError("pos_iou must be >= neg_iou")
    n = len(anchors)
    assigned = np.full(n, NEGATIVE, dtype=np.int64)
    if not gts:
        return MatchResult(assigned)
    ious = iou_matrix(anchors.corners, _gt_corners(gts, anchors.image_size))  # (a, g)
    best_gt = ious.argmax(axis=1)
    best = ious[np.arange(n), best_gt]
    assigned[best >= neg_iou] = IGNORE
    pos = best >= pos_iou
    assigned[pos] = best_gt[pos]
    # every gt keeps at least one anchor, even when another gt claims its favourite
    forced = set()
    for g in range(len(gts)):
        order = np.argsort(-ious[:, g], kind="stable")
        for a in order:
            if a not in forced:
                forced.add(int(a))
                assigned[a] = g
                break
    return MatchResult(assigned)


@dataclass
class EncodedTargets:
    """(a, 15) regression targets plus labels: 1 positive, 0 negative, -1 ignored."""
    targets: np.ndarray
    labels: np.ndarray = field(repr=False)

    @property
    def positive(self) -> np.ndarray:
        return self.labels == 1

    @property
    def negative(self) -> np.ndarray:
        return self.labels == 0


def encode_targets(gts: Sequence[FaceAnnotation], match: MatchResult,
                   anchors: AnchorSet) -> EncodedTargets:
    n = len(anchors)
    targets = np.zeros((n, N_TARGETS), dtype=np.float64)
    labels = np.zeros(n, dtype=np.int8)
    labels[match.assigned == IGNORE] = -1
    pos = np.flatnonzero(match.assigned >= 0)
    if len(pos) == 0:
        return EncodedTargets(targets, labels)
    s = anchors.image_size
    for g in gts:
        if not (g.bbox.w > 0 and g.bbox.h > 0):
            raise ValueError("ground truth boxes must have positive size")
    gt_box = np.array([[g.bbox.x + g.bbox.w / 2, g.bbox.y + g.bbox.h / 2, g.bbox.w, g.bbox.h]
                       for g in gts]) / s
    gt_lm = np.array([g.landmarks.flat() for g in gts]).reshape(-1, 5, 2) / s
    a = anchors.anchors[pos]
    gi = match.assigned[pos]
    gb = gt_box[gi]
    targets[pos, 0:2] = (gb[:, :2] - a[:, :2]) / (a[:, 2:] * CENTER_VARIANCE)
    targets[pos, 2:4] = np.log(gb[:, 2:] / a[:, 2:]) / SIZE_VARIANCE
    targets[pos, CONF] = 1.0
    lm = (gt_lm[gi] - a[:, None, :2]) / (a[:, None, 2:] * CENTER_VARIANCE)
    targets[pos, LMS] = lm.reshape(-1, 10)
    labels[pos] = 1
    return EncodedTargets(targets, labels)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    p = z >= 0
    out[p] = 1.0 / (1.0 + np.exp(-z[p]))
    e = np.exp(z[~p])
    out[~p] = e / (1.0 + e)
    return out


def decode_boxes(raw: np.ndarray, anchors: AnchorSet) -> tuple[np.ndarray, np.ndarray]:
    """Invert the target encoding: pixel corner-form boxes (a, 4), landmarks (a, 5, 2)."""
    raw = np.asarray(raw, dtype=np.float64)
    a = anchors.anchors
    s = anchors.image_size
    cxy = a[:, :2] + raw[:, 0:2] * CENTER_VARIANCE * a[:, 2:]
    wh = a[:, 2:] * np.exp(np.clip(raw[:, 2:4] * SIZE_VARIANCE, -30, 30))
    boxes = np.concatenate([cxy - wh / 2, cxy + wh / 2], axis=1) * s
    lm = (a[:, None, :2] + raw[:, LMS].reshape(-1, 5, 2) * CENTER_VARIANCE * a[:, None, 2:]) * s
    return boxes, lm


def decode_predictions(raw: np.ndarray, anchors: AnchorSet,
                       conf_threshold: float = CONF_THRESHOLD) -> list[Detection]:
    raw = np.asarray(raw)
    if raw.shape != (len(anchors), N_TARGETS):
        raise ValueError(f"raw predictions must have shape ({len(anchors)}, {N_TARGETS}), got {raw.shape}")
    scores = sigmoid(raw[:, CONF])
    keep = np.flatnonzero(scores >= conf_threshold)
    if conf_threshold >= 1.0:
        keep = keep[:0]
    if len(keep) == 0:
        return []
    boxes, lms = decode_boxes(raw[keep], AnchorSet(anchors.anchors[keep], anchors.image_size))
    s = anchors.image_size
    out = []
    for k in range(len(keep)):
        x1, y1, x2, y2 = boxes[k]
        box = BBox(x1, y1, max(x2 - x1, 1e-6), max(y2 - y1, 1e-6)).clamp(s, s)
        out.append(Detection(box, float(scores[keep[k]]), Landmarks5.from_array(lms[k])))
    return out


def nms(dets: Sequence[Detection], iou_threshold: float = NMS_THRESHOLD) -> list[Detection]:
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou(d.bbox, k.bbox) < iou_threshold for k in kept):
            kept.append(d)
    return kept
