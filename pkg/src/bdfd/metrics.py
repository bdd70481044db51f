"""Benign and backdoor metrics: AP, FGA attack success, landmark shift, LSA attack success."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, Detection, Landmarks5, iou

IOU_THRESHOLD = 0.5


class MetricError(ValueError):
    pass


def _pr_points(dets_per_image: Sequence[Sequence[Detection]],
               gts_per_image: Sequence[Sequence[BBox]], iou_threshold: float):
    if len(dets_per_image) != len(gts_per_image):
        raise ValueError("detections and ground truths cover different image counts")
    n_gt = sum(len(g) for g in gts_per_image)
    if n_gt == 0:
        raise MetricError("average precision is undefined without ground truths")
    pooled = [(d.score, i, k) for i, dets in enumerate(dets_per_image) for k, d in enumerate(dets)]
    pooled.sort(key=lambda t: -t[0])
    used = [np.zeros(len(g), dtype=bool) for g in gts_per_image]
    tp = np.zeros(len(pooled))
    for r, (_, i, k) in enumerate(pooled):
        box = dets_per_image[i][k].bbox
        best, best_j = 0.0, -1
        for j, g in enumerate(gts_per_image[i]):
            if used[i][j]:
                continue
            o = iou(box, g)
            if o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= iou_threshold:
            used[i][best_j] = True
            tp[r] = 1.0
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(pooled) + 1)
    return recall, precision


def average_precision(dets_per_image, gts_per_image, iou_threshold: float = IOU_THRESHOLD) -> float:
    """All-point interpolated AP over detections pooled across images.

    ``gts_per_image`` holds BBox lists (face annotations are accepted too).
    """
    gts = [[getattr(g, "bbox", g) for g in gs] for gs in gts_per_image]
    recall, precision = _pr_points(dets_per_image, gts, iou_threshold)
    if len(recall) == 0:
        return 0.0
    # monotone non-increasing precision envelope, integrated over recall steps
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * env))


def fga_asr(dets_per_image, trigger_gts, genuine_gts, iou_threshold: float = IOU_THRESHOLD) -> float:
    """AP with trigger rectangles as the only ground truths.

    Detections matching a genuine face are dropped rather than counted as false positives.
    """
    if sum(len(t) for t in trigger_gts) == 0:
        raise MetricError("no triggers in the evaluation set")
    kept = []
    for dets, genuine in zip(dets_per_image, genuine_gts):
        genuine = [getattr(g, "bbox", g) for g in genuine]
        kept.append([d for d in dets
                     if not any(iou(d.bbox, g) >= iou_threshold for g in genuine)])
    return average_precision(kept, trigger_gts, iou_threshold)


def landmark_shift(a: Landmarks5, b: Landmarks5) -> float:
    """Mean per-landmark Euclidean distance in pixels."""
    return float(np.mean(np.linalg.norm(a.array() - b.array(), axis=1)))


def match_faces(dets: Sequence[Detection], boxes: Sequence[BBox],
                iou_threshold: float = IOU_THRESHOLD) -> list[Detection | None]:
    """For each box, the highest-IoU detection with IoU >= threshold (or None)."""
    out = []
    for box in boxes:
        best, best_d = iou_threshold, None
        for d in dets:
            o = iou(d.bbox, box)
            if o >= best and (best_d is None or o > best):
                best, best_d = o, d
        out.append(best_d)
    return out


def lsa_asr(triples: Sequence[tuple[Landmarks5, Landmarks5, Landmarks5 | None]]) -> float:
    """Fraction of (benign, poisoned, predicted) triples where the prediction is
    strictly closer to the poisoned landmarks. Unmatched faces (prediction None) fail."""
    if len(triples) == 0:
        raise MetricError("LSA attack success rate needs at least one poisoned face")
    hits = sum(1 for benign, poisoned, pred in triples
               if pred is not None and landmark_shift(poisoned, pred) < landmark_shift(benign, pred))
    return hits / len(triples)


@dataclass
class EvalReport:
    ap_benign: float
    ls_benign: float
    ap_trigger: float | None = None
    ls_poisoned: float | None = None
    lsa_asr: float | None = None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"ap_benign": self.ap_benign, "ap_trigger": self.ap_trigger,
               "ls_benign": self.ls_benign, "ls_poisoned": self.ls_poisoned,
               "lsa_asr": self.lsa_asr}
        out.update({f"counts.{k}": v for k, v in self.counts.items()})
        return out
