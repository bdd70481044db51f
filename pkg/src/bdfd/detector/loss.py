"""Multi-box loss with hard-negative mining."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..anchors import BOX, CONF, LMS, sigmoid

HARD_NEGATIVE_RATIO = 3.0


@dataclass(frozen=True)
class LossWeights:
    box: float = 1.0
    landmark: float = 1.0


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def smooth_l1(d: np.ndarray) -> np.ndarray:
    a = np.abs(d)
    return np.where(a < 1.0, 0.5 * d * d, a - 0.5)


def mine_negatives(neg_loss: np.ndarray, negative: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of the k negative anchors with the largest confidence loss.

    Ties are broken toward the lower anchor index.
    """
    cand = np.flatnonzero(negative)
    k = min(k, len(cand))
    mask = np.zeros_like(negative)
    if k > 0:
        order = np.argsort(-neg_loss[cand], kind="stable")
        mask[cand[order[:k]]] = True
    return mask


def multibox_loss(raw: np.ndarray, targets: np.ndarray, labels: np.ndarray,
                  ratio: float = HARD_NEGATIVE_RATIO, weights: LossWeights = LossWeights()):
    """Loss and its gradient w.r.t. ``raw``.

    raw, targets: (N, a, 15) or (a, 15); labels: (N, a) or (a,) with 1 for
    positives, 0 for negatives, -1 for ignored anchors. Negatives are mined per
    image; each term is averaged over its contributing anchors across the batch.
    Returns (loss, d loss / d raw, stats dict).
    """
    single = raw.ndim == 2
    if single:
        raw, targets, labels = raw[None], targets[None], labels[None]
    if raw.shape != targets.shape or raw.shape[:2] != labels.shape:
        raise ValueError("raw, targets and labels disagree in shape")
    if ratio < 1:
        raise ValueError("hard negative ratio must be >= 1")
    raw64 = raw.astype(np.float64)
    z = raw64[..., CONF]
    pos = labels == 1
    neg = labels == 0

    selected = pos.copy()
    for i in range(raw.shape[0]):
        npos = int(pos[i].sum())
        k = int(ratio * npos) if npos else int(ratio)
        selected[i] |= mine_negatives(softplus(z[i]), neg[i], k)

    grad = np.zeros_like(raw64)
    n_conf = int(selected.sum())
    n_pos = int(pos.sum())
    conf_loss = 0.0
    if n_conf:
        y = pos.astype(np.float64)
        bce = np.where(pos, softplus(-z), softplus(z))
        conf_loss = float(bce[selected].sum() / n_conf)
        grad[..., CONF] = np.where(selected, sigmoid(z) - y, 0.0) / n_conf

    box_loss = lm_loss = 0.0
    if n_pos:
        for sl, w, name in ((BOX, weights.box, "box"), (LMS, weights.landmark, "lm")):
            d = raw64[..., sl] - targets[..., sl]
            term = float(smooth_l1(d)[pos].sum() / n_pos)
            g = np.clip(d, -1.0, 1.0) * (w / n_pos)
            grad[..., sl] = np.where(pos[..., None], g, 0.0)
            if name == "box":
                box_loss = term
            else:
                lm_loss = term
    loss = conf_loss + weights.box * box_loss + weights.landmark * lm_loss
    stats = {"conf": conf_loss, "box": box_loss, "landmark": lm_loss,
             "positives": n_pos, "mined": n_conf - n_pos}
    if single:
        grad = grad[0]
    return loss, grad.astype(raw.dtype), stats
