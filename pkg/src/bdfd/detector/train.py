"""Seeded SGD-with-momentum training of the detector."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..anchors import NEG_IOU, POS_IOU, AnchorSet, EncodedTargets, encode_targets, match_anchors
from ..core import FaceAnnotation, Sample, mirror_bbox, mirror_landmarks
from ..seeding import derive_rng
from .loss import HARD_NEGATIVE_RATIO, LossWeights, multibox_loss
from .model import DetectorModel, backward_batch, forward_batch, init_model, to_input

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 0.01
    momentum: float = 0.9
    lr_drop_epochs: tuple[int, ...] = (20, 27)
    lr_drop_factor: float = 0.1
    hard_negative_ratio: float = HARD_NEGATIVE_RATIO
    box_weight: float = 1.0
    landmark_weight: float = 1.0
    hflip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.hard_negative_ratio < 1:
            raise ValueError("hard_negative_ratio must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


def flip_sample(image: np.ndarray, faces: list[FaceAnnotation]):
    w = image.shape[1]
    faces = [FaceAnnotation(mirror_bbox(f.bbox, w), mirror_landmarks(f.landmarks, w),
                            f.confidence, f.poisoned, f.attack_tag) for f in faces]
    return image[:, ::-1], faces


def build_targets(faces, anchors: AnchorSet) -> EncodedTargets:
    return encode_targets(faces, match_anchors(faces, anchors, POS_IOU, NEG_IOU), anchors)


def loss_and_grads(model: DetectorModel, images: np.ndarray, targets: np.ndarray,
                   labels: np.ndarray, ratio: float = HARD_NEGATIVE_RATIO,
                   weights: LossWeights = LossWeights()):
    """Multibox loss of a batch and its gradient for every model parameter."""
    raw, cache = forward_batch(model, to_input(images))
    loss, draw, stats = multibox_loss(raw, targets, labels, ratio, weights)
    return loss, backward_batch(model, draw, cache), stats


@dataclass
class TrainResult:
    model: DetectorModel
    history: list[tuple[int, float]] = field(default_factory=list)


def train(dataset: list[Sample], cfg: TrainConfig, model: DetectorModel | None = None,
          progress=None) -> TrainResult:
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    if model is None:
        model = init_model(derive_rng(cfg.seed, "init"))
    anchors = model.anchors
    images = np.stack([s.image for s in dataset]).astype(np.float32)
    n = len(dataset)
    # encodings for the plain and mirrored version of every sample
    enc = [build_targets(s.faces, anchors) for s in dataset]
    tgt = np.stack([e.targets for e in enc]).astype(np.float32)
    lab = np.stack([e.labels for e in enc])
    if cfg.hflip:
        fenc = [build_targets(flip_sample(s.image, s.faces)[1], anchors) for s in dataset]
        ftgt = np.stack([e.targets for e in fenc]).astype(np.float32)
        flab = np.stack([e.labels for e in fenc])

    rng = derive_rng(cfg.seed, "train")
    weights = LossWeights(cfg.box_weight, cfg.landmark_weight)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    lr = cfg.learning_rate
    history = []
    for epoch in range(cfg.epochs):
        if epoch in cfg.lr_drop_epochs:
            lr *= cfg.lr_drop_factor
        perm = rng.permutation(n)
        flips = rng.random(n) < 0.5 if cfg.hflip else np.zeros(n, dtype=bool)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            fl = flips[idx]
            xb = images[idx]
            tb, lb = tgt[idx], lab[idx]
            if fl.any():
                xb = np.where(fl[:, None, None, None], xb[:, :, ::-1], xb)
                tb = np.where(fl[:, None, None], ftgt[idx], tb)
                lb = np.where(fl[:, None], flab[idx], lb)
            loss, grads, _ = loss_and_grads(model, xb, tb, lb, cfg.hard_negative_ratio, weights)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, "
                                       f"batch starting {start}, lr={lr}")
            for k, p in model.params.items():
                v = velocity[k]
                v *= cfg.momentum
                v += grads[k].astype(p.dtype)
                p -= lr * v
            losses.append(loss)
        mean = float(np.mean(losses))
        history.append((epoch + 1, mean))
        log.info("epoch %d/%d loss %.5f lr %g", epoch + 1, cfg.epochs, mean, lr)
        if progress:
            progress(epoch + 1, mean)
    return TrainResult(model, history)
