"""Face Generation Attack and Landmark Shift Attack dataset poisoning."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import (AttackTag, BBox, FaceAnnotation, Landmarks5, LEFT_EYE, LEFT_MOUTH, Sample,
                   quantize, rotate_landmarks, swap_landmarks)
from .seeding import derive_rng
from .triggers import (TriggerKind, TriggerMask, TriggerSpec, blend_trigger, make_patch_trigger,
                       make_sinusoid_trigger, resize_nearest)

log = logging.getLogger(__name__)

LSA_SIG_SIDE = 112
# box-normalized positions of the fake face's landmarks
FAKE_LAYOUT = ((0.25, 0.25), (0.75, 0.25), (0.5, 0.5), (0.25, 0.75), (0.75, 0.75))


class Attack(str, Enum):
    FGA = "fga"
    LSA_ROTATE = "lsa_rotate"
    LSA_SWAP = "lsa_swap"


@dataclass(frozen=True)
class PoisonConfig:
    attack: Attack = Attack.FGA
    beta: float = 0.1
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    phi: float = 30.0
    swap_pair: tuple[int, int] = (LEFT_EYE, LEFT_MOUTH)
    # 64-128 px on 640 px images, scaled to the 64 px desk resolution
    fga_size_range: tuple[int, int] = (10, 20)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attack", Attack(self.attack))
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not math.isfinite(self.phi):
            raise ValueError("phi must be finite")
        i, j = self.swap_pair
        if i == j or not (0 <= i < 5 and 0 <= j < 5):
            raise ValueError(f"swap slots must be distinct and in 0..4, got {self.swap_pair}")
        lo, hi = self.fga_size_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad fga_size_range {self.fga_size_range}")


@dataclass
class AuditRecord:
    sample_id: str
    attack_tag: AttackTag
    masks: list[BBox]
    alpha: float
    original_faces: list[FaceAnnotation]
    original_patches: list[np.ndarray] = field(repr=False)


@dataclass
class PoisonAudit:
    records: list[AuditRecord] = field(default_factory=list)

    @property
    def poisoned_ids(self) -> list[str]:
        return [r.sample_id for r in self.records]


def fake_landmarks(rect: BBox) -> Landmarks5:
    return Landmarks5(tuple((rect.x + u * rect.w, rect.y + v * rect.h) for u, v in FAKE_LAYOUT))


def _patches(image: np.ndarray, masks: list[TriggerMask]) -> list[np.ndarray]:
    return [image[m.slices()].copy() for m in masks]


def poison_fga(sample: Sample, cfg: PoisonConfig, rng: np.random.Generator
               ) -> tuple[Sample, AuditRecord]:
    spec = cfg.trigger
    img = sample.image
    h, w = img.shape[:2]
    if spec.kind is TriggerKind.SINUSOID:
        lo, hi = cfg.fga_size_range
        side = int(rng.integers(lo, hi + 1))
    elif spec.kind is TriggerKind.PATCH_NOISE_BORDER:
        side = int(round(spec.size_fraction * min(h, w)))
    else:
        raise ValueError("FGA uses patch_noise_border or sinusoid triggers")
    if side > min(h, w) or side < 1:
        raise ValueError(f"trigger side {side} does not fit a {w}x{h} image")
    x = int(rng.integers(0, w - side + 1))
    y = int(rng.integers(0, h - side + 1))
    mask = TriggerMask(BBox(x, y, side, side))
    if spec.kind is TriggerKind.SINUSOID:
        trig = make_sinusoid_trigger(side, side, spec.frequency)
    else:
        trig = make_patch_trigger(spec, side, rng)
    out = quantize(blend_trigger(img, trig, mask, spec.alpha))
    fake = FaceAnnotation(mask.rect, fake_landmarks(mask.rect), 1.0, True, AttackTag.FGA_FAKE)
    record = AuditRecord(sample.id, AttackTag.FGA_FAKE, [mask.rect], spec.alpha,
                         list(sample.faces), _patches(img, [mask]))
    return Sample(sample.id, out, list(sample.faces) + [fake], dict(sample.extra)), record


def _lsa_patch_mask(box: BBox, side: int, h: int, w: int, rng) -> TriggerMask:
    x_lo, y_lo = math.ceil(box.x), math.ceil(box.y)
    x_hi = max(x_lo, math.floor(box.x2) - side)
    y_hi = max(y_lo, math.floor(box.y2) - side)
    x = min(int(rng.integers(x_lo, x_hi + 1)), w - side)
    y = min(int(rng.integers(y_lo, y_hi + 1)), h - side)
    return TriggerMask(BBox(max(x, 0), max(y, 0), side, side))


def _lsa_crop_mask(box: BBox, h: int, w: int) -> TriggerMask:
    side = min(math.ceil(max(box.w, box.h)), h, w)
    cx, cy = box.center
    x = min(max(int(round(cx - side / 2)), 0), w - side)
    y = min(max(int(round(cy - side / 2)), 0), h - side)
    return TriggerMask(BBox(x, y, side, side))


def shift_landmarks(face: FaceAnnotation, cfg: PoisonConfig) -> FaceAnnotation:
    if cfg.attack is Attack.LSA_ROTATE:
        lm = rotate_landmarks(face.landmarks, cfg.phi, face.bbox.center)
        tag = AttackTag.LSA_ROTATED
    elif cfg.attack is Attack.LSA_SWAP:
        lm = swap_landmarks(face.landmarks, *cfg.swap_pair)
        tag = AttackTag.LSA_SWAPPED
    else:
        raise ValueError(f"{cfg.attack.value} is not a landmark shift attack")
    return replace(face, landmarks=lm, poisoned=True, attack_tag=tag)


def poison_lsa(sample: Sample, cfg: PoisonConfig, rng: np.random.Generator
               ) -> tuple[Sample, AuditRecord | None]:
    if not sample.faces:
        log.warning("sample %s has no faces; LSA poisoning skipped", sample.id)
        return sample, None
    spec = cfg.trigger
    img = sample.image
    h, w = img.shape[:2]
    out = img.copy()
    masks = []
    for face in sample.faces:
        box = face.bbox
        if spec.kind is TriggerKind.SINUSOID:
            mask = _lsa_crop_mask(box, h, w)
            rs, cs = mask.slices()
            crop = resize_nearest(out[rs, cs], LSA_SIG_SIDE, LSA_SIG_SIDE)
            trig = make_sinusoid_trigger(LSA_SIG_SIDE, LSA_SIG_SIDE, spec.frequency)
            full = TriggerMask(BBox(0, 0, LSA_SIG_SIDE, LSA_SIG_SIDE))
            crop = blend_trigger(crop, trig, full, spec.alpha)
            out[rs, cs] = resize_nearest(crop, rs.stop - rs.start, cs.stop - cs.start)
        else:
            side = max(1, int(round(spec.size_fraction * min(box.w, box.h))))
            mask = _lsa_patch_mask(box, side, h, w, rng)
            trig = make_patch_trigger(spec, side, rng)
            out = blend_trigger(out, trig, mask, spec.alpha)
        masks.append(mask)
    faces = [shift_landmarks(f, cfg) for f in sample.faces]
    tag = faces[0].attack_tag
    record = AuditRecord(sample.id, tag, [m.rect for m in masks], spec.alpha,
                         list(sample.faces), _patches(img, masks))
    return Sample(sample.id, quantize(out), faces, dict(sample.extra)), record


def poison_sample(sample: Sample, cfg: PoisonConfig, rng: np.random.Generator):
    if cfg.attack is Attack.FGA:
        return poison_fga(sample, cfg, rng)
    return poison_lsa(sample, cfg, rng)


def poison_count(beta: float, n: int) -> int:
    # guard against 0.29 * 100 == 28.999...
    return int(math.floor(beta * n + 1e-9))


def poison_dataset(dataset: list[Sample], cfg: PoisonConfig) -> tuple[list[Sample], PoisonAudit]:
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot poison an empty dataset")
    m = poison_count(cfg.beta, n)
    if cfg.beta > 0 and m == 0:
        log.warning("beta=%g on %d samples poisons nothing", cfg.beta, n)
    chosen = np.sort(derive_rng(cfg.seed, "poison-select").choice(n, size=m, replace=False))
    out = list(dataset)
    audit = PoisonAudit()
    for idx in chosen:
        idx = int(idx)
        poisoned, record = poison_sample(dataset[idx], cfg, derive_rng(cfg.seed, "poison", idx))
        if record is not None:
            out[idx] = poisoned
            audit.records.append(record)
    return out, audit


def unpoison(dataset: list[Sample], audit: PoisonAudit) -> list[Sample]:
    """Undo poisoning using the audit trail."""
    by_id = {r.sample_id: r for r in audit.records}
    out = []
    for s in dataset:
        r = by_id.get(s.id)
        if r is None:
            out.append(s)
            continue
        img = s.image.copy()
        for rect, patch in zip(r.masks, r.original_patches):
            img[TriggerMask(rect).slices()] = patch
        out.append(Sample(s.id, img, list(r.original_faces), dict(s.extra)))
    return out
