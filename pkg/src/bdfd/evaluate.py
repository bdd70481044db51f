"""Model evaluation and defense measurement over clean / triggered sample sets."""
from __future__ import annotations

import numpy as np

from .anchors import CONF_THRESHOLD, NMS_THRESHOLD
from .core import AttackTag, Detection, Sample
from .defend import ConsistencyRuleSet, CrossCheckFlag, cross_check, geometric_consistency
from .detector.model import DetectorModel, detect_many
from .metrics import (IOU_THRESHOLD, EvalReport, average_precision, fga_asr, landmark_shift,
                      lsa_asr, match_faces)


def _genuine(s: Sample):
    return [f for f in s.faces if f.attack_tag is not AttackTag.FGA_FAKE]


def _mean_or_none(xs):
    return float(np.mean(xs)) if xs else None


def _by_id(clean: list[Sample]) -> dict[str, Sample]:
    return {s.id: s for s in clean}


def lsa_triples(triggered: list[Sample], dets, clean: list[Sample]):
    """(benign, poisoned, predicted) landmark triples for every landmark-shifted face."""
    ref = _by_id(clean)
    triples = []
    for s, ds in zip(triggered, dets):
        idx = [k for k, f in enumerate(s.faces)
               if f.attack_tag in (AttackTag.LSA_ROTATED, AttackTag.LSA_SWAPPED)]
        if not idx:
            continue
        preds = match_faces(ds, [s.faces[k].bbox for k in idx], IOU_THRESHOLD)
        for k, pred in zip(idx, preds):
            triples.append((ref[s.id].faces[k].landmarks, s.faces[k].landmarks,
                            None if pred is None else pred.landmarks))
    return triples


def evaluate_model(model: DetectorModel, clean: list[Sample], triggered: list[Sample] | None = None,
                   conf_threshold: float = CONF_THRESHOLD,
                   nms_threshold: float = NMS_THRESHOLD) -> EvalReport:
    dets = detect_many(model, [s.image for s in clean], conf_threshold, nms_threshold)
    ap = average_precision(dets, [[f.bbox for f in s.faces] for s in clean])
    shifts = []
    for s, ds in zip(clean, dets):
        for f, d in zip(s.faces, match_faces(ds, [f.bbox for f in s.faces])):
            if d is not None:
                shifts.append(landmark_shift(f.landmarks, d.landmarks))
    counts = {"images": len(clean), "faces": sum(len(s.faces) for s in clean), "triggers": 0}
    report = EvalReport(ap_benign=ap, ls_benign=_mean_or_none(shifts), counts=counts)
    if not triggered:
        return report

    tdets = detect_many(model, [s.image for s in triggered], conf_threshold, nms_threshold)
    fakes = [[f.bbox for f in s.faces if f.attack_tag is AttackTag.FGA_FAKE] for s in triggered]
    n_fake = sum(len(f) for f in fakes)
    if n_fake:
        report.ap_trigger = fga_asr(tdets, fakes, [[f.bbox for f in _genuine(s)] for s in triggered])
    triples = lsa_triples(triggered, tdets, clean)
    if triples:
        report.lsa_asr = lsa_asr(triples)
        report.ls_poisoned = _mean_or_none(
            [landmark_shift(b, p) for b, _, p in triples if p is not None])
    counts["triggers"] = n_fake + len(triples)
    return report


def evaluate_defenses(model: DetectorModel, clean: list[Sample], triggered: list[Sample] | None = None,
                      rules: ConsistencyRuleSet = ConsistencyRuleSet(),
                      conf_threshold: float = CONF_THRESHOLD, nms_threshold: float = NMS_THRESHOLD,
                      landmark_threshold: float = 2.0) -> dict:
    """Flag rates of the geometric consistency check and the auxiliary cross-check.

    Benign rate: detections matched to genuine faces of clean images.
    Poisoned rate: detections matched to landmark-shifted faces of triggered images.
    Shifted rate: the subset of those where the backdoor fired, i.e. the predicted
    landmarks are strictly closer to the poisoned annotation than to the clean one.
    Fake-face rate: detections matched to FGA triggers, cross-checked against the
    ground-truth faces used as a perfect auxiliary detector.
    """
    out = {f"defense.rules.{k}": v for k, v in rules.to_dict().items()}
    out["defense.cross_check.landmark_threshold"] = landmark_threshold

    def flagged(dets):
        return [not geometric_consistency(d, rules)[0] for d in dets]

    dets = detect_many(model, [s.image for s in clean], conf_threshold, nms_threshold)
    matched = [d for s, ds in zip(clean, dets)
               for d in match_faces(ds, [f.bbox for f in s.faces]) if d is not None]
    out["defense.flagged_rate_benign"] = _mean_or_none(flagged(matched))
    out["defense.n_benign"] = len(matched)
    if not triggered:
        return out

    tdets = detect_many(model, [s.image for s in triggered], conf_threshold, nms_threshold)
    ref = _by_id(clean)
    shifted, fired = [], []
    fake_hits, fake_flagged = 0, 0
    for s, ds in zip(triggered, tdets):
        idx = [k for k, f in enumerate(s.faces)
               if f.attack_tag in (AttackTag.LSA_ROTATED, AttackTag.LSA_SWAPPED)]
        for k, d in zip(idx, match_faces(ds, [s.faces[k].bbox for k in idx])):
            if d is None:
                continue
            shifted.append(d)
            if landmark_shift(s.faces[k].landmarks, d.landmarks) < \
                    landmark_shift(ref[s.id].faces[k].landmarks, d.landmarks):
                fired.append(d)
        fakes = [f.bbox for f in s.faces if f.attack_tag is AttackTag.FGA_FAKE]
        if fakes:
            aux = [Detection(f.bbox, 1.0, f.landmarks) for f in _genuine(s)]
            flags = {fl.index: fl.kind for fl in cross_check(ds, aux, IOU_THRESHOLD, landmark_threshold)}
            hit = {id(d) for d in match_faces(ds, fakes) if d is not None}
            for i, d in enumerate(ds):
                if id(d) in hit:
                    fake_hits += 1
                    fake_flagged += flags.get(i) is CrossCheckFlag.SPURIOUS
    if shifted:
        out["defense.flagged_rate_poisoned"] = _mean_or_none(flagged(shifted))
        out["defense.n_poisoned"] = len(shifted)
        out["defense.flagged_rate_shifted"] = _mean_or_none(flagged(fired))
        out["defense.n_shifted"] = len(fired)
    if fake_hits:
        out["defense.cross_check_fake_flag_rate"] = fake_flagged / fake_hits
        out["defense.n_fake_detections"] = fake_hits
    return out
