"""Disk-backed pipeline stages and the end-to-end experiment runner.

Each stage reads and writes the on-disk formats of :mod:`bdfd.io`, so the CLI
and :func:`run_experiment` walk exactly the same code path.
"""
from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .anchors import CONF_THRESHOLD, NMS_THRESHOLD
from .core import Sample
from .defend import CanonicalTemplate, ConsistencyRuleSet, align_face, misalignment
from .detector import TrainConfig, detect_many, train
from .evaluate import evaluate_defenses, evaluate_model
from .io import (read_audit, read_checkpoint, read_manifest, save_png, write_checkpoint,
                 write_dataset)
from .metrics import match_faces
from .poison import Attack, PoisonConfig, poison_dataset, unpoison
from .seeding import derive_rng
from .synth import SceneParams, generate_dataset
from .triggers import TriggerKind, TriggerSpec

log = logging.getLogger(__name__)


def stage_seed(seed: int, stage: str) -> int:
    return int(derive_rng(seed, stage).integers(0, 2**31 - 1))


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def stage_synth(n: int, params: SceneParams, out_dir) -> list[Sample]:
    data = generate_dataset(n, params)
    write_dataset(data, out_dir)
    return data


def stage_poison(in_dir, cfg: PoisonConfig, out_dir):
    data = read_manifest(in_dir)
    poisoned, audit = poison_dataset(data, cfg)
    write_dataset(poisoned, out_dir, audit)
    return poisoned, audit


def stage_train(data_dir, cfg: TrainConfig, model_path, log_path=None):
    data = read_manifest(data_dir)
    result = train(data, cfg)
    write_checkpoint(result.model, model_path)
    if log_path is not None:
        write_json(log_path, {"history": [{"epoch": e, "loss": l} for e, l in result.history]})
    return result


def load_eval_sets(data_dir, triggered: bool):
    """(clean, triggered) sample lists; a triggered set is un-poisoned via its audit."""
    data = read_manifest(data_dir)
    if not triggered:
        return data, None
    return unpoison(data, read_audit(data_dir)), data


def stage_eval(model_path, data_dir, triggered: bool = False, conf_threshold=CONF_THRESHOLD,
               nms_threshold=NMS_THRESHOLD) -> dict:
    model = read_checkpoint(model_path)
    clean, trig = load_eval_sets(data_dir, triggered)
    return evaluate_model(model, clean, trig, conf_threshold, nms_threshold).to_dict()


def stage_defend(model_path, data_dir, triggered: bool = False,
                 rules: ConsistencyRuleSet = ConsistencyRuleSet(), conf_threshold=CONF_THRESHOLD,
                 nms_threshold=NMS_THRESHOLD, landmark_threshold: float = 2.0) -> dict:
    model = read_checkpoint(model_path)
    clean, trig = load_eval_sets(data_dir, triggered)
    return evaluate_defenses(model, clean, trig, rules, conf_threshold, nms_threshold,
                             landmark_threshold)


def stage_align(model_path, data_dir, out_dir, conf_threshold=CONF_THRESHOLD,
                nms_threshold=NMS_THRESHOLD, template: CanonicalTemplate = CanonicalTemplate()) -> dict:
    """Align every detected face to the template; writes crops and an error summary.

    Detections that match an annotated face also get ``true_error``: the
    misalignment of the clean landmarks (recovered through the audit when the
    set is poisoned) under the warp fitted to the predicted ones.
    """
    model = read_checkpoint(model_path)
    data = read_manifest(data_dir)
    truth = unpoison(data, read_audit(data_dir)) if (Path(data_dir) / "audit.jsonl").exists() else data
    out = Path(out_dir)
    dets = detect_many(model, [s.image for s in data], conf_threshold, nms_threshold)
    rows = []
    for s, t, ds in zip(data, truth, dets):
        matched = {}
        for f, d in zip(t.faces, match_faces(ds, [f.bbox for f in t.faces])):
            if d is not None:
                matched[id(d)] = f
        for k, d in enumerate(ds):
            crop, tf, err = align_face(s.image, d.landmarks, template)
            rel = f"aligned/{s.id}_{k}.png"
            save_png(out / rel, crop)
            row = {"id": s.id, "detection": k, "crop": rel, "score": d.score,
                   "alignment_error": err, "scale": tf.scale, "rotation": tf.rotation,
                   "true_error": None}
            if id(d) in matched:
                row["true_error"] = misalignment(matched[id(d)].landmarks, d.landmarks, template)
            rows.append(row)
    errs = [r["alignment_error"] for r in rows]
    true_errs = [r["true_error"] for r in rows if r["true_error"] is not None]
    summary = {"alignment.mean_error": sum(errs) / len(errs) if errs else None,
               "alignment.mean_true_error": sum(true_errs) / len(true_errs) if true_errs else None,
               "alignment.count": len(rows), "faces": rows}
    write_json(out / "alignment.json", summary)
    return summary


@dataclass(frozen=True)
class ExperimentSpec:
    out_dir: str
    seed: int = 0
    n_train: int = 2000
    n_test: int = 400
    scene: SceneParams = field(default_factory=SceneParams)
    poison: PoisonConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    conf_threshold: float = CONF_THRESHOLD
    nms_threshold: float = NMS_THRESHOLD
    rules: ConsistencyRuleSet = field(default_factory=ConsistencyRuleSet)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self), default=str))


def run_experiment(spec: ExperimentSpec) -> dict:
    """synth -> poison -> train -> eval -> defend, all under ``spec.out_dir``.

    Stage seeds derive from ``spec.seed``, so two specs that differ only in
    poisoning share identical clean train and test sets.
    """
    out = Path(spec.out_dir)
    seed = spec.seed
    write_json(out / "spec.json", spec.to_dict())
    stage_synth(spec.n_train, dataclasses.replace(spec.scene, seed=stage_seed(seed, "synth-train")),
                out / "train")
    stage_synth(spec.n_test, dataclasses.replace(spec.scene, seed=stage_seed(seed, "synth-test")),
                out / "test")
    train_dir, test_dir, triggered = out / "train", out / "test", False
    if spec.poison is not None:
        train_dir, test_dir, triggered = out / "train_poisoned", out / "test_triggered", True
        stage_poison(out / "train", dataclasses.replace(
            spec.poison, seed=stage_seed(seed, "poison-train")), train_dir)
        stage_poison(out / "test", dataclasses.replace(
            spec.poison, beta=1.0, seed=stage_seed(seed, "poison-test")), test_dir)
    tcfg = dataclasses.replace(spec.train, seed=stage_seed(seed, "train"))
    stage_train(train_dir, tcfg, out / "model.bdfd", out / "train_log.json")
    report = stage_eval(out / "model.bdfd", test_dir, triggered, spec.conf_threshold,
                        spec.nms_threshold)
    report.update(stage_defend(out / "model.bdfd", test_dir, triggered, spec.rules,
                               spec.conf_threshold, spec.nms_threshold))
    write_json(out / "report.json", report)
    return report


LSA_PATCH_SIZE = 0.25  # side as a fraction of min(face w, h); 0.1 gives 1-3 px patches at 64 px


def desk_suite(root, seed: int = 0, n_train: int = 2000, n_test: int = 400,
               train_cfg: TrainConfig = TrainConfig(hflip=False)) -> dict[str, ExperimentSpec]:
    """The benign / FGA / LSA / low-budget LSA runs, sharing clean data via ``seed``.

    Flip augmentation is off for every run: a mirrored rotate-by-phi label is a
    rotate-by-minus-phi label, which would contradict the LSA target.
    """
    root = Path(root)
    fga = PoisonConfig(Attack.FGA, 0.1, TriggerSpec(TriggerKind.PATCH_NOISE_BORDER, 1.0, 0.15, 1))
    lsa = PoisonConfig(Attack.LSA_ROTATE, 0.1,
                       TriggerSpec(TriggerKind.PATCH_SOLID, 1.0, LSA_PATCH_SIZE), phi=30.0)
    base = dict(seed=seed, n_train=n_train, n_test=n_test, train=train_cfg)
    return {
        "benign": ExperimentSpec(str(root / "benign"), **base),
        "fga": ExperimentSpec(str(root / "fga"), poison=fga, **base),
        "lsa": ExperimentSpec(str(root / "lsa"), poison=lsa, **base),
        "lsa_low_budget": ExperimentSpec(str(root / "lsa_low_budget"),
                                         poison=dataclasses.replace(lsa, beta=0.01), **base),
    }
