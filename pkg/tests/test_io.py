import json

import numpy as np
import pytest

from bdfd.detector import init_model
from bdfd.io import (DataError, read_audit, read_checkpoint, read_manifest, write_checkpoint,
                     write_dataset, write_manifest)
from bdfd.poison import Attack, PoisonConfig, poison_dataset
from bdfd.synth import SceneParams, generate_dataset
from bdfd.triggers import TriggerKind, TriggerSpec


@pytest.fixture(scope="module")
def data():
    return generate_dataset(6, SceneParams(seed=5))


def rows(s):
    return [f.to_row() for f in s.faces]


def test_dataset_round_trip(tmp_path, data):
    write_dataset(data, tmp_path)
    back = read_manifest(tmp_path)
    assert [s.id for s in back] == [s.id for s in data]
    for a, b in zip(back, data):
        assert a.image.tobytes() == b.image.tobytes()   # quantized images survive PNG exactly
        assert rows(a) == rows(b)


def test_rewrite_is_byte_identical(tmp_path, data):
    write_dataset(data, tmp_path / "a")
    write_dataset(read_manifest(tmp_path / "a"), tmp_path / "b")
    for rel in ["manifest.jsonl"] + [f"images/{s.id}.png" for s in data]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_poison_audit_round_trip(tmp_path, data):
    cfg = PoisonConfig(Attack.LSA_ROTATE, 0.5, TriggerSpec(TriggerKind.PATCH_SOLID, 1.0, 0.2))
    poisoned, audit = poison_dataset(data, cfg)
    write_dataset(poisoned, tmp_path, audit)
    back = read_audit(tmp_path)
    assert back.poisoned_ids == audit.poisoned_ids
    for r, q in zip(back.records, audit.records):
        assert r.masks == q.masks and r.alpha == q.alpha and r.attack_tag == q.attack_tag
        assert [f.to_row() for f in r.original_faces] == [f.to_row() for f in q.original_faces]
        assert all(a.tobytes() == b.tobytes() for a, b in zip(r.original_patches, q.original_patches))
    recs = [json.loads(l) for l in (tmp_path / "manifest.jsonl").read_text().splitlines()]
    tagged = [r for r in recs if "poison" in r]
    assert len(tagged) == 3
    assert all(f["attack_tag"] == "lsa_rotated" for r in tagged for f in r["faces"])
    assert all("attack_tag" not in f for r in recs if "poison" not in r for f in r["faces"])


def write_lines(path, recs):
    path.write_text("\n".join(json.dumps(r) for r in recs) + "\n")


GOOD = {"id": "a", "image": "images/a.png",
        "faces": [{"bbox": [1, 2, 10, 12], "confidence": 1.0, "landmarks": list(range(10))}]}


def test_bad_landmark_arity_names_line(tmp_path):
    bad = json.loads(json.dumps(GOOD))
    bad["id"] = "b"
    bad["faces"][0]["landmarks"] = list(range(9))
    write_lines(tmp_path / "m.jsonl", [GOOD, bad])
    with pytest.raises(DataError, match="line 2"):
        read_manifest(tmp_path / "m.jsonl", load_images=False)


def test_zero_faces_rejected(tmp_path):
    write_lines(tmp_path / "m.jsonl", [dict(GOOD, faces=[])])
    with pytest.raises(DataError, match="line 1"):
        read_manifest(tmp_path / "m.jsonl", load_images=False)


def test_malformed_json_and_missing_image(tmp_path):
    (tmp_path / "m.jsonl").write_text("{not json\n")
    with pytest.raises(DataError, match="line 1"):
        read_manifest(tmp_path / "m.jsonl", load_images=False)
    write_lines(tmp_path / "m.jsonl", [GOOD])
    with pytest.raises(DataError, match="not found"):
        read_manifest(tmp_path / "m.jsonl")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "missing.jsonl")


def test_unknown_keys_preserved(tmp_path):
    write_lines(tmp_path / "m.jsonl", [dict(GOOD, source="camera-3", tags=[1, 2])])
    samples = read_manifest(tmp_path / "m.jsonl", load_images=False)
    write_manifest(samples, tmp_path / "n.jsonl")
    rec = json.loads((tmp_path / "n.jsonl").read_text())
    assert rec["source"] == "camera-3" and rec["tags"] == [1, 2]
    assert rec["faces"] == GOOD["faces"]


def test_checkpoint_round_trip(tmp_path, rng):
    model = init_model(rng)
    write_checkpoint(model, tmp_path / "m.bdfd")
    back = read_checkpoint(tmp_path / "m.bdfd")
    assert list(back.params) == list(model.params)
    for k in model.params:
        assert back.params[k].tobytes() == model.params[k].tobytes()
    write_checkpoint(back, tmp_path / "n.bdfd")
    assert (tmp_path / "m.bdfd").read_bytes() == (tmp_path / "n.bdfd").read_bytes()


def test_checkpoint_corruption(tmp_path, rng):
    write_checkpoint(init_model(rng), tmp_path / "m.bdfd")
    blob = (tmp_path / "m.bdfd").read_bytes()
    (tmp_path / "t.bdfd").write_bytes(blob[:-7])
    with pytest.raises(DataError, match="truncated"):
        read_checkpoint(tmp_path / "t.bdfd")
    (tmp_path / "x.bdfd").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError, match="not a BDFD"):
        read_checkpoint(tmp_path / "x.bdfd")
    (tmp_path / "e.bdfd").write_bytes(blob + b"\0")
    with pytest.raises(DataError, match="trailing"):
        read_checkpoint(tmp_path / "e.bdfd")


def test_checkpoint_architecture_mismatch(tmp_path, rng):
    write_checkpoint(init_model(rng, widths=(8, 8, 8)), tmp_path / "m.bdfd")
    with pytest.raises(DataError):
        read_checkpoint(tmp_path / "m.bdfd")
    assert read_checkpoint(tmp_path / "m.bdfd", widths=(8, 8, 8)).widths == (8, 8, 8)


def test_non_finite_checkpoint_rejected(tmp_path, rng):
    model = init_model(rng)
    write_checkpoint(model, tmp_path / "m.bdfd")
    blob = bytearray((tmp_path / "m.bdfd").read_bytes())
    blob[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    (tmp_path / "n.bdfd").write_bytes(bytes(blob))
    with pytest.raises(DataError, match="non-finite"):
        read_checkpoint(tmp_path / "n.bdfd")
