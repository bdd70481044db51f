import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdfd.core import AttackTag, BBox, Sample, quantize, rotate_landmarks
from bdfd.metrics import landmark_shift
from bdfd.poison import (Attack, PoisonConfig, fake_landmarks, poison_count, poison_dataset,
                         poison_fga, poison_lsa, unpoison)
from bdfd.synth import SceneParams, generate_dataset
from bdfd.triggers import TriggerKind, TriggerSpec
from conftest import make_face

FGA = PoisonConfig(Attack.FGA, 0.1, TriggerSpec(TriggerKind.PATCH_NOISE_BORDER, 1.0, 0.15, 1))
LSA = PoisonConfig(Attack.LSA_ROTATE, 0.1, TriggerSpec(TriggerKind.PATCH_SOLID, 1.0, 0.2))


@pytest.fixture(scope="module")
def data():
    return generate_dataset(40, SceneParams(seed=11))


def three_face_sample():
    img = quantize(np.full((64, 64, 3), 0.4))
    faces = [make_face(2, 2, 18, 20), make_face(30, 4, 20, 22), make_face(10, 36, 22, 24)]
    return Sample("s", img, faces)


def test_fga_appends_one_row_and_keeps_originals(rng):
    s = Sample("a", quantize(np.full((64, 64, 3), 0.3)),
               [make_face(2, 2, 20, 22), make_face(36, 30, 20, 24)])
    out, rec = poison_fga(s, FGA, rng)
    assert len(out.faces) == 3
    assert [f.to_row() for f in out.faces[:2]] == [f.to_row() for f in s.faces]
    fake = out.faces[2]
    assert fake.attack_tag is AttackTag.FGA_FAKE and fake.poisoned
    assert fake.bbox == rec.masks[0]
    assert fake.bbox.w == fake.bbox.h == round(0.15 * 64)
    m = rec.masks[0]
    outside = np.ones((64, 64), dtype=bool)
    outside[int(m.y):int(m.y2), int(m.x):int(m.x2)] = False
    assert np.array_equal(out.image[outside], s.image[outside])
    assert np.all(out.image[int(m.y), int(m.x):int(m.x2)] == [0, 0, 1])  # blue border row


def test_fake_landmark_layout():
    lm = fake_landmarks(BBox(10, 10, 40, 40))
    assert lm.points == ((20, 20), (40, 20), (30, 30), (20, 40), (40, 40))


def test_fga_sinusoid_size_range(rng):
    cfg = dataclasses.replace(FGA, trigger=TriggerSpec(TriggerKind.SINUSOID, 0.3),
                              fga_size_range=(10, 20))
    s = Sample("a", quantize(np.full((64, 64, 3), 0.3)), [make_face(2, 2, 20, 22)])
    sides = {poison_fga(s, cfg, rng)[1].masks[0].w for _ in range(60)}
    assert sides <= set(range(10, 21)) and len(sides) > 3


def test_fga_trigger_too_large(rng):
    cfg = dataclasses.replace(FGA, trigger=TriggerSpec(TriggerKind.SINUSOID), fga_size_range=(70, 80))
    s = Sample("a", np.zeros((64, 64, 3), dtype=np.float32), [make_face(2, 2, 20, 22)])
    with pytest.raises(ValueError):
        poison_fga(s, cfg, rng)


def test_lsa_triggers_every_face(rng):
    s = three_face_sample()
    out, rec = poison_lsa(s, LSA, rng)
    assert len(rec.masks) == 3
    for face, mask in zip(s.faces, rec.masks):
        b = face.bbox
        assert b.x <= mask.x and mask.x2 <= b.x2 and b.y <= mask.y and mask.y2 <= b.y2
        region = out.image[int(mask.y):int(mask.y2), int(mask.x):int(mask.x2)]
        assert np.all(region == [0, 0, 1])
    assert all(f.attack_tag is AttackTag.LSA_ROTATED for f in out.faces)


def test_lsa_zero_rotation_keeps_annotations(rng):
    s = three_face_sample()
    out, _ = poison_lsa(s, dataclasses.replace(LSA, phi=0.0), rng)
    for a, b in zip(out.faces, s.faces):
        assert a.landmarks.array() == pytest.approx(b.landmarks.array())
        assert a.bbox == b.bbox
    assert not np.array_equal(out.image, s.image)


def test_lsa_rotation_about_box_center(rng):
    s = three_face_sample()
    out, _ = poison_lsa(s, LSA, rng)
    for a, b in zip(out.faces, s.faces):
        expect = rotate_landmarks(b.landmarks, 30.0, b.bbox.center)
        assert a.landmarks.array() == pytest.approx(expect.array(), abs=1e-12)
        assert a.bbox == b.bbox and a.confidence == b.confidence
        assert landmark_shift(a.landmarks, b.landmarks) > 0


def test_lsa_swap(rng):
    s = three_face_sample()
    out, _ = poison_lsa(s, dataclasses.replace(LSA, attack=Attack.LSA_SWAP), rng)
    for a, b in zip(out.faces, s.faces):
        assert a.landmarks.points[0] == b.landmarks.points[3]
        assert a.landmarks.points[3] == b.landmarks.points[0]
        assert a.attack_tag is AttackTag.LSA_SWAPPED


def test_lsa_sinusoid_crop(rng):
    cfg = dataclasses.replace(LSA, trigger=TriggerSpec(TriggerKind.SINUSOID, 0.3))
    s = three_face_sample()
    out, rec = poison_lsa(s, cfg, rng)
    for face, m in zip(s.faces, rec.masks):
        assert m.w == m.h == math.ceil(max(face.bbox.w, face.bbox.h))
    touched = np.zeros((64, 64), dtype=bool)
    for m in rec.masks:
        touched[int(m.y):int(m.y2), int(m.x):int(m.x2)] = True
    assert np.array_equal(out.image[~touched], s.image[~touched])
    assert not np.array_equal(out.image[touched], s.image[touched])


def test_lsa_without_faces_is_skipped(rng):
    s = Sample("e", np.zeros((64, 64, 3), dtype=np.float32), [])
    out, rec = poison_lsa(s, LSA, rng)
    assert rec is None and out is s


def test_dataset_poison_count():
    data = [Sample(f"{i}", np.zeros((16, 16, 3), dtype=np.float32), [make_face(1, 1, 8, 9)])
            for i in range(100)]
    cfg = dataclasses.replace(LSA, beta=0.05)
    out, audit = poison_dataset(data, cfg)
    assert len(audit.records) == 5
    assert sum(o is not d for o, d in zip(out, data)) == 5


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(1, 60))
def test_poison_count_is_floor(beta, n):
    data = [Sample(f"{i}", np.full((16, 16, 3), 0.5, dtype=np.float32), [make_face(1, 1, 8, 9)])
            for i in range(n)]
    _, audit = poison_dataset(data, dataclasses.replace(LSA, beta=beta))
    ids = audit.poisoned_ids
    assert len(ids) == poison_count(beta, n) == math.floor(beta * n + 1e-9)
    assert len(set(ids)) == len(ids)
    assert set(ids) <= {s.id for s in data}


def test_beta_zero_is_identity(data):
    out, audit = poison_dataset(data, dataclasses.replace(FGA, beta=0.0))
    assert audit.records == []
    assert all(a is b for a, b in zip(out, data))


def test_same_seed_same_poison(data):
    a, aa = poison_dataset(data, FGA)
    b, ab = poison_dataset(data, FGA)
    assert aa.poisoned_ids == ab.poisoned_ids
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    c, ac = poison_dataset(data, dataclasses.replace(FGA, seed=99))
    assert ac.poisoned_ids != aa.poisoned_ids


@pytest.mark.parametrize("cfg", [FGA, LSA, dataclasses.replace(
    LSA, trigger=TriggerSpec(TriggerKind.SINUSOID, 0.3))])
def test_unpoison_restores_bytes(data, cfg):
    out, audit = poison_dataset(data, dataclasses.replace(cfg, beta=0.5))
    restored = unpoison(out, audit)
    for r, d in zip(restored, data):
        assert r.image.tobytes() == d.image.tobytes()
        assert [f.to_row() for f in r.faces] == [f.to_row() for f in d.faces]


def test_config_validation():
    with pytest.raises(ValueError):
        PoisonConfig(beta=1.5)
    with pytest.raises(ValueError):
        PoisonConfig(swap_pair=(1, 1))
    with pytest.raises(ValueError):
        PoisonConfig(phi=float("inf"))
