import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdfd.core import Detection
from bdfd.defend import geometric_consistency
from bdfd.synth import FACE_LAYOUT, SceneParams, face_landmarks, generate_dataset, render_scene
from bdfd.seeding import derive_rng


def test_same_seed_same_bytes():
    a = generate_dataset(5, SceneParams(seed=3))
    b = generate_dataset(5, SceneParams(seed=3))
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert [f.to_row() for f in x.faces] == [f.to_row() for f in y.faces]
    c = generate_dataset(5, SceneParams(seed=4))
    assert a[0].image.tobytes() != c[0].image.tobytes()


def test_prefix_stable():
    # sample i depends only on (seed, i), not on n
    a = generate_dataset(3, SceneParams(seed=8))
    b = generate_dataset(6, SceneParams(seed=8))
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    assert [s.id for s in b] == ["000000", "000001", "000002", "000003", "000004", "000005"]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        generate_dataset(0)


def test_bad_params_rejected():
    with pytest.raises(ValueError):
        SceneParams(faces_per_image=(0, 2))
    with pytest.raises(ValueError):
        SceneParams(face_scale=(0.5, 0.2))
    with pytest.raises(ValueError):
        SceneParams(face_scale=(0.2, 0.9))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([32, 48, 64]), st.integers(1, 4))
def test_scene_invariants(seed, size, most):
    params = SceneParams(image_size=size, faces_per_image=(1, most))
    img, faces = render_scene(params, derive_rng(seed, "synth", 0))
    assert img.shape == (size, size, 3) and img.dtype == np.float32
    assert img.min() >= 0 and img.max() <= 1
    assert np.max(np.abs(img * 255.0 - np.round(img * 255.0))) < 1e-4
    assert 1 <= len(faces) <= most
    for f in faces:
        b = f.bbox
        assert 0 <= b.x and b.x2 <= size and 0 <= b.y and b.y2 <= size
        assert b.w == int(b.w) and b.h == int(b.h)
        assert 1.0 <= b.h / b.w <= 1.2 + 1 / b.w
        pts = f.landmarks.array()
        assert np.all((pts >= [b.x, b.y]) & (pts <= [b.x2, b.y2]))
        le, re, nose, lm, rm = pts
        assert le[0] < re[0] and lm[0] < rm[0]
        assert max(le[1], re[1]) < nose[1] < min(lm[1], rm[1])


def test_layout_matches_annotation():
    _, faces = render_scene(SceneParams(), derive_rng(0, "synth", 0))
    f = faces[0]
    expect = [(f.bbox.x + u * f.bbox.w, f.bbox.y + v * f.bbox.h) for u, v in FACE_LAYOUT]
    assert np.allclose(f.landmarks.array(), expect)
    assert face_landmarks(f.bbox) == f.landmarks


def test_synthetic_faces_are_consistent():
    for s in generate_dataset(50, SceneParams(seed=2)):
        for f in s.faces:
            ok, violated = geometric_consistency(Detection(f.bbox, 1.0, f.landmarks))
            assert ok, violated


def test_eyes_are_dark():
    # the rendered eye sits where the annotation says it does
    img, faces = render_scene(SceneParams(face_scale=(0.45, 0.5)), derive_rng(5, "synth", 0))
    f = faces[0]
    ex, ey = (int(v) for v in f.landmarks.points[0])
    cx, cy = (int(v) for v in f.bbox.center)
    assert img[ey, ex].sum() < img[cy - 2, cx].sum()
