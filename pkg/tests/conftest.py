import os

import numpy as np
import pytest
from hypothesis import settings

from bdfd.core import BBox, Detection, FaceAnnotation, Landmarks5

settings.register_profile("ci", max_examples=200, deadline=None)
settings.register_profile("fast", max_examples=20, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_face(x, y, w, h, layout=None):
    from bdfd.synth import FACE_LAYOUT
    layout = layout or FACE_LAYOUT
    box = BBox(x, y, w, h)
    return FaceAnnotation(box, Landmarks5(tuple((x + u * w, y + v * h) for u, v in layout)))


def det(x, y, w, h, score=0.9, landmarks=None):
    box = BBox(x, y, w, h)
    if landmarks is None:
        landmarks = make_face(x, y, w, h).landmarks
    return Detection(box, score, landmarks)
