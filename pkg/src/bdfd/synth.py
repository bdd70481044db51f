"""Procedural face-like scenes with exact box and landmark ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BBox, FaceAnnotation, Landmarks5, Sample, quantize
from .seeding import derive_rng

# box-normalized feature centres drawn on every face
FACE_LAYOUT = ((0.30, 0.35), (0.70, 0.35), (0.50, 0.55), (0.32, 0.75), (0.68, 0.75))
MAX_PLACEMENT_ATTEMPTS = 100


@dataclass(frozen=True)
class SceneParams:
    image_size: int = 64
    faces_per_image: tuple[int, int] = (1, 3)
    face_scale: tuple[float, float] = (0.2, 0.5)
    clutter_count: tuple[int, int] = (0, 5)
    seed: int = 0

    def __post_init__(self):
        for name in ("faces_per_image", "face_scale", "clutter_count"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: {lo} > {hi}")
        if self.faces_per_image[0] < 1:
            raise ValueError("every scene needs at least one face")
        if not (0 < self.face_scale[0] and self.face_scale[1] * 1.2 <= 1.0):
            raise ValueError("face_scale must keep boxes inside the image")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")


def _grid(size: int):
    c = np.arange(size, dtype=np.float64) + 0.5
    return np.meshgrid(c, c)  # xx, yy at pixel centres


def _paint(img: np.ndarray, cover: np.ndarray, color) -> None:
    cover = cover[..., None]
    img *= 1.0 - cover
    img += cover * np.asarray(color, dtype=np.float64)


def _ellipse(xx, yy, cx, cy, rx, ry) -> np.ndarray:
    # anti-aliased coverage, about one pixel of soft edge
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return np.clip((1.0 - d) * min(rx, ry) + 0.5, 0.0, 1.0)


def _disc(xx, yy, cx, cy, r) -> np.ndarray:
    return np.clip(r - np.hypot(xx - cx, yy - cy) + 0.5, 0.0, 1.0)


def _segment(xx, yy, p, q, half_width) -> np.ndarray:
    p, q = np.asarray(p), np.asarray(q)
    v = q - p
    t = np.clip(((xx - p[0]) * v[0] + (yy - p[1]) * v[1]) / (v @ v), 0.0, 1.0)
    d = np.hypot(xx - (p[0] + t * v[0]), yy - (p[1] + t * v[1]))
    return np.clip(half_width - d + 0.5, 0.0, 1.0)


def _skin(rng) -> np.ndarray:
    base = np.array([0.85, 0.65, 0.50]) * rng.uniform(0.55, 1.1)
    return np.clip(base + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)


def _clutter_color(rng) -> np.ndarray:
    # stay away from skin tones and from the saturated blue used by triggers
    while True:
        c = rng.uniform(0.0, 1.0, 3)
        skinlike = c[0] > c[1] > c[2] and c[0] - c[2] > 0.15
        bluish = c[2] > 0.6 and c[2] - max(c[0], c[1]) > 0.4
        if not skinlike and not bluish:
            return c


def _place_faces(params: SceneParams, rng) -> list[BBox]:
    size = params.image_size
    want = int(rng.integers(params.faces_per_image[0], params.faces_per_image[1] + 1))
    boxes: list[BBox] = []
    attempts = 0
    while len(boxes) < want and attempts < MAX_PLACEMENT_ATTEMPTS:
        attempts += 1
        w = int(round(rng.uniform(*params.face_scale) * size))
        h = int(round(w * rng.uniform(1.0, 1.2)))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        box = BBox(x, y, w, h)
        # one pixel of air between faces
        if all(box.x2 + 1 <= b.x or b.x2 + 1 <= box.x or box.y2 + 1 <= b.y or b.y2 + 1 <= box.y
               for b in boxes):
            boxes.append(box)
    return boxes


def face_landmarks(box: BBox) -> Landmarks5:
    return Landmarks5(tuple((box.x + u * box.w, box.y + v * box.h) for u, v in FACE_LAYOUT))


def render_scene(params: SceneParams, rng: np.random.Generator):
    """Render one scene; returns (image, faces)."""
    size = params.image_size
    xx, yy = _grid(size)
    img = np.empty((size, size, 3))
    img[:] = rng.uniform(0.1, 0.9, 3) * 0.6
    img += rng.uniform(-0.04, 0.04, (size, size, 3))
    for _ in range(int(rng.integers(params.clutter_count[0], params.clutter_count[1] + 1))):
        color = _clutter_color(rng)
        cx, cy = rng.uniform(0, size, 2)
        rx, ry = rng.uniform(2, size / 6, 2)
        if rng.random() < 0.5:
            cover = ((np.abs(xx - cx) <= rx) & (np.abs(yy - cy) <= ry)).astype(np.float64)
        else:
            cover = _ellipse(xx, yy, cx, cy, rx, ry)
        _paint(img, cover, color)

    faces = []
    boxes = _place_faces(params, rng)
    while not boxes:  # unreachable with sane params; kept so no empty scene escapes
        boxes = _place_faces(params, rng)
    for box in boxes:
        skin = _skin(rng)
        cx, cy = box.center
        _paint(img, _ellipse(xx, yy, cx, cy, box.w / 2, box.h / 2), skin)
        lm = face_landmarks(box)
        pts = lm.array()
        dark = skin * rng.uniform(0.1, 0.3)
        r_eye = max(0.9, 0.07 * box.w)
        for k in (0, 1):
            _paint(img, _disc(xx, yy, *pts[k], r_eye), dark)
        _paint(img, _disc(xx, yy, *pts[2], max(0.8, 0.05 * box.w)), skin * 0.55)
        _paint(img, _segment(xx, yy, pts[3], pts[4], max(0.6, 0.035 * box.h)), dark)
        faces.append(FaceAnnotation(box, lm))
    return quantize(np.clip(img, 0.0, 1.0)), faces


def generate_dataset(n: int, params: SceneParams = SceneParams()) -> list[Sample]:
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    out = []
    for i in range(n):
        img, faces = render_scene(params, derive_rng(params.seed, "synth", i))
        out.append(Sample(f"{i:06d}", img, faces))
    return out
