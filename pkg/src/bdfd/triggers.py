"""Trigger patterns and their alpha blending into images."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import BBox

BLUE = (0.0, 0.0, 1.0)


class TriggerKind(str, Enum):
    PATCH_NOISE_BORDER = "patch_noise_border"
    PATCH_SOLID = "patch_solid"
    SINUSOID = "sinusoid"


@dataclass(frozen=True)
class TriggerSpec:
    kind: TriggerKind = TriggerKind.PATCH_NOISE_BORDER
    alpha: float = 1.0
    size_fraction: float = 0.15
    border_width: int = 1
    frequency: float = 6.0
    color: tuple[float, float, float] = BLUE

    def __post_init__(self):
        object.__setattr__(self, "kind", TriggerKind(self.kind))
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.size_fraction < 1.0:
            raise ValueError(f"size_fraction must be in (0, 1), got {self.size_fraction}")
        if self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.border_width < 0:
            raise ValueError("border_width must be non-negative")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("color channels must be in [0, 1]")


@dataclass(frozen=True)
class TriggerMask:
    """Axis-aligned integer pixel rectangle where the trigger is stamped."""
    rect: BBox

    def __post_init__(self):
        r = self.rect
        if not all(float(v).is_integer() for v in r.as_list()):
            raise ValueError("mask rect must have integer pixel coordinates")

    def slices(self) -> tuple[slice, slice]:
        r = self.rect
        return slice(int(r.y), int(r.y2)), slice(int(r.x), int(r.x2))

    def check_inside(self, height: int, width: int) -> None:
        r = self.rect
        if r.x < 0 or r.y < 0 or r.x2 > width or r.y2 > height:
            raise ValueError(f"mask {r} lies outside a {width}x{height} image")


def make_patch_trigger(spec: TriggerSpec, side: int, rng: np.random.Generator) -> np.ndarray:
    color = np.asarray(spec.color, dtype=np.float64)
    if spec.kind is TriggerKind.PATCH_SOLID:
        if side < 1:
            raise ValueError("patch side must be >= 1")
        return np.broadcast_to(color, (side, side, 3)).copy()
    if spec.kind is not TriggerKind.PATCH_NOISE_BORDER:
        raise ValueError(f"{spec.kind.value} is not a patch trigger")
    b = spec.border_width
    if side < 2 * b + 1:
        raise ValueError(f"patch side {side} too small for border width {b}")
    patch = np.broadcast_to(color, (side, side, 3)).copy()
    patch[b:side - b, b:side - b] = rng.random((side - 2 * b, side - 2 * b, 3))
    return patch


def make_sinusoid_trigger(width: int, height: int, frequency: float) -> np.ndarray:
    if width < 1 or height < 1:
        raise ValueError("sinusoid trigger needs positive dimensions")
    j = np.arange(width, dtype=np.float64)
    row = (1.0 + np.sin(2.0 * np.pi * j * frequency / width)) / 2.0
    return np.broadcast_to(row[None, :, None], (height, width, 3)).copy()


def resize_nearest(img: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    rows = np.minimum((np.arange(height) * h) // height, h - 1)
    cols = np.minimum((np.arange(width) * w) // width, w - 1)
    return img[rows][:, cols]


def blend_trigger(image: np.ndarray, trigger: np.ndarray, mask: TriggerMask,
                  alpha: float) -> np.ndarray:
    """Stamp ``trigger`` into ``mask.rect`` with transparency ``alpha``.

    Pixels outside the mask are untouched; inside it the result is
    ``alpha * trigger + (1 - alpha) * image``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    h, w = image.shape[:2]
    mask.check_inside(h, w)
    rs, cs = mask.slices()
    patch = resize_nearest(trigger, rs.stop - rs.start, cs.stop - cs.start)
    out = image.copy()
    region = out[rs, cs].astype(np.float64)
    out[rs, cs] = np.clip(alpha * patch + (1.0 - alpha) * region, 0.0, 1.0)
    return out
