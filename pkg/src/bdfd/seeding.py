"""Seed derivation: every stage draws from (global seed, stage name, index...)."""
from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "BDFD_SEED"
DEFAULT_SEED = 0


def _key(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k) & 0xFFFFFFFF


def derive_rng(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(k) for k in keys)])
    return np.random.default_rng(ss)


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else DEFAULT_SEED
