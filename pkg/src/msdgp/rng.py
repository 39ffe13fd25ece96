"""Seeded random streams.

All randomness goes through numpy's Philox counter-based bit generator, keyed
by ``SeedSequence([seed, crc32(name), *extra])``.  Philox output and the
``SeedSequence`` mixing are specified independently of platform, so a given
(seed, stream name) pair reproduces the same draws everywhere.  Streams are
split by name rather than by consuming one shared generator, so adding draws
to one stage never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

from .autodiff import Tensor


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for the named stream."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8")), *(int(e) for e in extra)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators from ``rng``'s seed sequence."""
    seq = rng.bit_generator.seed_seq
    return [np.random.Generator(np.random.Philox(s)) for s in seq.spawn(n)]


def gaussian_sample(shape, rng: np.random.Generator) -> Tensor:
    """I.i.d. standard normal draws as a constant tensor."""
    return Tensor._wrap(rng.standard_normal(tuple(shape)))
