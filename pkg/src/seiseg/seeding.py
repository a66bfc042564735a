"""Deterministic seed derivation.

All randomness in the package flows from explicit integer seeds through
:func:`numpy.random.default_rng`. Derived seeds are produced by a fixed
64-bit mixing function so that independent stages (horizon geometry,
noise, shuffling, sampling, initialization) draw from decorrelated
streams while remaining reproducible from one master seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15

# Stream tags keep unrelated consumers of the same master seed apart.
STREAM_HORIZONS = 0x01
STREAM_SEISMIC = 0x02
STREAM_SHUFFLE = 0x03
STREAM_INIT = 0x04
STREAM_SCATTER = 0x05
STREAM_COLUMNS = 0x06
STREAM_TRAIN = 0x07
STREAM_ARCH = 0x08


def _splitmix64(x: int) -> int:
    x = (x + GOLDEN64) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def mix64(*parts: int) -> int:
    """Fold integers into one well-scrambled 64-bit seed."""
    acc = 0
    for p in parts:
        acc = _splitmix64(acc ^ (int(p) & _MASK64))
    return acc


def image_seed(master_seed: int, index: int) -> int:
    """Per-image seed: master XOR (index * golden ratio constant) mod 2^64."""
    return (int(master_seed) ^ ((index * GOLDEN64) & _MASK64)) & _MASK64


def rng_for(*parts: int) -> np.random.Generator:
    """A fresh PCG64 generator keyed by the mixed parts."""
    return np.random.default_rng(mix64(*parts))
