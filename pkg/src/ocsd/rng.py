"""Deterministic 64-bit pseudo-random streams.

All randomness in this package (speckle fields, weight initialization,
crops, dataset shuffles) flows through the SplitMix64 counter generator
defined here, so every result is reproducible from a single integer seed,
bit-for-bit, across runs and platforms.

The generator is fully specified by two rules:

1. ``mix64(z)`` is the SplitMix64 finalizer::

       z += 0x9E3779B97F4A7C15              (all arithmetic mod 2**64)
       z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
       z = (z ^ (z >> 27)) * 0x94D049BB133111EB
       z = z ^ (z >> 31)

2. The stream with seed ``s`` has outputs ``u64(s, j) = mix64(s + j*PHI)``
   for ``j = 1, 2, 3, ...`` where ``PHI = 0x9E3779B97F4A7C15``.

Derived quantities:

* uniform(s, j)  = ((u64(s, j) >> 11) + 1) * 2**-53, a double in (0, 1].
* A standard normal consumes two consecutive uniforms via Box-Muller:
  ``z = sqrt(-2 ln u1) * cos(2 pi u2)``.
* Substreams are derived with :func:`derive_seed`, which folds integer
  fields into the seed through ``mix64`` so independent consumers
  (per-image speckle, per-epoch crops, ...) never share a stream.

Because the stream is counter-based (output j depends only on the seed
and j), block generation vectorizes with numpy and scalar/vector code
paths produce identical values.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
PHI = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

# Stream tags used by the rest of the package to derive non-overlapping
# substreams from one base seed (see derive_seed).
STREAM_INIT = 1
STREAM_CROP = 2
STREAM_SPECKLE = 3
STREAM_VAL = 4
STREAM_SPLIT = 5
STREAM_SIMULATE = 6


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int (mod 2**64)."""
    z = (z + PHI) & _MASK
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    """Vectorized :func:`mix64` on a uint64 array."""
    with np.errstate(over="ignore"):
        z = z + np.uint64(PHI)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
        return z ^ (z >> np.uint64(31))


def derive_seed(base: int, *fields: int) -> int:
    """Fold integer fields into ``base`` to name an independent substream.

    ``derive_seed(s, a, b)`` == mixing a, then b, into mix64(s).  Fields
    are position-sensitive, so (1, 2) and (2, 1) derive different seeds.
    """
    s = mix64(base & _MASK)
    for k, f in enumerate(fields, start=1):
        s = mix64(s ^ mix64((f + k * PHI) & _MASK))
    return s


def derive_seed_array(base: int, fields: np.ndarray) -> np.ndarray:
    """Vectorized single-field :func:`derive_seed` (one field per entry)."""
    s = np.uint64(mix64(base & _MASK))
    f = fields.astype(np.uint64)
    with np.errstate(over="ignore"):
        inner = mix64_array(f + np.uint64(PHI))
    return mix64_array(s ^ inner)


def raw_block(seed: int, start: int, count: int) -> np.ndarray:
    """uint64 outputs j = start .. start+count-1 of the stream, vectorized."""
    j = np.arange(start, start + count, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_array(np.uint64(seed & _MASK) + j * np.uint64(PHI))


def uniform_block(seed: int, start: int, count: int) -> np.ndarray:
    """Doubles in (0, 1] for stream positions start .. start+count-1."""
    bits = raw_block(seed, start, count)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def normal_block(seed: int, start: int, count: int) -> np.ndarray:
    """``count`` standard normals; pair 2k-1/2k of the uniform stream feeds
    normal k (Box-Muller), consuming exactly two uniforms per draw."""
    u = uniform_block(seed, start, 2 * count)
    u1 = u[0::2]
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


class Stream:
    """Sequential view of a counter stream, for scalar consumers."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        self._j = 0

    def next_u64(self) -> int:
        self._j += 1
        return mix64((self.seed + self._j * PHI) & _MASK)

    def uniform(self) -> float:
        """Double in (0, 1]."""
        return ((self.next_u64() >> 11) + 1) * 2.0**-53

    def randint_below(self, n: int) -> int:
        """Integer in [0, n) by scaling one uniform; n must be positive."""
        if n <= 0:
            raise ValueError(f"randint_below requires n >= 1, got {n}")
        k = int(self.uniform() * n)
        return min(k, n - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint_below(i + 1)
            items[i], items[j] = items[j], items[i]
