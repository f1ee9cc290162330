"""Multiplicative L-look Gamma speckle.

An observed intensity image is the pixelwise product Y = X * N of the
clean reflectivity X and a unit-mean speckle field N.  Under the fully
developed speckle hypothesis N is i.i.d. Gamma with shape L (the number
of looks) and scale 1/L, so E[N] = 1 and Var[N] = 1/L; L = 1 gives
Exponential(1) speckle.

Sampling uses the Marsaglia-Tsang squeeze method driven by the SplitMix64
counter streams of :mod:`ocsd.rng`.  The exact per-pixel procedure, fixed
so independent implementations reproduce fields bit-for-bit:

* pixel k (row-major) draws from the substream seeded by
  ``derive_seed(seed, k)``;
* round r (r = 1, 2, ...) of the squeeze consumes stream uniforms
  3r-2, 3r-1, 3r: the first two feed a Box-Muller standard normal x,
  the third is the acceptance variate u (consumed even when the round
  rejects on v <= 0);
* with d = L - 1/3 and c = 1/sqrt(9d), the round computes
  v = (1 + c*x)**3 and accepts when v > 0 and either
  u < 1 - 0.0331*x**4 or log(u) < 0.5*x**2 + d*(1 - v + log(v));
* the accepted draw is d*v/L (shape L, scale 1/L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_seed_array, mix64_array, PHI

_MAX_ROUNDS = 256


@dataclass(frozen=True)
class SpeckleField:
    """Unit-mean multiplicative noise realization."""

    values: np.ndarray  # (h, w) float64, strictly positive
    looks: int
    seed: int


def gamma_pdf(n: float, looks: int) -> float:
    """Density L**L * n**(L-1) * exp(-L*n) / Gamma(L) of unit-mean L-look
    speckle, evaluated in log space for stability."""
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if n <= 0:
        raise ValueError(f"gamma_pdf requires n > 0, got {n}")
    L = float(looks)
    return math.exp(L * math.log(L) + (L - 1.0) * math.log(n) - L * n - math.lgamma(L))


def sample_gamma_speckle(h: int, w: int, looks: int, seed: int) -> SpeckleField:
    """Draw an (h, w) field of i.i.d. Gamma(shape=looks, scale=1/looks)
    values; identical arguments give bit-identical fields."""
    if looks < 1:
        raise ValueError(f"looks must be >= 1, got {looks}")
    if h < 1 or w < 1:
        raise ValueError(f"field dims must be >= 1, got {h}x{w}")
    count = h * w
    streams = derive_seed_array(seed, np.arange(count, dtype=np.uint64))

    d = looks - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(count, dtype=np.float64)
    pending = np.arange(count)
    pending_streams = streams
    for round_idx in range(1, _MAX_ROUNDS + 1):
        base = np.uint64(3 * (round_idx - 1))
        u1 = _stream_uniform(pending_streams, base + np.uint64(1))
        u2 = _stream_uniform(pending_streams, base + np.uint64(2))
        u = _stream_uniform(pending_streams, base + np.uint64(3))
        x = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        v = (1.0 + c * x) ** 3
        ok = v > 0.0
        x4 = x**4
        squeeze = u < 1.0 - 0.0331 * x4
        with np.errstate(divide="ignore", invalid="ignore"):
            slow = np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(np.where(ok, v, 1.0)))
        accept = ok & (squeeze | slow)
        out[pending[accept]] = d * v[accept]
        if accept.all():
            break
        keep = ~accept
        pending = pending[keep]
        pending_streams = pending_streams[keep]
    else:
        raise RuntimeError("gamma sampler failed to accept within the round limit")

    values = (out / looks).reshape(h, w)
    return SpeckleField(values=values, looks=looks, seed=seed)


def _stream_uniform(streams: np.ndarray, j: np.uint64) -> np.ndarray:
    """Uniform in (0, 1] at position j of each stream (counter-based)."""
    with np.errstate(over="ignore"):
        bits = mix64_array(streams + j * np.uint64(PHI))
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def apply_speckle(clean: np.ndarray, looks: int, seed: int, clip: bool = True) -> np.ndarray:
    """Y = X * N pixelwise.  ``clip=True`` (the storage contract) clamps
    the product to [0, 1]; pass clip=False to keep the raw multiplicative
    model, e.g. inside the training pipeline."""
    img = np.asarray(clean, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"apply_speckle expects a 2-D image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("apply_speckle expects pixels in [0, 1]")
    field = sample_gamma_speckle(img.shape[0], img.shape[1], looks, seed)
    noisy = img * field.values
    if clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    return noisy
