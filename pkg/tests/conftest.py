"""Shared test fixtures and synthetic image helpers."""

import numpy as np
import pytest


def make_image(h: int, w: int, seed: int) -> np.ndarray:
    """Piecewise synthetic grayscale image in [0, 1]: a smooth ramp plus
    a few random rectangles and a disk, so there are both homogeneous
    areas and edges to despeckle around."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    img = 0.25 + 0.35 * (xx / max(w - 1, 1)) + 0.15 * (yy / max(h - 1, 1))
    for _ in range(4):
        y0, x0 = rng.integers(0, h - 2), rng.integers(0, w - 2)
        hh = int(rng.integers(h // 8 + 1, h // 2 + 1))
        ww = int(rng.integers(w // 8 + 1, w // 2 + 1))
        img[y0 : y0 + hh, x0 : x0 + ww] = rng.uniform(0.1, 0.9)
    cy, cx_ = rng.integers(h // 4, 3 * h // 4), rng.integers(w // 4, 3 * w // 4)
    r = max(min(h, w) // 6, 2)
    disk = (yy - cy) ** 2 + (xx - cx_) ** 2 <= r * r
    img[disk] = rng.uniform(0.2, 0.8)
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def image_64():
    return make_image(64, 64, seed=11)
