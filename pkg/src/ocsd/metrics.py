"""Despeckling quality metrics.

Full-reference: PSNR and SSIM against a clean image.  No-reference: ENL
(mean squared over variance of a homogeneous region; estimates the
effective number of looks) and the coefficient of variation Cx
(std over mean; lower means stronger suppression).

All metrics take [0, 1] images and denormalize to the 8-bit scale
(peak 255) internally, matching how despeckling results are usually
reported.  ENL and Cx use the unbiased (n-1) variance, which makes
Cx**2 * ENL == 1 an exact identity on any region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_PEAK = 255.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class RegionSpec:
    """Pixel rectangle (x0, y0, width, height) for ENL/Cx measurement."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.width * self.height < 2:
            raise ValueError(f"region must cover at least 2 pixels, got {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"region origin must be nonnegative, got {self}")

    def extract(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape
        if self.x0 + self.width > w or self.y0 + self.height > h:
            raise ValueError(f"region {self} exceeds image bounds {w}x{h}")
        return image[self.y0 : self.y0 + self.height, self.x0 : self.x0 + self.width]


@dataclass(frozen=True)
class RegionReport:
    region: RegionSpec
    enl: float
    cx: float


@dataclass(frozen=True)
class MetricReport:
    psnr: float | None
    ssim: float | None
    regions: tuple[RegionReport, ...] = ()

    def to_dict(self) -> dict:
        """JSON-safe dict; infinities become the string "inf"."""

        def num(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else v

        return {
            "psnr": num(self.psnr),
            "ssim": num(self.ssim),
            "regions": [
                {
                    "x0": r.region.x0,
                    "y0": r.region.y0,
                    "width": r.region.width,
                    "height": r.region.height,
                    "enl": num(r.enl),
                    "cx": num(r.cx),
                }
                for r in self.regions
            ],
        }


def _as_float(image: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D image, got shape {arr.shape}")
    return arr


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """10*log10(255**2 / MSE) on denormalized values; inf for identical
    images."""
    ref = _as_float(reference, "reference")
    tst = _as_float(test, "test")
    if ref.shape != tst.shape:
        raise ValueError(f"psnr: shape mismatch {ref.shape} vs {tst.shape}")
    mse = float(np.mean((ref * _PEAK - tst * _PEAK) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(_PEAK * _PEAK / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    windows = sliding_window_view(image, kernel.shape)
    return np.tensordot(windows, kernel, axes=([2, 3], [0, 1]))


def ssim(reference: np.ndarray, test: np.ndarray) -> float:
    """Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, dynamic range 255."""
    ref = _as_float(reference, "reference") * _PEAK
    tst = _as_float(test, "test") * _PEAK
    if ref.shape != tst.shape:
        raise ValueError(f"ssim: shape mismatch {ref.shape} vs {tst.shape}")
    if min(ref.shape) < _SSIM_WINDOW:
        raise ValueError(
            f"ssim needs images at least {_SSIM_WINDOW}x{_SSIM_WINDOW}, got {ref.shape}"
        )
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _windowed_mean(ref, kernel)
    mu_y = _windowed_mean(tst, kernel)
    xx = _windowed_mean(ref * ref, kernel) - mu_x * mu_x
    yy = _windowed_mean(tst * tst, kernel) - mu_y * mu_y
    xy = _windowed_mean(ref * tst, kernel) - mu_x * mu_y
    c1 = (_SSIM_K1 * _PEAK) ** 2
    c2 = (_SSIM_K2 * _PEAK) ** 2
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    )
    return float(ssim_map.mean())


def enl(image: np.ndarray, region: RegionSpec) -> float:
    """mean**2 / unbiased variance over the region; inf when the region
    is constant (zero variance)."""
    values = region.extract(_as_float(image, "image"))
    var = float(values.var(ddof=1))
    mean = float(values.mean())
    if var == 0.0:
        return math.inf
    return mean * mean / var


def cx(image: np.ndarray, region: RegionSpec) -> float:
    """Unbiased std over mean for the region; rejects zero mean."""
    values = region.extract(_as_float(image, "image"))
    mean = float(values.mean())
    if mean == 0.0:
        raise ValueError(f"cx undefined: region {region} has zero mean")
    return float(values.std(ddof=1)) / mean


def evaluate(
    test: np.ndarray,
    reference: np.ndarray | None = None,
    regions: tuple[RegionSpec, ...] = (),
) -> MetricReport:
    """Bundle all applicable metrics for one image."""
    if reference is None and not regions:
        raise ValueError("nothing to compute: need a reference image and/or regions")
    p = s = None
    if reference is not None:
        p = psnr(reference, test)
        s = ssim(reference, test)
    region_reports = tuple(
        RegionReport(region=r, enl=enl(test, r), cx=cx(test, r)) for r in regions
    )
    return MetricReport(psnr=p, ssim=s, regions=region_reports)
