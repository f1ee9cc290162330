"""Grayscale raster I/O, dataset listing/splitting, random crops.

Images travel through the toolkit as 2-D float arrays normalized to
[0, 1] (pixel/255).  Supported containers are 8-bit PNG (grayscale, or
RGB converted by BT.601 luminance) and binary PGM (P5, maxval 255); on
export values are clamped to [0, 1] and quantized round-half-up, so an
8-bit grayscale file survives load -> save unchanged.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import STREAM_SPLIT, Stream, derive_seed

_BT601 = (0.299, 0.587, 0.114)
_EXTENSIONS = {".png", ".pgm"}


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


@dataclass(frozen=True)
class Dataset:
    """Ordered image paths with their split tag and the seed that
    produced the split."""

    paths: tuple[str, ...]
    split: str
    base_seed: int

    def __len__(self) -> int:
        return len(self.paths)


def load_gray(path) -> np.ndarray:
    """Read an image as float32 in [0, 1].

    Accepts 8-bit grayscale PNG/PGM and RGB PNG (converted with BT.601
    weights 0.299/0.587/0.114); anything else raises ImageFormatError.
    """
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _load_pgm(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "L":
                arr = np.asarray(img, dtype=np.float32)
                return arr / np.float32(255.0)
            if mode == "RGB":
                rgb = np.asarray(img, dtype=np.float64) / 255.0
                gray = _BT601[0] * rgb[..., 0] + _BT601[1] * rgb[..., 1] + _BT601[2] * rgb[..., 2]
                return gray.astype(np.float32)
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    raise ImageFormatError(
        f"{path}: unsupported PNG mode {mode!r}; need 8-bit grayscale (L) or RGB"
    )


def _load_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P5"):
        raise ImageFormatError(f"{path}: not a binary PGM (P5) file")
    # Header: P5, width, height, maxval as whitespace/comment-separated tokens.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        m = re.match(rb"\d+", data[pos:])
        if not m:
            raise ImageFormatError(f"{path}: malformed PGM header")
        fields.append(int(m.group()))
        pos += m.end()
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only 8-bit PGM supported, maxval was {maxval}")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < width * height:
        raise ImageFormatError(f"{path}: truncated PGM payload")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return pixels.reshape(height, width).astype(np.float32) / np.float32(255.0)


def save_gray(path, image: np.ndarray) -> None:
    """Write [0, 1] pixels as 8-bit PNG or PGM (chosen by extension),
    clamping and rounding half-up."""
    path = Path(path)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"save_gray expects a 2-D image, got shape {img.shape}")
    levels = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5)
    bytes_img = np.clip(levels, 0, 255).astype(np.uint8)
    ext = path.suffix.lower()
    if ext == ".pgm":
        header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
        path.write_bytes(header + bytes_img.tobytes())
    elif ext == ".png":
        Image.fromarray(bytes_img, mode="L").save(path)
    else:
        raise ValueError(f"save_gray supports .png/.pgm, got {path.suffix!r}")


def list_images(directory) -> list[Path]:
    """Image files directly inside ``directory``, lexicographic by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"{directory} is not a directory")
    return sorted(
        p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in _EXTENSIONS
    )


def random_crop(image: np.ndarray, size: int, seed: int) -> np.ndarray:
    """Crop a size x size window with a uniformly random top-left corner
    from the seeded stream; deterministic per seed."""
    img = np.asarray(image)
    h, w = img.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than crop size {size}")
    stream = Stream(seed)
    y0 = stream.randint_below(h - size + 1)
    x0 = stream.randint_below(w - size + 1)
    return img[y0 : y0 + size, x0 : x0 + size]


def split_dataset(paths, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffled split into disjoint, exhaustive train/val
    sets.  Both sides keep at least one item whenever possible."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    items = sorted(str(p) for p in paths)
    if not items:
        raise ValueError("split_dataset requires a nonempty path list")
    order = list(items)
    Stream(derive_seed(seed, STREAM_SPLIT)).shuffle(order)
    n = len(order)
    n_train = int(train_fraction * n)
    n_train = max(1, min(n_train, n - 1)) if n > 1 else 1
    train = Dataset(paths=tuple(order[:n_train]), split="train", base_seed=seed)
    val = Dataset(paths=tuple(order[n_train:]), split="val", base_seed=seed)
    return train, val
