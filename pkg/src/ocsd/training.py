"""Composite loss, ADAM optimization, and the training loop.

The loss is mean squared error plus a weighted anisotropic total
variation term, both mean-reduced over all tensor elements so the weight
and learning rate are resolution-independent.

Each epoch walks the training images in order, takes one random crop per
image, synthesizes fresh multiplicative speckle, and steps ADAM on
mini-batches of (noisy, clean) pairs.  Every random draw comes from a
seed derived from (base seed, stream tag, epoch, image index), so a run
is fully determined by its config and resuming from an epoch boundary
replays the identical sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .network import NetworkConfig, despeckle_image, forward, init_params
from .rng import STREAM_CROP, STREAM_SPECKLE, STREAM_VAL, derive_seed
from .speckle import sample_gamma_speckle
from .imaging import random_crop
from .metrics import psnr


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-4
    epochs: int = 400
    tv_weight: float = 5e-5
    crop_size: int = 128
    batch_size: int = 8
    looks: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.tv_weight < 0:
            raise ValueError(f"tv_weight must be >= 0, got {self.tv_weight}")
        if self.crop_size % 32:
            raise ValueError(f"crop_size must be divisible by 32, got {self.crop_size}")
        if self.batch_size < 1 or self.epochs < 0 or self.looks < 1:
            raise ValueError("batch_size >= 1, epochs >= 0 and looks >= 1 required")


# ---------------------------------------------------------------------------
# losses (registered as tape ops so they differentiate like any primitive)


def l2_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences over all elements."""
    if pred.shape != target.shape:
        raise ValueError(f"l2_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = Tensor((diff * diff).sum(dtype=pred.dtype).reshape(1, 1, 1, 1) / pred.dtype.type(n))

    def backward_fn(g):
        gd = (2.0 / n) * g.reshape(()) * diff
        return gd, -gd

    return ad._maybe_record(out, (pred, target), backward_fn)


def tv_loss(pred: Tensor) -> Tensor:
    """Anisotropic total variation (sum of absolute vertical and
    horizontal neighbor differences), divided by the element count.
    Subgradient 0 wherever a difference is exactly 0."""
    n, c, h, w = pred.shape
    if h < 2 or w < 2:
        raise ValueError(f"tv_loss requires spatial dims >= 2, got {h}x{w}")
    d = pred.data
    dv = d[:, :, 1:, :] - d[:, :, :-1, :]
    dh = d[:, :, :, 1:] - d[:, :, :, :-1]
    count = pred.size
    raw = np.abs(dv).sum(dtype=pred.dtype) + np.abs(dh).sum(dtype=pred.dtype)
    out = Tensor((raw / pred.dtype.type(count)).reshape(1, 1, 1, 1))

    def backward_fn(g):
        s = g.reshape(()) / count
        sv = np.sign(dv) * s
        sh = np.sign(dh) * s
        gx = np.zeros_like(d)
        gx[:, :, 1:, :] += sv
        gx[:, :, :-1, :] -= sv
        gx[:, :, :, 1:] += sh
        gx[:, :, :, :-1] -= sh
        return (gx,)

    return ad._maybe_record(out, (pred,), backward_fn)


def total_loss(pred: Tensor, target: Tensor, tv_weight: float) -> Tensor:
    """l2_loss + tv_weight * tv_loss."""
    if tv_weight < 0:
        raise ValueError(f"tv_weight must be >= 0, got {tv_weight}")
    return ad.add(l2_loss(pred, target), ad.scale(tv_loss(pred), tv_weight))


# ---------------------------------------------------------------------------
# ADAM


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def initial(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected ADAM update, in place.  Rejects non-finite
    gradients before touching any parameter."""
    bad = [name for name, g in grads.items() if not np.isfinite(g).all()]
    if bad:
        raise ValueError(f"non-finite gradient for parameters: {', '.join(sorted(bad))}")
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)).astype(
            p.dtype, copy=False
        )


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_psnr: float  # nan when no validation images


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    adam_state: AdamState
    history: list[EpochStats] = field(default_factory=list)


def _prepare_patch(image: np.ndarray, crop_size: int) -> np.ndarray:
    """Reflect-pad so both dims reach crop_size, keeping pixels in place."""
    h, w = image.shape
    if h >= crop_size and w >= crop_size:
        return image
    return np.pad(
        image, ((0, max(0, crop_size - h)), (0, max(0, crop_size - w))), mode="reflect"
    )


def train(
    config: TrainConfig,
    net_config: NetworkConfig,
    images: list[np.ndarray],
    val_images: list[np.ndarray] | None = None,
    params: dict[str, Tensor] | None = None,
    adam_state: AdamState | None = None,
    start_epoch: int = 0,
    log=None,
) -> TrainResult:
    """Train for config.epochs total epochs (resuming at start_epoch when
    params/adam_state come from a checkpoint).  Returns trained
    parameters, optimizer state, and the per-epoch loss/PSNR history."""
    if not images:
        raise ValueError("training requires a nonempty dataset")
    val_images = list(val_images or [])
    if params is None:
        params = init_params(replace(net_config, seed=config.seed))
    if adam_state is None:
        adam_state = AdamState.initial(params)
    dtype = next(iter(params.values())).dtype

    history: list[EpochStats] = []
    for epoch in range(start_epoch, config.epochs):
        pairs = []
        for idx, image in enumerate(images):
            patch_src = _prepare_patch(np.asarray(image, dtype=np.float64), config.crop_size)
            crop_seed = derive_seed(config.seed, STREAM_CROP, epoch, idx)
            clean = random_crop(patch_src, config.crop_size, crop_seed)
            speckle_seed = derive_seed(config.seed, STREAM_SPECKLE, epoch, idx)
            field_values = sample_gamma_speckle(
                config.crop_size, config.crop_size, config.looks, speckle_seed
            ).values
            pairs.append((clean * field_values, clean))

        total = 0.0
        for lo in range(0, len(pairs), config.batch_size):
            batch = pairs[lo : lo + config.batch_size]
            noisy = Tensor(np.stack([p[0] for p in batch])[:, None].astype(dtype))
            clean = Tensor(np.stack([p[1] for p in batch])[:, None].astype(dtype))
            with Tape() as tape:
                pred = forward(params, noisy)
                loss = total_loss(pred, clean, config.tv_weight)
            grad_map = ad.backward(loss, tape)
            grads = {
                name: grad_map.get(p, np.zeros_like(p.data)) for name, p in params.items()
            }
            adam_step(params, grads, adam_state, config)
            total += loss.item() * len(batch)
        train_loss = total / len(pairs)

        val_psnr = float("nan")
        if val_images:
            scores = []
            for vidx, vimg in enumerate(val_images):
                vimg = np.asarray(vimg, dtype=np.float64)
                vseed = derive_seed(config.seed, STREAM_VAL, vidx)
                field_values = sample_gamma_speckle(
                    vimg.shape[0], vimg.shape[1], config.looks, vseed
                ).values
                noisy = np.clip(vimg * field_values, 0.0, 1.0)
                restored = despeckle_image(params, noisy)
                scores.append(psnr(vimg, restored))
            val_psnr = float(np.mean(scores))

        stats = EpochStats(epoch=epoch, train_loss=train_loss, val_psnr=val_psnr)
        history.append(stats)
        if log is not None:
            log(stats)

    return TrainResult(params=params, adam_state=adam_state, history=history)
