"""Dual-branch despeckling network.

Two encoder-decoder branches process the noisy image in parallel:

* the overcomplete branch (3 blocks each way) *raises* resolution x2 per
  encoder block (conv 3x3 -> bilinear up x2 -> ReLU) and pools back down
  in its decoder (conv 3x3 -> maxpool 2x2 -> ReLU), which keeps receptive
  fields small and the features local;
* the undercomplete branch (5 blocks each way) is the conventional
  U-Net-style pathway (conv/pool encoder, conv/up decoder) with
  same-scale additive skip connections, capturing global structure.

Two multi-scale fusion blocks inject overcomplete features into the
undercomplete branch: each of three inputs is bilinearly downsampled to
the join scale, mapped by its own 1x1 convolution to the join width, and
the three results are summed.  The encoder-side block feeds the output
of the first undercomplete encoder block; the decoder-side block feeds
the input of the last undercomplete decoder block.  Branch outputs are
added and fused by a final 1x1 convolution; there is no output
activation (clamp to [0,1] only when exporting).

All merges are elementwise additions, so channel widths must line up:
the undercomplete decoder ends at ``over_channels`` so the two branch
outputs can be summed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import STREAM_INIT, derive_seed, normal_block


@dataclass(frozen=True)
class NetworkConfig:
    """Channel widths and init seed; depths are fixed by the architecture
    (3+3 overcomplete blocks, 5+5 undercomplete blocks)."""

    over_channels: int = 32
    under_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    input_channels: int = 1
    output_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        if len(self.under_channels) != 5:
            raise ValueError(
                f"under_channels must list 5 encoder widths, got {self.under_channels}"
            )
        widths = (self.over_channels, *self.under_channels)
        if any(w < 1 for w in widths):
            raise ValueError(f"channel widths must be >= 1, got {widths}")
        if self.input_channels != 1 or self.output_channels != 1:
            raise ValueError("only single-channel input/output is supported")
        object.__setattr__(self, "under_channels", tuple(self.under_channels))

    @classmethod
    def tiny(cls, seed: int = 0) -> "NetworkConfig":
        """Smallest config that still exercises every connection; used for
        gradient checks and overfit sanity runs."""
        return cls(over_channels=4, under_channels=(4, 8, 16, 32, 64), seed=seed)

    @classmethod
    def small(cls, seed: int = 0) -> "NetworkConfig":
        """Desk-scale training config."""
        return cls(over_channels=8, under_channels=(8, 16, 32, 64, 128), seed=seed)


def param_shapes(config: NetworkConfig) -> dict[str, tuple[int, int, int, int]]:
    """Ordered weight shapes; each `<name>.weight` is paired with a
    `<name>.bias` of shape (1, out_channels, 1, 1)."""
    c = config.over_channels
    u = config.under_channels
    shapes: dict[str, tuple[int, int, int, int]] = {}

    def conv(name: str, co: int, ci: int, k: int) -> None:
        shapes[f"{name}.weight"] = (co, ci, k, k)
        shapes[f"{name}.bias"] = (1, co, 1, 1)

    conv("over.enc.0", c, config.input_channels, 3)
    conv("over.enc.1", c, c, 3)
    conv("over.enc.2", c, c, 3)
    conv("over.dec.0", c, c, 3)
    conv("over.dec.1", c, c, 3)
    conv("over.dec.2", c, c, 3)
    conv("under.enc.0", u[0], config.input_channels, 3)
    for i in range(1, 5):
        conv(f"under.enc.{i}", u[i], u[i - 1], 3)
    for i in range(4):
        conv(f"under.dec.{i}", u[3 - i], u[4 - i], 3)
    conv("under.dec.4", c, u[0], 3)
    for k in range(3):
        conv(f"msff_enc.{k}", u[0], c, 1)
    for k in range(3):
        conv(f"msff_dec.{k}", u[0], c, 1)
    conv("fuse", config.output_channels, c, 1)
    return shapes


def init_params(config: NetworkConfig, dtype=np.float32) -> dict[str, Tensor]:
    """He-initialized weights (std sqrt(2/fan_in)), zero biases.

    Each weight draws from its own derived stream, so initialization is
    deterministic under config.seed regardless of generation order."""
    params: dict[str, Tensor] = {}
    for idx, (name, shape) in enumerate(param_shapes(config).items()):
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            std = np.sqrt(2.0 / fan_in)
            stream = derive_seed(config.seed, STREAM_INIT, idx)
            data = (normal_block(stream, 1, int(np.prod(shape))) * std).reshape(shape)
            data = data.astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
    return params


def _conv(params: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    w = params[f"{name}.weight"]
    b = params[f"{name}.bias"]
    if w.shape[2] == 1:
        return ad.conv2d_1x1(x, w, b)
    return ad.conv2d_3x3(x, w, b)


def _require_divisible(h: int, w: int, m: int, branch: str) -> None:
    if h % m or w % m:
        raise ValueError(
            f"{branch} branch requires spatial dims divisible by {m}, got {h}x{w}; "
            f"pad the input with pad_to_multiple first"
        )


def forward_overcomplete(
    params: dict[str, Tensor], x: Tensor
) -> tuple[Tensor, list[Tensor], list[Tensor]]:
    """Run the overcomplete branch.

    Returns (output at input scale, encoder features at 2x/4x/8x, decoder
    features at 4x/2x/1x).  Encoder features 1 and 2 (2x, 4x) are added
    into the matching-scale decoder outputs as skip connections; the
    returned decoder features are these post-merge values, which are what
    flows onward to the decoder-side fusion block.
    """
    n, c, h, w = x.shape
    _require_divisible(h, w, 8, "overcomplete")
    e = x
    enc_feats = []
    for i in range(3):
        e = ad.relu(ad.upsample_bilinear_2x(_conv(params, f"over.enc.{i}", e)))
        enc_feats.append(e)
    d = ad.relu(ad.maxpool_2x2(_conv(params, "over.dec.0", enc_feats[2])))
    d = ad.add(d, enc_feats[1])
    dec_feats = [d]
    d = ad.relu(ad.maxpool_2x2(_conv(params, "over.dec.1", d)))
    d = ad.add(d, enc_feats[0])
    dec_feats.append(d)
    d = ad.relu(ad.maxpool_2x2(_conv(params, "over.dec.2", d)))
    dec_feats.append(d)
    return d, enc_feats, dec_feats


def forward_undercomplete(
    params: dict[str, Tensor],
    x: Tensor,
    msff_enc: Tensor | None = None,
    msff_dec: Tensor | None = None,
    return_features: bool = False,
):
    """Run the undercomplete (U-Net-style) branch.

    ``msff_enc`` is added to the output of the first encoder block
    (scale h/2); ``msff_dec`` to the input of the last decoder block
    (also h/2).  Passing None omits the corresponding addition, which is
    bitwise identical to adding zeros.
    """
    n, c, h, w = x.shape
    _require_divisible(h, w, 32, "undercomplete")
    e = ad.relu(ad.maxpool_2x2(_conv(params, "under.enc.0", x)))
    if msff_enc is not None:
        e = ad.add(e, msff_enc)
    enc_feats = [e]
    for i in range(1, 5):
        e = ad.relu(ad.maxpool_2x2(_conv(params, f"under.enc.{i}", e)))
        enc_feats.append(e)
    d = enc_feats[4]
    dec_feats = []
    for i in range(4):
        d = ad.relu(ad.upsample_bilinear_2x(_conv(params, f"under.dec.{i}", d)))
        d = ad.add(d, enc_feats[3 - i])
        dec_feats.append(d)
    if msff_dec is not None:
        d = ad.add(d, msff_dec)
    out = ad.relu(ad.upsample_bilinear_2x(_conv(params, "under.dec.4", d)))
    if return_features:
        return out, enc_feats, dec_feats
    return out


@dataclass
class MSFFInputs:
    """Three same-width feature maps plus the power-of-two factor that
    brings each down to the join scale."""

    features: tuple[Tensor, Tensor, Tensor]
    factors: tuple[int, int, int]

    def __post_init__(self):
        if len(self.features) != 3 or len(self.factors) != 3:
            raise ValueError("MSFF takes exactly three features and three factors")
        sizes = set()
        for t, f in zip(self.features, self.factors):
            if f < 2 or f & (f - 1):
                raise ValueError(f"downsample factor must be a power of two >= 2, got {f}")
            _, _, h, w = t.shape
            if h % f or w % f:
                raise ValueError(
                    f"feature of size {h}x{w} is not divisible by its factor {f}"
                )
            sizes.add((h // f, w // f))
        if len(sizes) != 1:
            raise ValueError(f"MSFF inputs disagree on the join scale: {sorted(sizes)}")


def msff(inputs: MSFFInputs, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Fuse three scales: bilinear-downsample each feature to the join
    scale, apply its own 1x1 conv, and sum.  ``prefix`` selects the
    parameter group (msff_enc or msff_dec)."""
    out = None
    for k, (feat, factor) in enumerate(zip(inputs.features, inputs.factors)):
        t = feat
        while factor > 1:
            t = ad.downsample_bilinear_2x(t)
            factor //= 2
        t = _conv(params, f"{prefix}.{k}", t)
        out = t if out is None else ad.add(out, t)
    return out


def forward(params: dict[str, Tensor], noisy: Tensor) -> Tensor:
    """Full network: both branches, both fusion blocks, final 1x1 conv.
    Output shape equals input shape; no output activation."""
    over_out, enc_feats, dec_feats = forward_overcomplete(params, noisy)
    fused_enc = msff(
        MSFFInputs(features=tuple(enc_feats), factors=(4, 8, 16)), params, "msff_enc"
    )
    fused_dec = msff(
        MSFFInputs(features=tuple(dec_feats), factors=(8, 4, 2)), params, "msff_dec"
    )
    under_out = forward_undercomplete(params, noisy, fused_enc, fused_dec)
    return _conv(params, "fuse", ad.add(over_out, under_out))


def pad_to_multiple(
    image: np.ndarray, multiple: int = 32, minimum: int = 0
) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad right/bottom to the next multiple (at least
    ``minimum``); returns the padded image and the original (h, w) for
    :func:`crop_to`."""
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"pad_to_multiple expects a nonempty 2-D image, got shape {img.shape}")
    h, w = img.shape
    th = max(minimum, -(-h // multiple) * multiple)
    tw = max(minimum, -(-w // multiple) * multiple)
    if (th, tw) != (h, w):
        img = np.pad(img, ((0, th - h), (0, tw - w)), mode="reflect")
    return img, (h, w)


def crop_to(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Undo :func:`pad_to_multiple` (identity when nothing was padded)."""
    h, w = size
    return image[:h, :w]


def despeckle_image(params: dict[str, Tensor], image: np.ndarray) -> np.ndarray:
    """Inference convenience: pad to a multiple of 32, run the network,
    crop back, clamp to [0, 1]."""
    dtype = next(iter(params.values())).dtype
    padded, orig = pad_to_multiple(image, 32, minimum=32)
    x = ad.from_image(padded, dtype=dtype)
    pred = forward(params, x)
    return np.clip(crop_to(pred.data[0, 0], orig), 0.0, 1.0)
