"""ocsd: dual-branch overcomplete/undercomplete SAR despeckling toolkit.

A self-contained numpy implementation of multiplicative Gamma speckle
simulation, a despeckling CNN with its own reverse-mode autodiff engine,
composite L2 + total-variation training, and the standard despeckling
metrics (PSNR, SSIM, ENL, Cx).  See README.md for a tour; the ``ocsd``
command exposes simulate / train / despeckle / eval / gradcheck.
"""

from .autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    conv2d_1x1,
    conv2d_3x3,
    downsample_bilinear_2x,
    finite_diff_check,
    from_image,
    maxpool_2x2,
    mean_all,
    mul,
    relu,
    scale,
    sub,
    sum_all,
    tensor,
    upsample_bilinear_2x,
)
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .imaging import (
    Dataset,
    ImageFormatError,
    list_images,
    load_gray,
    random_crop,
    save_gray,
    split_dataset,
)
from .metrics import MetricReport, RegionSpec, cx, enl, evaluate, psnr, ssim
from .network import (
    MSFFInputs,
    NetworkConfig,
    crop_to,
    despeckle_image,
    forward,
    forward_overcomplete,
    forward_undercomplete,
    init_params,
    msff,
    pad_to_multiple,
    param_shapes,
)
from .speckle import SpeckleField, apply_speckle, gamma_pdf, sample_gamma_speckle
from .training import (
    AdamState,
    EpochStats,
    TrainConfig,
    TrainResult,
    adam_step,
    l2_loss,
    total_loss,
    train,
    tv_loss,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "Checkpoint",
    "CheckpointError",
    "Dataset",
    "EpochStats",
    "ImageFormatError",
    "MSFFInputs",
    "MetricReport",
    "NetworkConfig",
    "RegionSpec",
    "SpeckleField",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "add",
    "adam_step",
    "apply_speckle",
    "backward",
    "conv2d_1x1",
    "conv2d_3x3",
    "crop_to",
    "cx",
    "despeckle_image",
    "downsample_bilinear_2x",
    "enl",
    "evaluate",
    "finite_diff_check",
    "forward",
    "forward_overcomplete",
    "forward_undercomplete",
    "from_image",
    "gamma_pdf",
    "init_params",
    "l2_loss",
    "list_images",
    "load_checkpoint",
    "load_gray",
    "maxpool_2x2",
    "mean_all",
    "msff",
    "mul",
    "pad_to_multiple",
    "param_shapes",
    "psnr",
    "random_crop",
    "relu",
    "sample_gamma_speckle",
    "save_checkpoint",
    "save_gray",
    "scale",
    "split_dataset",
    "ssim",
    "sub",
    "sum_all",
    "tensor",
    "total_loss",
    "train",
    "tv_loss",
    "upsample_bilinear_2x",
]
