"""Self-checks: finite-difference gradient audits and receptive-field
measurement by impulse backpropagation.

The gradient suite runs every differentiable op on small float64 tensors
across many seeds and reports the worst relative disagreement with
central differences; the `gradcheck` CLI subcommand and the acceptance
tests both call it.  Inputs for kinked ops (ReLU, maxpool, TV) are
shuffled evenly spaced values, keeping every coordinate bounded away
from the kink by much more than the step size.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, finite_diff_check
from .network import (
    NetworkConfig,
    forward,
    forward_overcomplete,
    forward_undercomplete,
    init_params,
    param_shapes,
)
from .rng import Stream, derive_seed, normal_block, uniform_block
from .training import l2_loss, total_loss, tv_loss

GRADCHECK_TOL = 1e-4
GRADCHECK_EPS = 1e-5


def _uniform_tensor(shape, seed, low=-1.0, high=1.0) -> Tensor:
    n = int(np.prod(shape))
    u = uniform_block(seed, 1, n).reshape(shape)
    return Tensor((low + (high - low) * u).astype(np.float64))


def _separated_tensor(shape, seed) -> Tensor:
    """Values on a shuffled even grid over [0.1, 1.1] minus 0.6: distinct,
    gap >= 1/size, none within 1e-3 of zero."""
    n = int(np.prod(shape))
    grid = (np.arange(n, dtype=np.float64) + 1.0) / n  # (0, 1], gaps 1/n
    order = list(range(n))
    Stream(seed).shuffle(order)
    vals = grid[np.asarray(order)] - 0.5
    vals = np.where(np.abs(vals) < 0.5 / n, 0.75, vals)  # keep clear of 0
    return Tensor(vals.reshape(shape))


def _op_checks(seed: int) -> dict[str, float]:
    """Max FD relative error per op for one seed."""
    s = lambda k: derive_seed(seed, k)
    errors: dict[str, float] = {}

    x = _uniform_tensor((1, 2, 4, 4), s(1))
    w = Tensor(normal_block(s(2), 1, 3 * 2 * 3 * 3).reshape(3, 2, 3, 3) * 0.5)
    b = Tensor(normal_block(s(3), 1, 3).reshape(1, 3, 1, 1) * 0.1)
    errors["conv2d_3x3/input"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.conv2d_3x3(t, w, b), ad.conv2d_3x3(t, w, b))), x
    )
    errors["conv2d_3x3/weight"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.conv2d_3x3(x, t, b), ad.conv2d_3x3(x, t, b))), w
    )
    errors["conv2d_3x3/bias"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.conv2d_3x3(x, w, t), ad.conv2d_3x3(x, w, t))), b
    )

    w1 = Tensor(normal_block(s(4), 1, 3 * 2).reshape(3, 2, 1, 1) * 0.5)
    errors["conv2d_1x1/input"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.conv2d_1x1(t, w1, b), ad.conv2d_1x1(t, w1, b))), x
    )
    errors["conv2d_1x1/weight"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.conv2d_1x1(x, t, b), ad.conv2d_1x1(x, t, b))), w1
    )

    xp = _separated_tensor((1, 2, 4, 4), s(5))
    errors["maxpool_2x2"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.maxpool_2x2(t), ad.maxpool_2x2(t))), xp
    )
    errors["upsample_bilinear_2x"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.upsample_bilinear_2x(t), ad.upsample_bilinear_2x(t))), x
    )
    errors["downsample_bilinear_2x"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.downsample_bilinear_2x(t), ad.downsample_bilinear_2x(t))),
        x,
    )
    errors["relu"] = finite_diff_check(lambda t: ad.sum_all(ad.mul(ad.relu(t), ad.relu(t))), xp)

    other = _uniform_tensor((1, 2, 4, 4), s(6))
    errors["add"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.add(t, other), ad.add(t, other))), x
    )
    errors["sub"] = finite_diff_check(
        lambda t: ad.sum_all(ad.mul(ad.sub(t, other), ad.sub(t, other))), x
    )
    errors["mul"] = finite_diff_check(lambda t: ad.sum_all(ad.mul(t, ad.mul(t, other))), x)
    errors["scale"] = finite_diff_check(lambda t: ad.sum_all(ad.mul(ad.scale(t, 1.7), t)), x)
    errors["sum_all"] = finite_diff_check(lambda t: ad.sum_all(t), x)
    errors["mean_all"] = finite_diff_check(lambda t: ad.mean_all(ad.mul(t, t)), x)

    target = _uniform_tensor((1, 2, 4, 4), s(7))
    errors["l2_loss"] = finite_diff_check(lambda t: l2_loss(t, target), x)
    errors["tv_loss"] = finite_diff_check(lambda t: tv_loss(t), xp)
    errors["total_loss"] = finite_diff_check(lambda t: total_loss(t, target, 0.3), xp)
    return errors


def gradcheck_ops(seeds: int = 100, base_seed: int = 2024) -> dict[str, float]:
    """Worst FD error per op over ``seeds`` independent draws."""
    worst: dict[str, float] = {}
    for k in range(seeds):
        for name, err in _op_checks(derive_seed(base_seed, k)).items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst


def gradcheck_network(
    config: NetworkConfig | None = None,
    n_params: int = 20,
    seeds: int = 3,
    base_seed: int = 77,
    eps: float = GRADCHECK_EPS,
) -> float:
    """End-to-end FD check: composite loss of the full network against
    central differences on randomly selected parameter coordinates."""
    if config is None:
        config = NetworkConfig.tiny()
    worst = 0.0
    for trial in range(seeds):
        seed = derive_seed(base_seed, trial)
        params = init_params(replace(config, seed=seed), dtype=np.float64)
        x = _uniform_tensor((1, 1, 32, 32), derive_seed(seed, 1), low=0.0, high=1.0)
        y = _uniform_tensor((1, 1, 32, 32), derive_seed(seed, 2), low=0.0, high=1.0)

        def loss_value() -> float:
            return total_loss(forward(params, x), y, 5e-5).item()

        with Tape() as tape:
            loss = total_loss(forward(params, x), y, 5e-5)
        grad_map = ad.backward(loss, tape)

        names = sorted(params)
        stream = Stream(derive_seed(seed, 3))
        for _ in range(n_params):
            name = names[stream.randint_below(len(names))]
            p = params[name]
            flat = p.data.reshape(-1)
            i = stream.randint_below(flat.size)
            analytic = grad_map[p].reshape(-1)[i]
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_value()
            flat[i] = orig - eps
            fm = loss_value()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            worst = max(worst, rel)
    return worst


def run_gradcheck(seeds: int = 100, tol: float = GRADCHECK_TOL) -> tuple[dict[str, float], list[str]]:
    """Full suite; returns (per-op worst errors incl. the network check,
    names of ops over tolerance)."""
    errors = gradcheck_ops(seeds=seeds)
    errors["network/end_to_end"] = gradcheck_network()
    failing = sorted(name for name, err in errors.items() if not (err < tol))
    return errors, failing


# ---------------------------------------------------------------------------
# receptive fields


def _positive_params(config: NetworkConfig, dtype=np.float64):
    """All-positive weights and biases keep every ReLU active, so the
    gradient support of an impulse equals the full linear receptive
    field."""
    params = init_params(config, dtype=dtype)
    for name, p in params.items():
        if name.endswith(".weight"):
            p.data = np.abs(p.data) + 0.05
        else:
            p.data = np.full_like(p.data, 0.01)
    return params


def _impulse_support(feature: Tensor, x: Tensor, tape: Tape) -> tuple[int, int]:
    """Backprop an impulse at the spatial center of ``feature`` (channel
    0) and measure the bounding box of the nonzero input gradient."""
    _, _, fh, fw = feature.shape
    mask = np.zeros(feature.shape, dtype=feature.dtype)
    mask[0, 0, fh // 2, fw // 2] = 1.0
    probe = ad.sum_all(ad.mul(feature, Tensor(mask)))
    grads = ad.backward(probe, tape, watch=[x])
    support = np.abs(grads[x][0, 0]) > 0
    ys, xs = np.nonzero(support)
    if ys.size == 0:
        return (0, 0)
    return (int(ys.max() - ys.min() + 1), int(xs.max() - xs.min() + 1))


def overcomplete_deepest_support(
    config: NetworkConfig | None = None, size: int = 128
) -> tuple[int, int]:
    """Input-pixel support of one activation of the deepest overcomplete
    encoder feature (spatial scale 8x the input)."""
    if config is None:
        config = NetworkConfig.tiny()
    params = _positive_params(config)
    x = Tensor(np.full((1, 1, size, size), 0.5), requires_grad=True)
    with Tape() as tape:
        _, enc_feats, _ = forward_overcomplete(params, x)
        return _impulse_support(enc_feats[2], x, tape)


def undercomplete_stage3_support(
    config: NetworkConfig | None = None, size: int = 128
) -> tuple[int, int]:
    """Input-pixel support of one activation of the third undercomplete
    encoder feature (spatial scale 1/8 the input)."""
    if config is None:
        config = NetworkConfig.tiny()
    params = _positive_params(config)
    x = Tensor(np.full((1, 1, size, size), 0.5), requires_grad=True)
    with Tape() as tape:
        _, enc_feats, _ = forward_undercomplete(params, x, return_features=True)
        return _impulse_support(enc_feats[2], x, tape)
