"""Network wiring: shape traces, fusion-block semantics, skip behavior,
parameter initialization, gradient flow, and inference padding."""

import numpy as np
import pytest

import ocsd.autodiff as ad
from ocsd.autodiff import Tape, Tensor, backward
from ocsd.network import (
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
from ocsd.training import l2_loss


def _zero_params(config):
    return {
        name: Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)
        for name, shape in param_shapes(config).items()
    }


class TestConfig:
    def test_rejects_wrong_depth(self):
        with pytest.raises(ValueError, match="5 encoder widths"):
            NetworkConfig(under_channels=(8, 16, 32))

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError, match=">= 1"):
            NetworkConfig(over_channels=0)


class TestInitParams:
    def test_deterministic_under_seed(self):
        a = init_params(NetworkConfig.tiny(seed=7))
        b = init_params(NetworkConfig.tiny(seed=7))
        for name in a:
            assert a[name].data.tobytes() == b[name].data.tobytes()
        c = init_params(NetworkConfig.tiny(seed=8))
        assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a)

    def test_biases_zero(self):
        params = init_params(NetworkConfig.tiny(seed=1))
        for name, p in params.items():
            if name.endswith(".bias"):
                assert not p.data.any()

    def test_he_std_within_ten_percent(self):
        # over.enc.1 of a 64-wide config is 64x64x3x3: fan_in 576
        params = init_params(NetworkConfig(over_channels=64, seed=3))
        w = params["over.enc.1.weight"].data
        assert w.shape == (64, 64, 3, 3)
        expected = np.sqrt(2.0 / 576.0)
        assert abs(w.std() - expected) / expected < 0.10

    def test_every_parameter_named_and_shaped(self):
        config = NetworkConfig.tiny(seed=0)
        shapes = param_shapes(config)
        params = init_params(config)
        assert set(params) == set(shapes)
        for name, p in params.items():
            assert p.shape == shapes[name]
        # 23 convs: 6 over + 10 under + 6 msff + 1 fuse
        assert len(params) == 46


class TestOvercomplete:
    def test_shape_trace_scales_up_then_back(self):
        config = NetworkConfig(over_channels=16, seed=0)
        params = init_params(config)
        x = Tensor(np.random.default_rng(0).random((1, 1, 32, 32)).astype(np.float32))
        out, enc, dec = forward_overcomplete(params, x)
        assert [f.shape[2] for f in enc] == [64, 128, 256]
        assert [f.shape[2] for f in dec] == [128, 64, 32]
        assert out.shape == (1, 16, 32, 32)

    def test_zero_params_zero_output(self):
        params = _zero_params(NetworkConfig.tiny(seed=0))
        x = Tensor(np.random.default_rng(1).random((1, 1, 16, 16)).astype(np.float32))
        out, enc, dec = forward_overcomplete(params, x)
        assert not out.data.any()

    def test_indivisible_size_rejected(self):
        params = init_params(NetworkConfig.tiny(seed=0))
        with pytest.raises(ValueError, match="divisible by 8"):
            forward_overcomplete(params, Tensor(np.zeros((1, 1, 12, 16), dtype=np.float32)))


class TestUndercomplete:
    def test_bottleneck_shape_for_128_input(self):
        config = NetworkConfig.tiny(seed=0)
        params = init_params(config)
        x = Tensor(np.random.default_rng(2).random((1, 1, 128, 128)).astype(np.float32))
        out, enc, dec = forward_undercomplete(params, x, return_features=True)
        assert enc[-1].shape[2:] == (4, 4)  # 128 / 2**5
        assert [f.shape[2] for f in enc] == [64, 32, 16, 8, 4]
        assert out.shape == (1, config.over_channels, 128, 128)

    def test_zero_msff_identical_to_omitted(self):
        config = NetworkConfig.tiny(seed=4)
        params = init_params(config)
        x = Tensor(np.random.default_rng(3).random((1, 1, 32, 32)).astype(np.float32))
        u = config.under_channels[0]
        zero_enc = Tensor(np.zeros((1, u, 16, 16), dtype=np.float32))
        zero_dec = Tensor(np.zeros((1, u, 16, 16), dtype=np.float32))
        with_zeros = forward_undercomplete(params, x, zero_enc, zero_dec)
        without = forward_undercomplete(params, x)
        assert with_zeros.data.tobytes() == without.data.tobytes()

    def test_indivisible_size_rejected(self):
        params = init_params(NetworkConfig.tiny(seed=0))
        with pytest.raises(ValueError, match="divisible by 32"):
            forward_undercomplete(params, Tensor(np.zeros((1, 1, 48, 64), dtype=np.float32)))


class TestMSFF:
    def test_output_at_target_scale(self):
        config = NetworkConfig.tiny(seed=5)
        params = init_params(config)
        c, u = config.over_channels, config.under_channels[0]
        rng = np.random.default_rng(4)
        feats = tuple(
            Tensor(rng.random((1, c, s, s)).astype(np.float32)) for s in (64, 128, 256)
        )
        out = msff(MSFFInputs(features=feats, factors=(4, 8, 16)), params, "msff_enc")
        assert out.shape == (1, u, 16, 16)

    def test_zero_inputs_zero_biases_give_zero(self):
        config = NetworkConfig.tiny(seed=6)
        params = init_params(config)  # biases start at zero
        c = config.over_channels
        feats = tuple(Tensor(np.zeros((1, c, s, s), dtype=np.float32)) for s in (64, 128, 256))
        out = msff(MSFFInputs(features=feats, factors=(4, 8, 16)), params, "msff_enc")
        assert not out.data.any()

    def test_scale_mismatch_rejected(self):
        c = 4
        feats = tuple(Tensor(np.zeros((1, c, s, s), dtype=np.float32)) for s in (64, 128, 192))
        with pytest.raises(ValueError, match="join scale"):
            MSFFInputs(features=feats, factors=(4, 8, 16))

    def test_indivisible_feature_rejected(self):
        feats = tuple(Tensor(np.zeros((1, 4, s, s), dtype=np.float32)) for s in (64, 128, 200))
        with pytest.raises(ValueError, match="not divisible"):
            MSFFInputs(features=feats, factors=(4, 8, 16))

    def test_non_power_of_two_factor_rejected(self):
        feats = tuple(Tensor(np.zeros((1, 4, 48, 48), dtype=np.float32)) for _ in range(3))
        with pytest.raises(ValueError, match="power of two"):
            MSFFInputs(features=feats, factors=(3, 3, 3))


class TestForward:
    @pytest.mark.parametrize("size", [32, 64])
    def test_output_shape_equals_input_shape(self, size):
        params = init_params(NetworkConfig.tiny(seed=7))
        x = Tensor(np.random.default_rng(5).random((1, 1, size, size)).astype(np.float32))
        assert forward(params, x).shape == (1, 1, size, size)

    def test_deterministic_bit_identical(self):
        params = init_params(NetworkConfig.tiny(seed=8))
        x = Tensor(np.random.default_rng(6).random((1, 1, 32, 32)).astype(np.float32))
        assert forward(params, x).data.tobytes() == forward(params, x).data.tobytes()

    @pytest.mark.parametrize("seed", range(10))
    def test_every_parameter_receives_nonzero_gradient(self, seed):
        params = init_params(NetworkConfig.tiny(seed=seed))
        rng = np.random.default_rng(1000 + seed)
        x = Tensor(rng.random((1, 1, 32, 32)).astype(np.float32))
        y = Tensor(rng.random((1, 1, 32, 32)).astype(np.float32))
        with Tape() as tape:
            loss = l2_loss(forward(params, x), y)
        grads = backward(loss, tape)
        for name, p in params.items():
            assert p in grads and np.any(grads[p] != 0), f"no gradient flow to {name}"

    def test_resolution_trace_monotone(self):
        # overcomplete grows x2 per encoder block, undercomplete shrinks /2
        params = init_params(NetworkConfig.tiny(seed=9))
        x = Tensor(np.random.default_rng(7).random((1, 1, 32, 32)).astype(np.float32))
        _, over_enc, _ = forward_overcomplete(params, x)
        _, under_enc, _ = forward_undercomplete(params, x, return_features=True)
        over_sizes = [f.shape[2] for f in over_enc]
        under_sizes = [f.shape[2] for f in under_enc]
        assert over_sizes == [64, 128, 256]
        assert under_sizes == [16, 8, 4, 2, 1]
        assert all(b == 2 * a for a, b in zip([32] + over_sizes, over_sizes))
        assert all(b == a // 2 for a, b in zip([32] + under_sizes, under_sizes))


class TestPadding:
    def test_already_multiple_unchanged(self):
        img = np.random.default_rng(8).random((64, 96))
        padded, orig = pad_to_multiple(img, 32)
        assert padded is img and orig == (64, 96)

    def test_pad_and_restore_100(self):
        img = np.random.default_rng(9).random((100, 100))
        padded, orig = pad_to_multiple(img, 32)
        assert padded.shape == (128, 128)
        np.testing.assert_array_equal(crop_to(padded, orig), img)

    def test_round_trip_identity(self):
        img = np.random.default_rng(10).random((45, 70))
        padded, orig = pad_to_multiple(img, 32)
        np.testing.assert_array_equal(crop_to(padded, orig), img)

    def test_minimum_enforced(self):
        padded, orig = pad_to_multiple(np.ones((5, 5)), 32, minimum=32)
        assert padded.shape == (32, 32) and orig == (5, 5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            pad_to_multiple(np.zeros((0, 4)))


class TestDespeckleImage:
    def test_arbitrary_size_round_trip(self):
        params = init_params(NetworkConfig.tiny(seed=10))
        img = np.random.default_rng(11).random((100, 77))
        out = despeckle_image(params, img)
        assert out.shape == (100, 77)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestReceptiveFieldSanity:
    def test_overcomplete_smaller_than_undercomplete_stage3(self):
        from ocsd.diagnostics import (
            overcomplete_deepest_support,
            undercomplete_stage3_support,
        )

        over = overcomplete_deepest_support(size=64)
        under = undercomplete_stage3_support(size=64)
        assert max(over) <= 7
        assert min(under) >= 15
        assert max(over) < min(under)


class TestEndToEndGradient:
    def test_tiny_network_matches_finite_differences(self):
        from ocsd.diagnostics import gradcheck_network

        assert gradcheck_network(n_params=5, seeds=1) < 1e-4
