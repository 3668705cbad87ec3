import numpy as np
import pytest

import condensesr.model as model_mod
from condensesr.autograd import Tensor
from condensesr.errors import ConfigError, ContractError, DimensionError
from condensesr.metrics import MacCounter
from condensesr.model import ModelConfig, build_model, upsample_batch, zero_parameters


def toy_config(**overrides):
    base = dict(scale=2, num_blocks=1, layers_per_block=2, growth=20, groups=4,
                condense_factor=4, stem_channels=16, bottleneck_channels=32,
                deconv_channels=32, lgc_expansion=4, leaky_slope=0.1)
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# configuration and build

def test_default_channel_trace_into_bottleneck():
    config = ModelConfig()
    assert config.channels_into(0, 0) == 16
    assert config.channels_into(0, 1) == 36
    assert config.channels_into(3, 6) == 16 + 27 * 20
    assert config.bottleneck_in == 16 + 28 * 20 == 576
    model = build_model(config, seed=0)
    assert model.bottleneck.kernel.data.shape == (128, 576, 1, 1)


def test_same_seed_bit_identical_parameters():
    a = build_model(toy_config(), seed=123)
    b = build_model(toy_config(), seed=123)
    for (name_a, pa), (name_b, pb) in zip(a.named_parameters().items(),
                                          b.named_parameters().items()):
        assert name_a == name_b
        np.testing.assert_array_equal(pa.data, pb.data)


def test_different_seed_differs():
    a = build_model(toy_config(), seed=1)
    b = build_model(toy_config(), seed=2)
    assert any(not np.array_equal(pa.data, pb.data)
               for pa, pb in zip(a.named_parameters().values(),
                                 b.named_parameters().values()))


def test_invalid_scale_rejected():
    with pytest.raises(ConfigError, match="scale"):
        build_model(toy_config(scale=5), seed=0)


def test_degenerate_single_layer_model_runs():
    config = toy_config(num_blocks=1, layers_per_block=1)
    model = build_model(config, seed=0)
    out = model.forward(Tensor(np.zeros((1, 1, 8, 8), dtype=np.float32)))
    assert out.data.shape == (1, 1, 16, 16)


@pytest.mark.parametrize("scale,expected", [(2, 64), (3, 96), (4, 128)])
def test_forward_output_size_per_scale(scale, expected):
    model = build_model(toy_config(scale=scale), seed=0)
    out = model.forward(Tensor(np.full((1, 1, 32, 32), 100.0, dtype=np.float32)))
    assert out.data.shape == (1, 1, expected, expected)


def test_forward_rejects_multichannel_input():
    model = build_model(toy_config(), seed=0)
    with pytest.raises(DimensionError, match="channel axis"):
        model.forward(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)))


# ---------------------------------------------------------------------------
# residual path

def test_zero_parameters_reduce_to_bicubic():
    model = zero_parameters(build_model(toy_config(), seed=7))
    rng = np.random.default_rng(0)
    x = rng.uniform(16, 235, size=(2, 1, 24, 20)).astype(np.float32)
    out = model.forward(Tensor(x)).data
    expected = upsample_batch(x, 2)
    assert np.max(np.abs(out - expected)) < 1e-6


def test_perturbing_bicubic_branch_shifts_output_identically(monkeypatch):
    model = build_model(toy_config(), seed=3)
    x = np.random.default_rng(1).uniform(16, 235, size=(1, 1, 16, 16)).astype(np.float32)
    base = model.forward(Tensor(x)).data

    original = upsample_batch
    delta = 3.75
    monkeypatch.setattr(model_mod, "upsample_batch",
                        lambda batch, factor: original(batch, factor) + delta)
    shifted = model.forward(Tensor(x)).data
    np.testing.assert_allclose(shifted - base, delta, atol=1e-3)


# ---------------------------------------------------------------------------
# gradients reach every parameter

def test_tape_covers_every_trainable_parameter():
    from condensesr.training import charbonnier_loss
    model = build_model(toy_config(), seed=5)
    x = np.random.default_rng(2).uniform(16, 235, size=(2, 1, 16, 16)).astype(np.float32)
    target = np.random.default_rng(3).uniform(16, 235, size=(2, 1, 32, 32)).astype(np.float32)
    loss = charbonnier_loss(model.forward(Tensor(x)), target)
    loss.backward()
    for name, param in model.named_parameters().items():
        assert param.grad is not None, f"{name} missing gradient"
        assert param.grad.shape == param.data.shape


# ---------------------------------------------------------------------------
# parameter counting

def test_param_count_matches_hand_arithmetic():
    config = toy_config(num_blocks=1, layers_per_block=1, stem_channels=8,
                        bottleneck_channels=16, deconv_channels=16)
    model = build_model(config, seed=0)
    stem = 8 * 1 * 9 + 8
    lgc = 80 * 8 + 80
    gconv = 20 * (80 // 4) * 9 + 20
    bottleneck = 16 * 28 + 16
    deconv = 16 * 16 * 16 + 16
    recon = 1 * 16 * 9 + 1
    assert model.count_params() == stem + lgc + gconv + bottleneck + deconv + recon


def test_active_param_count_shrinks_with_condensation():
    model = build_model(toy_config(), seed=1)
    full = model.count_params(active_only=True)
    assert full == model.count_params()
    for _, layer in model.lgc_layers():
        for _ in range(3):
            layer.condense()
    active = model.count_params(active_only=True)
    lgc_weights = sum(layer.weight.data.size for _, layer in model.lgc_layers())
    assert active == model.count_params() - 3 * lgc_weights // 4

    frozen = model.freeze_for_inference()
    assert frozen.count_params() == active


# ---------------------------------------------------------------------------
# freezing

def test_freeze_requires_final_stage():
    model = build_model(toy_config(), seed=2)
    with pytest.raises(ContractError, match="stage"):
        model.freeze_for_inference()


def test_frozen_forward_matches_masked_forward():
    model = build_model(toy_config(), seed=4)
    rng = np.random.default_rng(5)
    for _, layer in model.lgc_layers():
        for _ in range(3):
            layer.weight.data += (rng.normal(size=layer.weight.data.shape).astype(np.float32)
                                  * layer.mask[:, :, None, None] * 0.05)
            layer.condense()
    frozen = model.freeze_for_inference()
    worst = 0.0
    for _ in range(20):
        x = rng.uniform(16, 235, size=(1, 1, 12, 12)).astype(np.float32)
        masked = model.forward(Tensor(x)).data
        converted = frozen.forward(Tensor(x)).data
        worst = max(worst, float(np.max(np.abs(masked - converted))))
    assert worst < 1e-5


# ---------------------------------------------------------------------------
# spatial bookkeeping

def test_feature_maps_keep_input_size_until_deconv():
    model = build_model(toy_config(), seed=0)
    counter = MacCounter()
    model.forward(Tensor(np.zeros((1, 1, 14, 10), dtype=np.float32)), counter=counter)
    seen_deconv = False
    for entry in counter.entries:
        if entry.name.startswith("deconv"):
            seen_deconv = True
        if not seen_deconv:
            assert entry.output_shape[2:] == (14, 10), entry.name
        elif not entry.name.startswith("deconv"):
            assert entry.output_shape[2:] == (28, 20), entry.name
    assert seen_deconv


def test_default_full_depth_model_forward():
    model = build_model(ModelConfig(), seed=0)
    assert len(model.blocks) == 4
    assert all(len(block) == 7 for block in model.blocks)
    x = np.random.default_rng(3).uniform(16, 235, size=(1, 1, 16, 16)).astype(np.float32)
    out = model.forward(Tensor(x))
    assert out.data.shape == (1, 1, 32, 32)
    assert np.all(np.isfinite(out.data))


def test_scale4_uses_two_deconv_layers():
    model = build_model(toy_config(scale=4), seed=0)
    assert len(model.deconvs) == 2
    model3 = build_model(toy_config(scale=3), seed=0)
    assert len(model3.deconvs) == 1
    assert model3.deconvs[0].kernel.data.shape[2:] == (5, 5)
