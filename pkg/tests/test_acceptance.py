"""Acceptance suite: one test per criterion, printing one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`. The toy-training
criterion trains for 30 epochs and takes a few minutes; everything else is
quick. Expected values are computed by the independent oracles in
helpers.py or by closed forms evaluated here, never copied by eye.
"""

import math
import time

import numpy as np
import pytest

from condensesr.autograd import (ConvParams, Tensor, add, concat_channels,
                                 conv2d, conv_transpose2d,
                                 index_select_channels, leaky_relu, scale,
                                 tmean, tsum)
from condensesr.cli import main
from condensesr.data import (image_to_luma, list_images,
                             load_training_pairs, read_image)
from condensesr.lgc import CondensingConv
from condensesr.metrics import (PUBLISHED_FLOPS_X2_64PX, count_flops,
                                evaluate_hr_only, instrumented_macs, psnr,
                                ssim)
from condensesr.model import ModelConfig, build_model, upsample_batch, zero_parameters
from condensesr.training import (TrainSchedule, charbonnier_loss, cosine_lr,
                                 train)

from helpers import fd_gradient, naive_psnr, naive_ssim, rel_error
from test_metrics import _random_config


def _report(number, text):
    print(f"\ncriterion {number}: PASS - {text}")


# ---------------------------------------------------------------------------
# 1. Gradient suite

def test_criterion_1_gradient_suite():
    started = time.monotonic()
    seeds = range(20)
    worst = 0.0

    def check(build, arrays):
        nonlocal worst
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        build(tensors).backward()
        for i, tensor in enumerate(tensors):
            fd = fd_gradient(lambda *arrs: float(build([Tensor(a) for a in arrs]).data),
                             arrays, wrt=i, h=1e-5)
            err = rel_error(tensor.grad, fd)
            worst = max(worst, err)
            assert err < 1e-4

    for seed in seeds:
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 4, 6, 6))
        y = rng.normal(size=(1, 4, 6, 6))
        w = rng.normal(size=(4, 2, 3, 3))
        b = rng.normal(size=4)
        wt = rng.normal(size=(4, 3, 4, 4))
        bt = rng.normal(size=6)
        target = rng.normal(size=(1, 4, 6, 6))
        factor = rng.normal(size=(1, 4, 6, 6))

        check(lambda ts: tsum(conv2d(ts[0], ConvParams(ts[1], ts[2], 1, 1, 2))), [x, w, b])
        check(lambda ts: tsum(conv_transpose2d(ts[0], ConvParams(ts[1], ts[2], 2, 1, 2))),
              [x[:, :, :4, :4], wt, bt])
        check(lambda ts: tsum(leaky_relu(ts[0], 0.1)), [x + 0.05])
        check(lambda ts: tmean(add(ts[0], ts[1])), [x, y])
        check(lambda ts: tsum(scale(ts[0], factor)), [x])
        check(lambda ts: tsum(concat_channels(ts[0], ts[1])), [x, y[:, :2]])
        check(lambda ts: tsum(index_select_channels(ts[0], [3, 0, 0, 2])), [x])
        check(lambda ts: charbonnier_loss(ts[0], target, eps=1e-3), [x])

        # Group-lasso penalty, away from the non-smooth zero point.
        lasso_w = rng.normal(size=(8, 6, 1, 1))
        lasso_w += np.sign(lasso_w) * 0.5
        layer = CondensingConv(Tensor(lasso_w.copy(), requires_grad=True), None, 2, 3)
        if seed % 2:
            layer.condense()
        mask = layer.mask.copy()
        layer.group_lasso_penalty().backward()

        def lasso_value(arr):
            probe = CondensingConv(Tensor(arr), None, 2, 3)
            probe.mask = mask
            return float(probe.group_lasso_penalty().data)

        fd = fd_gradient(lambda a: lasso_value(a), [lasso_w], wrt=0, h=1e-5)
        err = rel_error(layer.weight.grad, fd)
        worst = max(worst, err)
        assert err < 1e-4

    elapsed = time.monotonic() - started
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
    _report(1, f"all ops + group lasso vs central differences over 20 seeds, "
               f"worst rel err {worst:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Pruning arithmetic

def test_criterion_2_pruning_arithmetic():
    rng = np.random.default_rng(0)
    layer = CondensingConv(Tensor(rng.normal(size=(8, 16, 1, 1)).astype(np.float32),
                                  requires_grad=True), None, groups=4, condense_factor=4)
    retained = []
    for _ in range(3):
        layer.condense()
        counts = layer.retained_per_group()
        assert len(set(counts)) == 1
        retained.append(counts[0])
    assert retained == [12, 8, 4]

    # Mask monotonicity over a 200+ step toy training run.
    from test_training import synth_pairs, tiny_config
    pairs = synth_pairs(40, lr_size=6, seed=3)
    model = build_model(tiny_config(stem_channels=16), seed=2)
    schedule = TrainSchedule(total_epochs=42, lr0=1e-3, batch_size=8)
    previous = {name: [set(l.active_columns(g)) for g in range(l.groups)]
                for name, l in model.lgc_layers()}
    total_steps = 0

    def check(model_ref, optimizer, global_step):
        nonlocal total_steps
        total_steps = global_step
        for name, l in model_ref.lgc_layers():
            current = [set(l.active_columns(g)) for g in range(l.groups)]
            for g, cols in enumerate(current):
                assert cols <= previous[name][g], f"mask grew at step {global_step}"
            previous[name] = current
            assert np.all(l.weight.data[:, :, 0, 0][l.mask == 0] == 0.0)

    for _ in train(model, schedule, pairs, seed=1, on_step=check):
        pass
    assert total_steps >= 200
    _report(2, f"retention 12/8/4 for 16 columns at factor 4; mask monotone "
               f"across {total_steps} optimizer steps")


# ---------------------------------------------------------------------------
# 3. Conversion equivalence

def test_criterion_3_conversion_equivalence():
    config = ModelConfig(num_blocks=1, layers_per_block=2, bottleneck_channels=32,
                         deconv_channels=32)
    model = build_model(config, seed=4)
    rng = np.random.default_rng(5)
    for _, layer in model.lgc_layers():
        for _ in range(3):
            layer.weight.data += (rng.normal(size=layer.weight.data.shape).astype(np.float32)
                                  * layer.mask[:, :, None, None] * 0.05)
            layer.condense()
    frozen = model.freeze_for_inference()
    worst = 0.0
    for _ in range(100):
        x = Tensor(rng.uniform(16, 235, size=(1, 1, 8, 8)).astype(np.float32))
        masked = model.forward(x).data
        converted = frozen.forward(x).data
        worst = max(worst, float(np.max(np.abs(masked - converted))))
    assert worst < 1e-5
    _report(3, f"converted vs masked forward on 100 random inputs, "
               f"max abs diff {worst:.2e}")


# ---------------------------------------------------------------------------
# 4. FLOPs accounting

def test_criterion_4_flops():
    rng = np.random.default_rng(6)
    for trial in range(10):
        config = _random_config(rng)
        model = build_model(config, seed=trial)
        for _, layer in model.lgc_layers():
            for _ in range(int(rng.integers(0, layer.condense_factor))):
                layer.condense()
        h, w = int(rng.choice([8, 12, 16])), int(rng.choice([8, 12]))
        analytic = count_flops(model, h, w).total_retained
        x = Tensor(rng.uniform(16, 235, size=(1, 1, h, w)).astype(np.float32))
        assert instrumented_macs(model, x) == analytic

    report = count_flops(ModelConfig(), 32, 32)
    target = PUBLISHED_FLOPS_X2_64PX["SRCondenseNet"]
    assert 0.75 * target <= report.total_retained <= 1.25 * target

    lgc_entries = [e for e in report.entries if e.name.endswith(".lgc")]
    dense = sum(e.macs_dense for e in lgc_entries)
    kept = sum(e.macs_retained for e in lgc_entries)
    assert kept * 4 == dense
    _report(4, f"analytic == instrumented on 10 random configs; default x2 total "
               f"{report.total_retained / 1e6:.2f}e6 within +/-25% of {target / 1e6:.2f}e6; "
               f"condensed 1x1 MACs exactly 1/4 of dense")


# ---------------------------------------------------------------------------
# 5. Residual identity

def test_criterion_5_residual_identity(fixture_dataset):
    _, val_dir = fixture_dataset
    config = ModelConfig(num_blocks=1, layers_per_block=2, bottleneck_channels=32,
                         deconv_channels=32)
    model = zero_parameters(build_model(config, seed=7))

    rng = np.random.default_rng(8)
    x = rng.uniform(16, 235, size=(2, 1, 24, 20))
    out = model.forward(Tensor(x)).data
    bicubic = upsample_batch(x, 2)
    diff = float(np.max(np.abs(out - bicubic)))
    assert diff < 1e-6

    luma = image_to_luma(read_image(list_images(val_dir)[0]))
    scores = evaluate_hr_only(model, luma, scale=2, shave=2)
    assert scores["psnr_model"] == scores["psnr_bicubic"]
    _report(5, f"zero-weight output == bicubic (max abs diff {diff:.1e}); "
               f"model PSNR equals bicubic PSNR exactly")


# ---------------------------------------------------------------------------
# 6. Toy training beats bicubic

def test_criterion_6_toy_training(fixture_dataset):
    started = time.monotonic()
    train_dir, val_dir = fixture_dataset
    pairs = load_training_pairs([train_dir], scale=2)
    assert len(pairs) >= 20

    config = ModelConfig(num_blocks=1, layers_per_block=2, bottleneck_channels=48,
                         deconv_channels=48)
    model = build_model(config, seed=0)
    schedule = TrainSchedule(total_epochs=30, lr0=1e-3, batch_size=2)
    losses = [result.mean_loss for result in train(model, schedule, pairs, seed=0)]
    assert len(losses) == 30
    ratio = losses[-1] / losses[0]
    assert ratio <= 0.5, f"final/first loss ratio {ratio:.3f}"

    gains = []
    for path in list_images(val_dir):
        scores = evaluate_hr_only(model, image_to_luma(read_image(path)), scale=2, shave=2)
        gains.append(scores["psnr_model"] - scores["psnr_bicubic"])
    mean_gain = float(np.mean(gains))
    assert mean_gain >= 0.2, f"held-out PSNR gain {mean_gain:.3f} dB"

    elapsed = time.monotonic() - started
    assert elapsed < 600.0, f"toy training took {elapsed:.0f}s"
    _report(6, f"loss ratio {ratio:.3f} (<= 0.5); held-out gain over bicubic "
               f"{mean_gain:.2f} dB (>= 0.2); {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 7. Schedule values

def test_criterion_7_schedule():
    assert cosine_lr(0, 1000, 1e-4) == 1e-4
    assert cosine_lr(500, 1000, 1e-4) == pytest.approx(5e-5, rel=1e-12)
    assert cosine_lr(1000, 1000, 1e-4) == pytest.approx(0.0, abs=1e-20)
    events = TrainSchedule(total_epochs=180).condense_epochs(4)
    assert events == [30, 60, 90]
    _report(7, "lr(0)=1e-4, lr(T/2)=5e-5, lr(T)=0; condense events at 30/60/90 of 180")


# ---------------------------------------------------------------------------
# 8. Metric oracles

def test_criterion_8_metric_oracles():
    a = np.full((32, 32), 100.0)
    b = np.full((32, 32), 116.0)
    # Closed form 20*log10(255/16) = 24.048404...; the criterion's printed
    # constant 24.0346 mis-evaluates its own formula (see decisions ledger),
    # so the formula value is pinned here.
    expected = 20.0 * math.log10(255.0 / 16.0)
    measured = psnr(a, b)
    assert measured == pytest.approx(expected, abs=1e-3)
    assert abs(measured - naive_psnr(a, b)) < 1e-9

    rng = np.random.default_rng(9)
    x = rng.uniform(0, 255, size=(20, 16))
    y = np.clip(x + rng.normal(0, 10, size=x.shape), 0, 255)
    assert abs(psnr(x, y) - naive_psnr(x, y)) < 1e-9

    plane = rng.uniform(0, 255, size=(16, 16))
    assert ssim(plane, plane.copy()) == pytest.approx(1.0, abs=1e-12)
    assert abs(ssim(x, y) - naive_ssim(x, y)) < 1e-6
    _report(8, f"uniform-16 PSNR {measured:.4f} dB == 20*log10(255/16); "
               f"SSIM(identical)=1.0; both match naive references")


# ---------------------------------------------------------------------------
# 9. Determinism and resume via the CLI

def test_criterion_9_determinism(tmp_path):
    args = ["train", "--toy", "--epochs", "4", "--seed", "11"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    log_a = (tmp_path / "a" / "train_log.csv").read_bytes()
    log_b = (tmp_path / "b" / "train_log.csv").read_bytes()
    assert log_a == log_b

    resume_src = tmp_path / "a" / "checkpoints" / "epoch_0002.ckpt"
    out_c = tmp_path / "resumed"
    assert main(["train", "--resume", str(resume_src), "--toy",
                 "--out-dir", str(out_c)]) == 0
    tail_full = log_a.decode().splitlines()[3:]
    tail_resumed = (out_c / "train_log.csv").read_text().splitlines()[1:]
    assert tail_resumed == tail_full
    _report(9, "two `train --toy` runs bit-identical; resume reproduces the "
               "uninterrupted loss log")
