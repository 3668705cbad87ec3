"""Quality metrics (PSNR/SSIM on the luma plane) and multiply-add accounting.

FLOPs here means multiply-accumulate operations (1 MAC = 1 FLOP); reports
also carry the 2x figure for readers using the other convention. Two
independent routes produce the counts: an analytic walk over the layer
arithmetic and an instrumented forward pass that reads live array shapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .data import ImagePlane, _plane_data, bicubic_resize, crop_to_multiple
from .errors import DimensionError
from .lgc import CondensingConv
from .model import Model

# Published multiply-add totals for x2-scale models producing a 64x64 output,
# shipped for context in reports; not recomputed here.
PUBLISHED_FLOPS_X2_64PX = {
    "SRCNN": 332.32e6,
    "VDSR": 2727.61e6,
    "LapSRN": 1988.38e6,
    "DRRN": 30235.17e6,
    "SRCondenseNet": 668.88e6,
}


# ---------------------------------------------------------------------------
# PSNR / SSIM

def psnr(a, b, shave: int = 0, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB over a border-shaved region.

    Identical inputs return math.inf.
    """
    x = _plane_data(a).astype(np.float64)
    y = _plane_data(b).astype(np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"psnr size mismatch: {x.shape} vs {y.shape}")
    if shave < 0 or 2 * shave >= min(x.shape):
        raise DimensionError(f"shave {shave} too large for image {x.shape}")
    if shave:
        x = x[shave:-shave, shave:-shave]
        y = y[shave:-shave, shave:-shave]
    mse = float(np.mean(np.ascontiguousarray(x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, peak: float = 255.0) -> float:
    """Mean local structural similarity with a Gaussian window.

    Windows are taken at every fully interior position (no padding), so the
    image must be at least window x window.
    """
    # Contiguous copies keep the result a pure function of pixel values
    # (einsum blocking is otherwise sensitive to the input's memory layout).
    x = np.ascontiguousarray(_plane_data(a), dtype=np.float64)
    y = np.ascontiguousarray(_plane_data(b), dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"ssim size mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < window:
        raise DimensionError(f"image {x.shape} smaller than the {window}x{window} window")
    win = _gaussian_window(window, sigma)
    wx = np.lib.stride_tricks.sliding_window_view(x, (window, window))
    wy = np.lib.stride_tricks.sliding_window_view(y, (window, window))
    mu_x = np.einsum("ijkl,kl->ij", wx, win)
    mu_y = np.einsum("ijkl,kl->ij", wy, win)
    xx = np.einsum("ijkl,kl->ij", wx * wx, win)
    yy = np.einsum("ijkl,kl->ij", wy * wy, win)
    xy = np.einsum("ijkl,kl->ij", wx * wy, win)
    var_x = xx - mu_x ** 2
    var_y = yy - mu_y ** 2
    cov = xy - mu_x * mu_y
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(score.mean())


# ---------------------------------------------------------------------------
# Multiply-add accounting

def conv_layer_macs(out_h: int, out_w: int, k_h: int, k_w: int,
                    in_channels: int, out_channels: int, groups: int = 1) -> int:
    """Multiply-adds of one convolution: out_h*out_w*k_h*k_w*(C_in/G)*C_out."""
    return out_h * out_w * k_h * k_w * (in_channels // groups) * out_channels


def condensed_1x1_macs(out_h: int, out_w: int, in_channels: int,
                       out_channels: int, condense_factor: int) -> int:
    """Multiply-adds of a fully condensed 1x1 layer (retained columns only)."""
    kept = in_channels - (condense_factor - 1) * (in_channels // condense_factor)
    return out_h * out_w * kept * out_channels


@dataclass
class LayerCount:
    name: str
    output_shape: tuple
    macs_dense: int
    macs_retained: int


@dataclass
class FlopsReport:
    """Per-layer multiply-adds plus dense-equivalent and post-condensation totals."""

    entries: list = field(default_factory=list)
    convention: str = "1 MAC = 1 FLOP; elementwise ops listed with 0 MACs"

    @property
    def total_dense(self) -> int:
        return sum(e.macs_dense for e in self.entries)

    @property
    def total_retained(self) -> int:
        return sum(e.macs_retained for e in self.entries)

    def machine_lines(self) -> list:
        lines = [f"convention={self.convention}"]
        for e in self.entries:
            shape = "x".join(str(s) for s in e.output_shape)
            lines.append(f"layer.{e.name}={e.macs_retained} dense={e.macs_dense} out={shape}")
        lines.append(f"total_dense_macs={self.total_dense}")
        lines.append(f"total_retained_macs={self.total_retained}")
        lines.append(f"total_retained_flops_2x={2 * self.total_retained}")
        return lines

    def text_table(self) -> str:
        rows = [f"{'layer':<28} {'output':>16} {'MACs':>14} {'dense MACs':>14}"]
        for e in self.entries:
            shape = "x".join(str(s) for s in e.output_shape)
            rows.append(f"{e.name:<28} {shape:>16} {e.macs_retained:>14,} {e.macs_dense:>14,}")
        rows.append("-" * 76)
        rows.append(f"{'total (post-condensation)':<28} {'':>16} {self.total_retained:>14,}")
        rows.append(f"{'total (dense equivalent)':<28} {'':>16} {self.total_dense:>14,}")
        rows.append(f"convention: {self.convention}; doubled total = {2 * self.total_retained:,}")
        return "\n".join(rows)


class MacCounter:
    """Collects per-layer MAC records emitted during a forward pass."""

    def __init__(self):
        self.entries: list = []

    def record(self, name: str, out_shape: tuple, macs_dense: int, macs_retained: int) -> None:
        self.entries.append(LayerCount(name, out_shape, macs_dense, macs_retained))

    @property
    def total_dense(self) -> int:
        return sum(e.macs_dense for e in self.entries)

    @property
    def total_retained(self) -> int:
        return sum(e.macs_retained for e in self.entries)


def instrumented_macs(model: Model, lr_input) -> int:
    """Run a real forward pass with counting hooks; total multiply-adds.

    The count reads live array shapes and live mask state, so it is an
    independent cross-check of :func:`count_flops`.
    """
    counter = MacCounter()
    model.forward(lr_input, counter=counter)
    return counter.total_retained


def instrumented_report(model: Model, lr_input) -> FlopsReport:
    counter = MacCounter()
    model.forward(lr_input, counter=counter)
    return FlopsReport(entries=counter.entries)


# ---------------------------------------------------------------------------
# Whole-image evaluation

def super_resolve_luma(model: Model, lr_plane) -> ImagePlane:
    """Run one luma plane through the model; output clamped to [0, 255].

    Inference runs in float64: with zero weights the output is then
    bit-identical to the float64 bicubic baseline.
    """
    lr = _plane_data(lr_plane)
    batch = lr[None, None].astype(np.float64)
    sr = model.forward(Tensor(batch)).data[0, 0].astype(np.float64)
    return ImagePlane(np.clip(sr, 0.0, 255.0), "Y")


def evaluate_luma_pair(model: Model, lr_plane, hr_plane, shave: int) -> dict:
    """PSNR/SSIM of the model output and of the bicubic baseline vs ground truth.

    Both reconstructions are clamped to [0, 255] before scoring, so a
    zero-weight model scores exactly the bicubic baseline.
    """
    hr = _plane_data(hr_plane)
    sr = super_resolve_luma(model, lr_plane)
    lr = _plane_data(lr_plane)
    baseline = np.clip(bicubic_resize(lr, hr.shape[0], hr.shape[1]), 0.0, 255.0)
    return {
        "psnr_model": psnr(sr, hr, shave=shave),
        "ssim_model": ssim(_shaved(sr.data, shave), _shaved(hr, shave)),
        "psnr_bicubic": psnr(baseline, hr, shave=shave),
        "ssim_bicubic": ssim(_shaved(baseline, shave), _shaved(hr, shave)),
    }


def evaluate_hr_only(model: Model, hr_plane, scale: int, shave: int) -> dict:
    """Crop to a scale multiple, synthesize the LR input, then score."""
    hr = crop_to_multiple(_plane_data(hr_plane), scale)
    lr = bicubic_resize(hr, hr.shape[0] // scale, hr.shape[1] // scale)
    return evaluate_luma_pair(model, lr, hr, shave)


def _shaved(arr: np.ndarray, shave: int) -> np.ndarray:
    return arr[shave:-shave, shave:-shave] if shave else arr


def count_flops(model_or_config, height: int = 32, width: int = 32) -> FlopsReport:
    """Analytic per-layer multiply-add counts at a given input size.

    Accepts a ModelConfig (assumes fully condensed retention arithmetic) or a
    built Model (uses its live mask state). Convolution MACs are
    out_h*out_w*k_h*k_w*(C_in/G)*C_out; transposed convolutions are counted
    at their input resolution; the masked 1x1 layers count retained
    connections only; elementwise steps appear with zero MACs.
    """
    if isinstance(model_or_config, Model):
        model = model_or_config
        config = model.config
        lgc_retained = {}
        for name, layer in model.lgc_layers():
            if isinstance(layer, CondensingConv):
                per_group_filters = layer.out_channels // layer.groups
                lgc_retained[name] = sum(layer.retained_per_group()) * per_group_filters
            else:
                out_ch, in_per_group = layer.conv.kernel.data.shape[:2]
                lgc_retained[name] = in_per_group * out_ch
    else:
        config = model_or_config
        model = None
        lgc_retained = None

    config.validate()
    report = FlopsReport()
    h, w = height, width
    lgc_out = config.lgc_expansion * config.growth

    def put(name, channels, hh, ww, dense, retained=None):
        report.entries.append(LayerCount(name, (1, channels, hh, ww), dense,
                                         dense if retained is None else retained))

    put("stem", config.stem_channels, h, w, h * w * 9 * 1 * config.stem_channels)
    put("stem.act", config.stem_channels, h, w, 0)
    running = config.stem_channels
    for b in range(config.num_blocks):
        for l in range(config.layers_per_block):
            base = f"block{b}.layer{l}"
            dense = h * w * running * lgc_out
            if lgc_retained is None:
                kept_cols = running - (config.condense_factor - 1) * (running // config.condense_factor)
                retained = h * w * kept_cols * config.groups * (lgc_out // config.groups)
            else:
                retained = h * w * lgc_retained[f"{base}.lgc"]
            put(f"{base}.lgc", lgc_out, h, w, dense, retained)
            put(f"{base}.lgc.act", lgc_out, h, w, 0)
            gconv = h * w * 9 * (lgc_out // config.groups) * config.growth
            put(f"{base}.conv", config.growth, h, w, gconv)
            put(f"{base}.conv.act", config.growth, h, w, 0)
            running += config.growth
    put("bottleneck", config.bottleneck_channels, h, w,
        h * w * 1 * 1 * running * config.bottleneck_channels)
    put("bottleneck.act", config.bottleneck_channels, h, w, 0)

    in_ch = config.bottleneck_channels
    for i, (kernel, stride, padding) in enumerate(config.deconv_specs()):
        out_h = stride * (h - 1) + kernel - 2 * padding
        out_w = stride * (w - 1) + kernel - 2 * padding
        macs = h * w * kernel * kernel * in_ch * config.deconv_channels
        put(f"deconv{i}", config.deconv_channels, out_h, out_w, macs)
        put(f"deconv{i}.act", config.deconv_channels, out_h, out_w, 0)
        h, w = out_h, out_w
        in_ch = config.deconv_channels
    put("recon", 1, h, w, h * w * 9 * in_ch * 1)
    put("residual.add", 1, h, w, 0)
    return report
