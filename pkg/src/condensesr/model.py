"""The super-resolution network: dense blocks of condensing layers, a
bottleneck plus deconvolution reconstruction stack, and a global bicubic
residual.

Layer graph: stem conv -> num_blocks dense blocks (each layers_per_block
denselayers of LGC 1x1 -> LeakyReLU -> grouped 3x3 -> LeakyReLU, output
concatenated onto the running feature map) -> 1x1 bottleneck -> scale-
dependent deconvolution stack -> 3x3 single-channel reconstruction conv.
The network output is added to the bicubic-upsampled input, so a
zero-weight network reproduces plain bicubic upscaling exactly.

No normalization layers, no pooling: every feature map before the deconv
stack keeps the input's spatial size. Luma values enter in [0, 255]; the
conv stack runs on values scaled to [0, 1] and its output is scaled back
before the residual add.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autograd import (ConvParams, Tensor, add, concat_channels, conv2d,
                       conv_transpose2d, leaky_relu, scale)
from .data import bicubic_resize
from .errors import ConfigError, ContractError, DimensionError
from .lgc import CondensingConv, ConvertedLGC

LUMA_SCALE = 255.0


@dataclass
class ModelConfig:
    """Architecture hyperparameters; everything a checkpoint needs to rebuild."""

    scale: int = 2
    num_blocks: int = 4
    layers_per_block: int = 7
    growth: int = 20
    groups: int = 4
    condense_factor: int = 4
    stem_channels: int = 16
    bottleneck_channels: int = 128
    deconv_channels: int = 128
    lgc_expansion: int = 4
    leaky_slope: float = 0.1

    def validate(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        for name in ("num_blocks", "layers_per_block", "growth", "groups",
                     "condense_factor", "stem_channels", "bottleneck_channels",
                     "deconv_channels", "lgc_expansion"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        lgc_out = self.lgc_expansion * self.growth
        if lgc_out % self.groups:
            raise ConfigError(
                f"lgc output width {lgc_out} must be divisible by groups {self.groups}"
            )
        if self.growth % self.groups:
            raise ConfigError(
                f"growth {self.growth} must be divisible by groups {self.groups}"
            )

    def channels_into(self, block: int, layer: int) -> int:
        """Channel count entering a denselayer (closed form of the concat chain)."""
        return self.stem_channels + (self.layers_per_block * block + layer) * self.growth

    @property
    def bottleneck_in(self) -> int:
        return self.channels_into(self.num_blocks, 0)

    def deconv_specs(self) -> list:
        """(kernel, stride, padding) per deconvolution layer; exact x-scale sizing."""
        if self.scale == 2:
            return [(4, 2, 1)]
        if self.scale == 4:
            return [(4, 2, 1), (4, 2, 1)]
        return [(5, 3, 1)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg


def _kaiming_kernel(rng: np.random.Generator, out_ch: int, in_per_group: int,
                    kh: int, kw: int, slope: float, dtype) -> np.ndarray:
    fan_in = in_per_group * kh * kw
    std = np.sqrt(2.0 / (1.0 + slope ** 2)) / np.sqrt(fan_in)
    return rng.normal(0.0, std, size=(out_ch, in_per_group, kh, kw)).astype(dtype)


def _conv_params(rng, in_ch, out_ch, kernel, stride, padding, groups, slope, dtype) -> ConvParams:
    weight = _kaiming_kernel(rng, out_ch, in_ch // groups, kernel, kernel, slope, dtype)
    bias = np.zeros(out_ch, dtype=dtype)
    return ConvParams(
        Tensor(weight, requires_grad=True),
        Tensor(bias, requires_grad=True),
        stride=stride,
        padding=padding,
        groups=groups,
    )


@dataclass
class DenseLayer:
    """LGC 1x1 -> LeakyReLU -> grouped 3x3 -> LeakyReLU; emits ``growth`` channels."""

    lgc: CondensingConv
    conv: ConvParams


class Model:
    """A built network: parameters plus the forward pass."""

    def __init__(self, config: ModelConfig, stem: ConvParams, blocks: list,
                 bottleneck: ConvParams, deconvs: list, recon: ConvParams):
        self.config = config
        self.stem = stem
        self.blocks = blocks  # list of lists of DenseLayer
        self.bottleneck = bottleneck
        self.deconvs = deconvs
        self.recon = recon

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> dict:
        """Ordered name -> Tensor map over every trainable parameter."""
        params: dict = {}

        def put(name, conv: ConvParams):
            params[f"{name}.weight"] = conv.kernel
            if conv.bias is not None:
                params[f"{name}.bias"] = conv.bias

        put("stem", self.stem)
        for b, block in enumerate(self.blocks):
            for l, layer in enumerate(block):
                base = f"block{b}.layer{l}"
                params[f"{base}.lgc.weight"] = layer.lgc.weight
                if layer.lgc.bias is not None:
                    params[f"{base}.lgc.bias"] = layer.lgc.bias
                put(f"{base}.conv", layer.conv)
        put("bottleneck", self.bottleneck)
        for i, deconv in enumerate(self.deconvs):
            put(f"deconv{i}", deconv)
        put("recon", self.recon)
        return params

    def lgc_layers(self) -> list:
        """(name, CondensingConv) pairs in network order."""
        return [
            (f"block{b}.layer{l}.lgc", layer.lgc)
            for b, block in enumerate(self.blocks)
            for l, layer in enumerate(block)
        ]

    # -- forward ------------------------------------------------------------

    def forward(self, lr_y: Tensor, counter=None) -> Tensor:
        """Super-resolve a (N, 1, h, w) luma batch to (N, 1, r*h, r*w).

        The bicubic-upsampled input is added to the network output; the
        returned values are unclamped.
        """
        if not isinstance(lr_y, Tensor):
            lr_y = Tensor(lr_y)
        if lr_y.data.ndim != 4 or lr_y.data.shape[1] != 1:
            raise DimensionError(
                f"channel axis: network input must be (N, 1, h, w), got {lr_y.data.shape}"
            )
        slope = self.config.leaky_slope
        bicubic = Tensor(upsample_batch(lr_y.data, self.config.scale))

        x = scale(lr_y, 1.0 / LUMA_SCALE)
        x = _traced_conv(x, self.stem, "stem", counter)
        x = _record_ew(leaky_relu(x, slope), "stem.act", counter)
        for b, block in enumerate(self.blocks):
            for l, layer in enumerate(block):
                base = f"block{b}.layer{l}"
                y = _traced_lgc(x, layer.lgc, base + ".lgc", counter)
                y = _record_ew(leaky_relu(y, slope), base + ".lgc.act", counter)
                y = _traced_conv(y, layer.conv, base + ".conv", counter)
                y = _record_ew(leaky_relu(y, slope), base + ".conv.act", counter)
                x = concat_channels(x, y)
        x = _traced_conv(x, self.bottleneck, "bottleneck", counter)
        x = _record_ew(leaky_relu(x, slope), "bottleneck.act", counter)
        for i, deconv in enumerate(self.deconvs):
            x = _traced_deconv(x, deconv, f"deconv{i}", counter)
            x = _record_ew(leaky_relu(x, slope), f"deconv{i}.act", counter)
        x = _traced_conv(x, self.recon, "recon", counter)
        out = add(scale(x, LUMA_SCALE), bicubic)
        return _record_ew(out, "residual.add", counter)

    # -- housekeeping --------------------------------------------------------

    def count_params(self, active_only: bool = False) -> int:
        """Stored parameter count; ``active_only`` skips masked LGC entries."""
        total = sum(int(t.data.size) for t in self.named_parameters().values())
        if active_only:
            for _, layer in self.lgc_layers():
                total -= int(layer.mask.size - layer.mask.sum())
        return total

    def freeze_for_inference(self) -> "FrozenModel":
        """Convert every condensing layer to its index-select + grouped form.

        Requires every layer to be at its final condensing stage.
        """
        frozen_blocks = []
        for block in self.blocks:
            frozen_block = []
            for layer in block:
                if layer.lgc.stage != layer.lgc.condense_factor - 1:
                    raise ContractError(
                        f"freeze requires all layers at stage {layer.lgc.condense_factor - 1}, "
                        f"found stage {layer.lgc.stage}"
                    )
                frozen_block.append(FrozenDenseLayer(layer.lgc.convert(), layer.conv))
            frozen_blocks.append(frozen_block)
        return FrozenModel(self.config, self.stem, frozen_blocks,
                           self.bottleneck, self.deconvs, self.recon)


@dataclass
class FrozenDenseLayer:
    lgc: ConvertedLGC
    conv: ConvParams


class FrozenModel(Model):
    """Inference-only model whose LGC layers run as index-select + grouped conv."""

    def __init__(self, config, stem, blocks, bottleneck, deconvs, recon):
        # Parent init reused; blocks hold FrozenDenseLayer instead of DenseLayer.
        super().__init__(config, stem, blocks, bottleneck, deconvs, recon)

    def named_parameters(self) -> dict:
        params: dict = {}
        params["stem.weight"] = self.stem.kernel
        if self.stem.bias is not None:
            params["stem.bias"] = self.stem.bias
        for b, block in enumerate(self.blocks):
            for l, layer in enumerate(block):
                base = f"block{b}.layer{l}"
                params[f"{base}.lgc.weight"] = layer.lgc.conv.kernel
                if layer.lgc.conv.bias is not None:
                    params[f"{base}.lgc.bias"] = layer.lgc.conv.bias
                params[f"{base}.conv.weight"] = layer.conv.kernel
                if layer.conv.bias is not None:
                    params[f"{base}.conv.bias"] = layer.conv.bias
        params["bottleneck.weight"] = self.bottleneck.kernel
        if self.bottleneck.bias is not None:
            params["bottleneck.bias"] = self.bottleneck.bias
        for i, deconv in enumerate(self.deconvs):
            params[f"deconv{i}.weight"] = deconv.kernel
            if deconv.bias is not None:
                params[f"deconv{i}.bias"] = deconv.bias
        params["recon.weight"] = self.recon.kernel
        if self.recon.bias is not None:
            params["recon.bias"] = self.recon.bias
        return params

    def count_params(self, active_only: bool = False) -> int:
        return sum(int(t.data.size) for t in self.named_parameters().values())

    def freeze_for_inference(self) -> "FrozenModel":
        return self


def upsample_batch(batch: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic-upsample each (1, h, w) plane of a (N, 1, h, w) batch."""
    n, _, h, w = batch.shape
    out = np.empty((n, 1, h * factor, w * factor), dtype=batch.dtype)
    for i in range(n):
        out[i, 0] = bicubic_resize(batch[i, 0].astype(np.float64), h * factor, w * factor)
    return out


# -- conv application with optional MAC instrumentation ----------------------

def _record(counter, name, out_shape, dense, retained):
    if counter is not None:
        counter.record(name, tuple(int(s) for s in out_shape), int(dense), int(retained))


def _record_ew(out: Tensor, name: str, counter) -> Tensor:
    # Elementwise step: listed in reports with zero multiply-adds.
    _record(counter, name, out.data.shape, 0, 0)
    return out


def _traced_conv(x: Tensor, params: ConvParams, name: str, counter) -> Tensor:
    out = conv2d(x, params)
    if counter is not None:
        out_ch, in_per_group, kh, kw = params.kernel.data.shape
        oh, ow = out.data.shape[2], out.data.shape[3]
        macs = oh * ow * kh * kw * in_per_group * out_ch
        _record(counter, name, out.data.shape, macs, macs)
    return out


def _traced_deconv(x: Tensor, params: ConvParams, name: str, counter) -> Tensor:
    out = conv_transpose2d(x, params)
    if counter is not None:
        in_ch, out_per_group, kh, kw = params.kernel.data.shape
        h, w = x.data.shape[2], x.data.shape[3]
        # Counted at the input resolution: every input pixel contributes
        # k*k*out_per_group MACs per input channel.
        macs = h * w * kh * kw * in_ch * out_per_group
        _record(counter, name, out.data.shape, macs, macs)
    return out


def _traced_lgc(x: Tensor, layer, name: str, counter) -> Tensor:
    out = layer.forward(x)
    if counter is not None:
        oh, ow = out.data.shape[2], out.data.shape[3]
        if isinstance(layer, CondensingConv):
            per_group_filters = layer.out_channels // layer.groups
            retained = sum(layer.retained_per_group()) * per_group_filters
            dense = layer.in_channels * layer.out_channels
        else:  # ConvertedLGC
            out_ch, in_per_group = layer.conv.kernel.data.shape[:2]
            retained = in_per_group * out_ch
            dense = layer.in_channels * out_ch
        _record(counter, name, out.data.shape, oh * ow * dense, oh * ow * retained)
    return out


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministically initialize a model from a seed.

    Parameter creation order is fixed, so equal seeds give bit-identical
    parameters. Raises ConfigError on invalid configuration.
    """
    config.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    slope = config.leaky_slope
    lgc_out = config.lgc_expansion * config.growth

    stem = _conv_params(rng, 1, config.stem_channels, 3, 1, 1, 1, slope, dtype)
    blocks = []
    running = config.stem_channels
    for b in range(config.num_blocks):
        block = []
        for l in range(config.layers_per_block):
            expected = config.channels_into(b, l)
            if running != expected:
                raise ConfigError(
                    f"channel bookkeeping broken at block {b} layer {l}: {running} != {expected}"
                )
            lgc = CondensingConv.create(running, lgc_out, config.groups,
                                        config.condense_factor, rng, dtype,
                                        bias=True, leaky_slope=slope)
            conv = _conv_params(rng, lgc_out, config.growth, 3, 1, 1,
                                config.groups, slope, dtype)
            block.append(DenseLayer(lgc, conv))
            running += config.growth
        blocks.append(block)
    bottleneck = _conv_params(rng, running, config.bottleneck_channels, 1, 1, 0, 1, slope, dtype)

    deconvs = []
    in_ch = config.bottleneck_channels
    for kernel, stride, padding in config.deconv_specs():
        weight = _kaiming_kernel(rng, in_ch, config.deconv_channels, kernel, kernel, slope, dtype)
        bias = np.zeros(config.deconv_channels, dtype=dtype)
        deconvs.append(ConvParams(
            Tensor(weight, requires_grad=True),
            Tensor(bias, requires_grad=True),
            stride=stride, padding=padding, groups=1,
        ))
        in_ch = config.deconv_channels
    recon = _conv_params(rng, in_ch, 1, 3, 1, 1, 1, slope, dtype)
    # Damp the reconstruction layer so the residual branch starts small and
    # the untrained model behaves nearly like bicubic upscaling.
    recon.kernel.data *= 0.1
    return Model(config, stem, blocks, bottleneck, deconvs, recon)


def zero_parameters(model: Model) -> Model:
    """Zero every parameter in place; the forward then reduces to bicubic."""
    for tensor in model.named_parameters().values():
        tensor.data[...] = 0.0
    return model
