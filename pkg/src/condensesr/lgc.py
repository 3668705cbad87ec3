"""Learned group convolution: a masked 1x1 convolution pruned in stages.

The layer trains densely while a binary (out, in) mask zeroes pruned
connections. Filter groups are contiguous output-channel blocks; within a
group an input column is either fully kept or fully masked. Each
condensing stage drops the floor(in/condense_factor) columns with the
smallest per-group L1 norm, so after the final stage each group retains
in - (factor-1)*floor(in/factor) columns. A fully condensed layer converts
to an equivalent channel-selection plus grouped convolution for inference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autograd import ConvParams, Tensor, conv2d, index_select_channels, scale
from .errors import ContractError, DimensionError

Array = np.ndarray


class CondensingConv:
    """1x1 convolution with per-group column masking and staged pruning."""

    def __init__(self, weight, bias=None, groups: int = 4, condense_factor: int = 4):
        self.weight = weight if isinstance(weight, Tensor) else Tensor(weight, requires_grad=True)
        if self.weight.data.ndim != 4 or self.weight.data.shape[2:] != (1, 1):
            raise DimensionError(
                f"condensing conv kernel must be (out, in, 1, 1), got {self.weight.data.shape}"
            )
        out_ch, in_ch = self.weight.data.shape[:2]
        if out_ch % groups:
            raise DimensionError(
                f"output channel axis: {out_ch} channels not divisible by {groups} groups"
            )
        if condense_factor < 1:
            raise ContractError(f"condense factor must be >= 1, got {condense_factor}")
        self.bias: Optional[Tensor] = bias
        self.groups = groups
        self.condense_factor = condense_factor
        self.stage = 0
        self.mask = np.ones((out_ch, in_ch), dtype=self.weight.data.dtype)

    @classmethod
    def create(cls, in_channels: int, out_channels: int, groups: int, condense_factor: int,
               rng: np.random.Generator, dtype=np.float32, bias: bool = True,
               leaky_slope: float = 0.1) -> "CondensingConv":
        """Kaiming fan-in initialization adjusted for the LeakyReLU slope."""
        gain = np.sqrt(2.0 / (1.0 + leaky_slope ** 2))
        std = gain / np.sqrt(in_channels)
        weight = rng.normal(0.0, std, size=(out_channels, in_channels, 1, 1)).astype(dtype)
        b = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) if bias else None
        return cls(Tensor(weight, requires_grad=True), b, groups, condense_factor)

    @property
    def in_channels(self) -> int:
        return self.weight.data.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.data.shape[0]

    @property
    def drop_per_stage(self) -> int:
        return self.in_channels // self.condense_factor

    def forward(self, x: Tensor) -> Tensor:
        """Masked dense 1x1 convolution: conv2d with weight * mask."""
        if x.data.shape[1] != self.in_channels:
            raise DimensionError(
                f"input channel axis: expected {self.in_channels} channels, got {x.data.shape[1]}"
            )
        out_ch, in_ch = self.weight.data.shape[:2]
        masked = scale(self.weight, self.mask.reshape(out_ch, in_ch, 1, 1))
        return conv2d(x, ConvParams(masked, self.bias, stride=1, padding=0, groups=1))

    def group_rows(self, group: int) -> slice:
        size = self.out_channels // self.groups
        return slice(group * size, (group + 1) * size)

    def active_columns(self, group: int) -> Array:
        """Indices of input columns still unmasked for a filter group."""
        return np.flatnonzero(self.mask[self.group_rows(group).start] > 0)

    def condense(self) -> None:
        """Mask the lowest-L1 columns of each filter group and advance the stage.

        Per group, the score of column i is the sum of |weight| over the
        group's filters; the floor(in/factor) smallest unmasked columns are
        zeroed (ties resolved toward the lower index). Masked weights are
        set to exactly zero.
        """
        if self.stage >= self.condense_factor - 1:
            raise ContractError(
                f"condense called at stage {self.stage}; only {self.condense_factor - 1} stages allowed"
            )
        drop = self.drop_per_stage
        w = self.weight.data[:, :, 0, 0]
        for g in range(self.groups):
            rows = self.group_rows(g)
            active = self.active_columns(g)
            scores = np.abs(w[rows][:, active]).sum(axis=0)
            # Stable sort keeps ascending column order on ties.
            order = np.argsort(scores, kind="stable")
            doomed = active[order[:drop]]
            self.mask[rows, doomed] = 0
            self.weight.data[rows, doomed] = 0.0
        self.stage += 1

    def group_lasso_penalty(self) -> Tensor:
        """Sum over groups and unmasked columns of the column's Euclidean norm.

        Differentiable with subgradient zero at all-zero columns; masked
        columns contribute nothing and receive no gradient.
        """
        out_ch, in_ch = self.weight.data.shape[:2]
        og = out_ch // self.groups
        w = self.weight.data[:, :, 0, 0]
        wg = (w * self.mask).reshape(self.groups, og, in_ch)
        col_active = self.mask.reshape(self.groups, og, in_ch)[:, 0]
        norms = np.sqrt((wg ** 2).sum(axis=1))  # (groups, in)
        penalty = (norms * col_active).sum()

        weight = self.weight
        if not weight.requires_grad:
            return Tensor(penalty)

        mask = self.mask
        groups = self.groups

        def grad_fn(g):
            safe = np.where(norms > 0, norms, 1.0)
            dcols = wg / safe[:, None, :] * col_active[:, None, :]
            dw = (dcols.reshape(out_ch, in_ch) * mask) * float(g)
            return [(weight, dw.reshape(out_ch, in_ch, 1, 1))]

        return Tensor(penalty, requires_grad=True, _parents=(weight,), _backward=grad_fn)

    def retained_per_group(self):
        return [int(self.active_columns(g).size) for g in range(self.groups)]

    def retained_fraction(self) -> float:
        return float(self.mask.sum() / self.mask.size)

    def convert(self) -> "ConvertedLGC":
        """Turn the fully condensed layer into channel selection + grouped conv."""
        if self.stage != self.condense_factor - 1:
            raise ContractError(
                f"convert requires the final condensing stage ({self.condense_factor - 1}), layer is at {self.stage}"
            )
        og = self.out_channels // self.groups
        kept_per_group = [self.active_columns(g) for g in range(self.groups)]
        kept_count = kept_per_group[0].size
        for g, kept in enumerate(kept_per_group):
            if kept.size != kept_count:
                raise ContractError(
                    f"group {g} retains {kept.size} columns, group 0 retains {kept_count}"
                )
        indices = np.concatenate(kept_per_group)
        new_weight = np.empty((self.out_channels, kept_count, 1, 1), dtype=self.weight.data.dtype)
        for g, kept in enumerate(kept_per_group):
            rows = self.group_rows(g)
            new_weight[rows, :, 0, 0] = self.weight.data[rows, :, 0, 0][:, kept]
        params = ConvParams(Tensor(new_weight), self.bias, stride=1, padding=0, groups=self.groups)
        return ConvertedLGC([int(i) for i in indices], params, self.in_channels)


@dataclass
class ConvertedLGC:
    """Inference form of a condensed layer: gather kept channels, grouped 1x1 conv."""

    indices: list
    conv: ConvParams
    in_channels: int

    def forward(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.in_channels:
            raise DimensionError(
                f"input channel axis: expected {self.in_channels} channels, got {x.data.shape[1]}"
            )
        return conv2d(index_select_channels(x, self.indices), self.conv)
