"""Dense tensors with tape-based reverse-mode automatic differentiation.

Exactly the operation set the super-resolution network needs: grouped 2-D
convolution, transposed convolution, LeakyReLU, channel concatenation and
selection, elementwise add/scale, and full-tensor reductions. Feature maps
use (batch, channels, height, width) layout, row-major. Operations never
mutate their inputs; gradients are produced by replaying the tape in
topological order from a scalar loss.

Training runs in float32; gradient checks build float64 tensors so central
finite differences are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError

Array = np.ndarray

# Backward closures return (parent, gradient) pairs for the tape walker.
BackwardFn = Callable[[Array], list]


def _as_float_array(data) -> Array:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A numpy array plus the bookkeeping for reverse-mode autodiff.

    ``grad`` is filled in by :meth:`backward` for every tensor on the tape
    whose ``requires_grad`` flag is set (the flag propagates through ops).
    ``data`` is treated as immutable by all operations; only the optimizer
    writes to parameter ``data`` between steps.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_float_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._parents: tuple = tuple(_parents)
        self._backward: Optional[BackwardFn] = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        """A view of the same values, cut off from the tape."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Populate ``grad`` for every requires-grad tensor reachable from here.

        Raises ContractError unless called on a scalar (single-element) loss.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )

        # Iterative post-order DFS; recursion would overflow on deep nets.
        topo: list[Tensor] = []
        seen: set = set()
        stack: list = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        flowing: dict = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            grad = flowing.pop(id(node), None)
            if grad is None:
                continue
            if node.requires_grad:
                node.grad = grad if node.grad is None else node.grad + grad
            if node._backward is None:
                continue
            for parent, pgrad in node._backward(grad):
                key = id(parent)
                if key in flowing:
                    flowing[key] = flowing[key] + pgrad
                else:
                    flowing[key] = pgrad


def _traced(*inputs: Tensor) -> bool:
    return any(t.requires_grad for t in inputs)


def _needs(t: Tensor) -> bool:
    # Worth computing a gradient for: either a leaf parameter or an
    # intermediate that has parents of its own.
    return t.requires_grad or bool(t._parents)


@dataclass
class ConvParams:
    """Weights and geometry of a (possibly grouped) convolution.

    ``kernel`` has shape (out_channels, in_channels_per_group, k_h, k_w).
    ``conv_transpose2d`` reads the same layout as
    (in_channels, out_channels_per_group, k_h, k_w); a convolution and its
    adjoint therefore share one kernel array.
    """

    kernel: Tensor
    bias: Optional[Tensor] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1


def _im2col(x: Array, kh: int, kw: int, stride: int, padding: int):
    """Unfold (N, C, H, W) into (N, C*kh*kw, L) patch columns."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (n, c, oh, ow, kh, kw)
    cols = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * kh * kw, oh * ow), oh, ow


def _col2im(cols: Array, n: int, c: int, h: int, w: int, kh: int, kw: int,
            stride: int, padding: int, oh: int, ow: int) -> Array:
    """Scatter-add (N, C*kh*kw, oh*ow) columns back onto an (N, C, H, W) image."""
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if padding:
        out = np.ascontiguousarray(out[:, :, padding:padding + h, padding:padding + w])
    return out


def _check_conv_geometry(params: ConvParams) -> None:
    kernel = params.kernel.data
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be 4-D, got shape {kernel.shape}")
    if params.stride < 1:
        raise DimensionError(f"stride must be >= 1, got {params.stride}")
    if params.padding < 0:
        raise DimensionError(f"padding must be >= 0, got {params.padding}")
    if params.groups < 1:
        raise DimensionError(f"groups must be >= 1, got {params.groups}")


def conv2d(x: Tensor, params: ConvParams) -> Tensor:
    """Grouped 2-D convolution with zero padding.

    Output group g reads only input group g. Spatial output size is
    floor((H + 2p - k)/s) + 1 per axis.
    """
    _check_conv_geometry(params)
    if x.data.ndim != 4:
        raise DimensionError(f"input must be 4-D (N, C, H, W), got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    out_ch, in_per_group, kh, kw = params.kernel.data.shape
    groups = params.groups
    if out_ch % groups:
        raise DimensionError(
            f"output channel axis: {out_ch} channels not divisible by {groups} groups"
        )
    if c != groups * in_per_group:
        raise DimensionError(
            f"input channel axis: expected {groups * in_per_group} channels, got {c}"
        )
    if h + 2 * params.padding < kh or w + 2 * params.padding < kw:
        raise DimensionError(
            f"spatial axes: kernel {kh}x{kw} does not fit input {h}x{w} with padding {params.padding}"
        )
    if params.bias is not None and params.bias.data.shape != (out_ch,):
        raise DimensionError(
            f"bias axis: expected shape ({out_ch},), got {params.bias.data.shape}"
        )

    og = out_ch // groups
    stride, padding = params.stride, params.padding
    kernel = params.kernel.data
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1

    out = np.empty((n, out_ch, oh, ow), dtype=x.data.dtype)
    cols_per_group = []
    for g in range(groups):
        # Per-group im2col keeps grouped output bit-identical to running
        # G independent convolutions on the channel slices.
        cols, _, _ = _im2col(x.data[:, g * in_per_group:(g + 1) * in_per_group], kh, kw, stride, padding)
        cols_per_group.append(cols)
        w_mat = kernel[g * og:(g + 1) * og].reshape(og, in_per_group * kh * kw)
        out[:, g * og:(g + 1) * og] = np.matmul(w_mat, cols).reshape(n, og, oh, ow)
    if params.bias is not None:
        out += params.bias.data.reshape(1, out_ch, 1, 1)

    inputs = [x, params.kernel] + ([params.bias] if params.bias is not None else [])
    if not _traced(*inputs):
        return Tensor(out)

    x_ref, w_ref, b_ref = x, params.kernel, params.bias

    def grad_fn(g: Array):
        grads = []
        g_groups = g.reshape(n, groups, og, oh * ow)
        if _needs(w_ref):
            dw = np.empty_like(kernel)
            for gi in range(groups):
                # (n, og, L) @ (n, L, R) summed over batch
                dw_mat = np.matmul(g_groups[:, gi], cols_per_group[gi].transpose(0, 2, 1)).sum(axis=0)
                dw[gi * og:(gi + 1) * og] = dw_mat.reshape(og, in_per_group, kh, kw)
            grads.append((w_ref, dw))
        if _needs(x_ref):
            dx = np.empty_like(x_ref.data)
            for gi in range(groups):
                w_mat = kernel[gi * og:(gi + 1) * og].reshape(og, in_per_group * kh * kw)
                dcols = np.matmul(w_mat.T, g_groups[:, gi])
                dx[:, gi * in_per_group:(gi + 1) * in_per_group] = _col2im(
                    dcols, n, in_per_group, h, w, kh, kw, stride, padding, oh, ow)
            grads.append((x_ref, dx))
        if b_ref is not None and _needs(b_ref):
            grads.append((b_ref, g.sum(axis=(0, 2, 3))))
        return grads

    return Tensor(out, requires_grad=True, _parents=tuple(inputs), _backward=grad_fn)


def conv_transpose2d(x: Tensor, params: ConvParams) -> Tensor:
    """Transposed (fractionally strided) convolution, the linear adjoint of conv2d.

    Kernel layout (in_channels, out_channels_per_group, k_h, k_w).
    Output spatial size is stride*(in - 1) + k - 2*padding per axis.
    """
    _check_conv_geometry(params)
    if x.data.ndim != 4:
        raise DimensionError(f"input must be 4-D (N, C, H, W), got shape {x.data.shape}")
    n, c, h, w = x.data.shape
    in_ch, out_per_group, kh, kw = params.kernel.data.shape
    groups = params.groups
    if params.padding >= kh or params.padding >= kw:
        raise DimensionError(
            f"spatial axes: padding {params.padding} must be smaller than kernel {kh}x{kw}"
        )
    if in_ch % groups:
        raise DimensionError(
            f"input channel axis: kernel has {in_ch} input channels, not divisible by {groups} groups"
        )
    if c != in_ch:
        raise DimensionError(f"input channel axis: expected {in_ch} channels, got {c}")
    out_ch = out_per_group * groups
    if params.bias is not None and params.bias.data.shape != (out_ch,):
        raise DimensionError(
            f"bias axis: expected shape ({out_ch},), got {params.bias.data.shape}"
        )

    ig = in_ch // groups
    stride, padding = params.stride, params.padding
    kernel = params.kernel.data
    out_h = stride * (h - 1) + kh - 2 * padding
    out_w = stride * (w - 1) + kw - 2 * padding

    out = np.empty((n, out_ch, out_h, out_w), dtype=x.data.dtype)
    for g in range(groups):
        w_mat = kernel[g * ig:(g + 1) * ig].reshape(ig, out_per_group * kh * kw)
        cols = np.matmul(w_mat.T, x.data[:, g * ig:(g + 1) * ig].reshape(n, ig, h * w))
        out[:, g * out_per_group:(g + 1) * out_per_group] = _col2im(
            cols, n, out_per_group, out_h, out_w, kh, kw, stride, padding, h, w)
    if params.bias is not None:
        out += params.bias.data.reshape(1, out_ch, 1, 1)

    inputs = [x, params.kernel] + ([params.bias] if params.bias is not None else [])
    if not _traced(*inputs):
        return Tensor(out)

    x_ref, w_ref, b_ref = x, params.kernel, params.bias

    def grad_fn(g: Array):
        grads = []
        if _needs(w_ref) or _needs(x_ref):
            ucols = []
            for gi in range(groups):
                cols, _, _ = _im2col(
                    g[:, gi * out_per_group:(gi + 1) * out_per_group], kh, kw, stride, padding)
                ucols.append(cols)  # (n, out_per_group*kh*kw, h*w)
        if _needs(w_ref):
            dw = np.empty_like(kernel)
            for gi in range(groups):
                x_mat = x_ref.data[:, gi * ig:(gi + 1) * ig].reshape(n, ig, h * w)
                dw_mat = np.matmul(x_mat, ucols[gi].transpose(0, 2, 1)).sum(axis=0)
                dw[gi * ig:(gi + 1) * ig] = dw_mat.reshape(ig, out_per_group, kh, kw)
            grads.append((w_ref, dw))
        if _needs(x_ref):
            dx = np.empty_like(x_ref.data)
            for gi in range(groups):
                w_mat = kernel[gi * ig:(gi + 1) * ig].reshape(ig, out_per_group * kh * kw)
                dx[:, gi * ig:(gi + 1) * ig] = np.matmul(w_mat, ucols[gi]).reshape(n, ig, h, w)
            grads.append((x_ref, dx))
        if b_ref is not None and _needs(b_ref):
            grads.append((b_ref, g.sum(axis=(0, 2, 3))))
        return grads

    return Tensor(out, requires_grad=True, _parents=tuple(inputs), _backward=grad_fn)


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise x for x >= 0, slope*x otherwise."""
    mask = x.data >= 0
    out = np.where(mask, x.data, x.data * slope)
    if not _traced(x):
        return Tensor(out)

    def grad_fn(g: Array):
        return [(x, np.where(mask, g, g * slope))]

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=grad_fn)


def concat_channels(*tensors: Tensor) -> Tensor:
    """Concatenate along the channel axis; inputs must agree on N, H, W."""
    if not tensors:
        raise DimensionError("concat_channels needs at least one input")
    first = tensors[0].data
    for t in tensors[1:]:
        for axis, name in ((0, "batch"), (2, "height"), (3, "width")):
            if t.data.shape[axis] != first.shape[axis]:
                raise DimensionError(
                    f"{name} axis mismatch: {t.data.shape[axis]} vs {first.shape[axis]}"
                )
    out = np.concatenate([t.data for t in tensors], axis=1)
    if not _traced(*tensors):
        return Tensor(out)

    widths = [t.data.shape[1] for t in tensors]

    def grad_fn(g: Array):
        grads = []
        offset = 0
        for t, width in zip(tensors, widths):
            if _needs(t):
                grads.append((t, g[:, offset:offset + width]))
            offset += width
        return grads

    return Tensor(out, requires_grad=True, _parents=tensors, _backward=grad_fn)


def index_select_channels(x: Tensor, indices: Sequence[int]) -> Tensor:
    """Pick channels by index; duplicates allowed, order preserved."""
    c = x.data.shape[1]
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        bad = idx[(idx < 0) | (idx >= c)][0]
        raise IndexError(f"channel index {bad} out of range for {c} channels")
    out = x.data[:, idx]
    if not _traced(x):
        return Tensor(out)

    def grad_fn(g: Array):
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), idx), g)
        return [(x, dx)]

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data
    if not _traced(a, b):
        return Tensor(out)

    def grad_fn(g: Array):
        return [(t, g) for t in (a, b) if _needs(t)]

    return Tensor(out, requires_grad=True, _parents=(a, b), _backward=grad_fn)


def scale(x: Tensor, factor) -> Tensor:
    """Multiply by a constant scalar or ndarray (same shape); not a tensor-tensor product."""
    factor = np.asarray(factor, dtype=x.data.dtype) if isinstance(factor, np.ndarray) else factor
    out = x.data * factor
    if out.shape != x.data.shape:
        raise DimensionError(
            f"scale factor of shape {np.shape(factor)} does not match tensor shape {x.data.shape}"
        )
    if not _traced(x):
        return Tensor(out)

    def grad_fn(g: Array):
        return [(x, g * factor)]

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=grad_fn)


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements as a scalar tensor."""
    out = x.data.sum()
    if not _traced(x):
        return Tensor(out)

    def grad_fn(g: Array):
        return [(x, np.full_like(x.data, float(g)))]

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=grad_fn)


def tmean(x: Tensor) -> Tensor:
    """Mean of all elements as a scalar tensor."""
    out = x.data.mean()
    if not _traced(x):
        return Tensor(out)

    inv = 1.0 / x.data.size

    def grad_fn(g: Array):
        return [(x, np.full_like(x.data, float(g) * inv))]

    return Tensor(out, requires_grad=True, _parents=(x,), _backward=grad_fn)
