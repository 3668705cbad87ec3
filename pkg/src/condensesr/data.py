"""Image I/O, YCbCr conversion, bicubic resampling and patch extraction.

All planes are float arrays in [0, 255]. Only the luma (Y) channel feeds the
network; chroma is handled by plain bicubic upscaling at application time.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

NETWORK_INPUT_SIZE = 32
PATCH_STRIDE = 64

# ITU-R BT.601 studio swing: Y in [16, 235], Cb/Cr in [16, 240] for 8-bit input.
_RGB_TO_YCBCR = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_TO_RGB = np.linalg.inv(_RGB_TO_YCBCR)


@dataclass
class ImagePlane:
    """Single-channel float image with a role tag (Y, Cb, Cr or gray)."""

    data: np.ndarray
    role: str = "gray"

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def clamped(self) -> "ImagePlane":
        return ImagePlane(np.clip(self.data, 0.0, 255.0), self.role)


@dataclass
class PatchPair:
    """A low-resolution input patch and its high-resolution target."""

    lr: ImagePlane
    hr: ImagePlane
    augmentation: int

    @property
    def scale(self) -> int:
        return self.hr.height // self.lr.height


def _plane_data(plane) -> np.ndarray:
    return plane.data if isinstance(plane, ImagePlane) else np.asarray(plane, dtype=np.float64)


def rgb_to_ycbcr(r, g, b):
    """BT.601 studio-swing RGB -> (Y, Cb, Cr), all planes in [0, 255]."""
    rgb = np.stack([_plane_data(r), _plane_data(g), _plane_data(b)], axis=-1)
    ycc = rgb @ _RGB_TO_YCBCR.T + _YCBCR_OFFSET
    return (
        ImagePlane(ycc[..., 0], "Y"),
        ImagePlane(ycc[..., 1], "Cb"),
        ImagePlane(ycc[..., 2], "Cr"),
    )


def ycbcr_to_rgb(y, cb, cr):
    """Exact inverse of :func:`rgb_to_ycbcr` (before any 8-bit quantization)."""
    ycc = np.stack([_plane_data(y), _plane_data(cb), _plane_data(cr)], axis=-1) - _YCBCR_OFFSET
    rgb = ycc @ _YCBCR_TO_RGB.T
    return rgb[..., 0], rgb[..., 1], rgb[..., 2]


def _cubic_kernel(s: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Cubic convolution kernel (Catmull-Rom for a = -0.5); support |s| < 2."""
    s = np.abs(s)
    s2 = s * s
    s3 = s2 * s
    near = (a + 2.0) * s3 - (a + 3.0) * s2 + 1.0
    far = a * s3 - 5.0 * a * s2 + 8.0 * a * s - 4.0 * a
    return np.where(s <= 1.0, near, np.where(s < 2.0, far, 0.0))


def _axis_taps(n_in: int, n_out: int):
    """4-tap indices and weights mapping an axis of length n_in to n_out.

    Sample centers are aligned; out-of-range taps replicate the edge pixel.
    """
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(pos).astype(np.intp)
    idx = base[:, None] + np.arange(-1, 3)[None, :]
    weights = _cubic_kernel(pos[:, None] - idx)
    idx = np.clip(idx, 0, n_in - 1)
    return idx, weights


def bicubic_resize(plane, out_h: int, out_w: int):
    """Separable cubic-convolution resample to exactly (out_h, out_w).

    Used both to build low-resolution inputs and as the upsampling branch of
    the global residual. Linear in pixel values and exact on constants.
    """
    arr = _plane_data(plane)
    row_idx, row_w = _axis_taps(arr.shape[0], out_h)
    col_idx, col_w = _axis_taps(arr.shape[1], out_w)
    tmp = np.einsum("ok,okw->ow", row_w, arr[row_idx, :])
    out = np.einsum("ok,hok->ho", col_w, tmp[:, col_idx])
    if isinstance(plane, ImagePlane):
        return ImagePlane(out, plane.role)
    return out


def apply_augmentation(arr: np.ndarray, aug_id: int) -> np.ndarray:
    """The five-variant family: identity, horizontal flip, rotations by 90/180/270."""
    if aug_id == 0:
        return arr.copy()
    if aug_id == 1:
        return np.fliplr(arr).copy()
    if aug_id in (2, 3, 4):
        return np.rot90(arr, k=aug_id - 1).copy()
    raise ValueError(f"augmentation id must be in 0..4, got {aug_id}")


def invert_augmentation(arr: np.ndarray, aug_id: int) -> np.ndarray:
    if aug_id == 0:
        return arr.copy()
    if aug_id == 1:
        return np.fliplr(arr).copy()
    if aug_id in (2, 3, 4):
        return np.rot90(arr, k=-(aug_id - 1)).copy()
    raise ValueError(f"augmentation id must be in 0..4, got {aug_id}")


def extract_patches(hr, scale: int, patch_in: int = NETWORK_INPUT_SIZE,
                    stride: int = PATCH_STRIDE) -> list:
    """Cut HR windows of size patch_in*scale at a fixed stride and pair each
    with its bicubic-downsampled LR input, expanded to 5 augmented variants.

    Images smaller than one window yield an empty list.
    """
    arr = _plane_data(hr)
    role = hr.role if isinstance(hr, ImagePlane) else "Y"
    win = patch_in * scale
    h, w = arr.shape
    pairs = []
    if h < win or w < win:
        return pairs
    for top in range(0, h - win + 1, stride):
        for left in range(0, w - win + 1, stride):
            hr_win = arr[top:top + win, left:left + win]
            lr_win = bicubic_resize(hr_win, patch_in, patch_in)
            for aug in range(5):
                pairs.append(
                    PatchPair(
                        lr=ImagePlane(apply_augmentation(lr_win, aug), role),
                        hr=ImagePlane(apply_augmentation(hr_win, aug), role),
                        augmentation=aug,
                    )
                )
    return pairs


def crop_to_multiple(arr: np.ndarray, factor: int) -> np.ndarray:
    """Trim bottom/right so both dimensions divide evenly by ``factor``."""
    h = arr.shape[0] - arr.shape[0] % factor
    w = arr.shape[1] - arr.shape[1] % factor
    return arr[:h, :w]


# ---------------------------------------------------------------------------
# File I/O (8-bit PNG and PGM/PPM via Pillow)

IMAGE_EXTENSIONS = (".png", ".pgm", ".ppm", ".pbm")


def read_image(path) -> np.ndarray:
    """Load an 8-bit image as float64 in [0, 255]; (H, W) gray or (H, W, 3) RGB."""
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "1"):
            img = img.convert("L")
            return np.asarray(img, dtype=np.float64)
        img = img.convert("RGB")
        return np.asarray(img, dtype=np.float64)


def write_png(path, arr: np.ndarray) -> None:
    """Write a [0, 255] float array as 8-bit PNG, rounding and clamping."""
    data = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def image_to_luma(arr: np.ndarray) -> ImagePlane:
    """Y channel of an RGB image, or the image itself if already single-plane."""
    if arr.ndim == 2:
        return ImagePlane(arr.astype(np.float64), "Y")
    y, _, _ = rgb_to_ycbcr(arr[..., 0], arr[..., 1], arr[..., 2])
    return y


def list_images(directory) -> list:
    directory = Path(directory)
    names = [n for n in sorted(os.listdir(directory)) if n.lower().endswith(IMAGE_EXTENSIONS)]
    return [directory / n for n in names]


def load_training_pairs(directories: Iterable, scale: int,
                        patch_in: int = NETWORK_INPUT_SIZE,
                        stride: int = PATCH_STRIDE) -> list:
    """All augmented patch pairs from every image under the given directories."""
    pairs = []
    for directory in directories:
        for path in list_images(directory):
            luma = image_to_luma(read_image(path))
            pairs.extend(extract_patches(luma, scale, patch_in, stride))
    return pairs


def stack_batch(pairs: Sequence[PatchPair], dtype=np.float32):
    """Stack patch pairs into (B, 1, h, w) input and target arrays."""
    lr = np.stack([p.lr.data for p in pairs])[:, None].astype(dtype)
    hr = np.stack([p.hr.data for p in pairs])[:, None].astype(dtype)
    return lr, hr
