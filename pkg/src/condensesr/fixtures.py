"""Deterministic synthetic fixture images for tests and the --toy preset.

The generator draws anti-aliased geometric shapes, gratings and smooth
shading at 4x supersampling, then box-averages down, giving small images
with the sharp-edge content that makes super-resolution learnable. All
content is procedurally generated here, so the set is trivially
redistributable and bit-identical across runs for a fixed seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import write_png

FIXTURE_SIZE = 128
SUPERSAMPLE = 4


def _render_rgb(rng: np.random.Generator, size: int = FIXTURE_SIZE) -> np.ndarray:
    n = size * SUPERSAMPLE
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) / (n - 1)
    img = np.empty((n, n, 3))

    # Smooth shaded background with a gentle per-channel tint.
    ga, gb = rng.uniform(-1, 1, size=2)
    base = 110.0 + 60.0 * (ga * xx + gb * yy)
    for c in range(3):
        img[..., c] = base + rng.uniform(-25, 25)

    # Dense high-contrast structure: bicubic upscaling struggles on these
    # edges, which is exactly what makes the set trainable at desk scale.
    for _ in range(int(rng.integers(18, 28))):
        kind = rng.integers(0, 4)
        color = rng.uniform(5, 250, size=3)
        cx, cy = rng.uniform(0.05, 0.95, size=2)
        if kind == 0:  # ellipse
            rx, ry = rng.uniform(0.03, 0.2, size=2)
            mask = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 < 1.0
        elif kind == 1:  # axis-aligned rectangle
            w, h = rng.uniform(0.04, 0.25, size=2)
            mask = (np.abs(xx - cx) < w / 2) & (np.abs(yy - cy) < h / 2)
        elif kind == 2:  # thin line at a random angle
            theta = rng.uniform(0, np.pi)
            t = rng.uniform(0.003, 0.012)
            mask = np.abs((xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)) < t
        else:  # grating patch; frequencies stay below the 2x-downsample Nyquist
            w, h = rng.uniform(0.15, 0.4, size=2)
            inside = (np.abs(xx - cx) < w / 2) & (np.abs(yy - cy) < h / 2)
            freq = rng.uniform(4, 14)
            phase = rng.uniform(0, 2 * np.pi)
            theta = rng.uniform(0, np.pi)
            wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            amp = rng.uniform(35, 75)
            img += (amp * wave)[..., None] * inside[..., None] * rng.uniform(0.5, 1.0, size=3)
            continue
        alpha = rng.uniform(0.8, 1.0)
        img[mask] = (1 - alpha) * img[mask] + alpha * color

    img = img.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return np.clip(img, 0.0, 255.0)


def write_fixture_images(directory, count: int = 8, seed: int = 2024,
                         size: int = FIXTURE_SIZE) -> list:
    """Write ``count`` deterministic images; mixes PNG with one PGM and one PPM."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(i,))))
        rgb = _render_rgb(rng, size=size)
        if i == count - 1:
            path = directory / f"fixture_{i:02d}.pgm"
            _write_netpbm_gray(path, rgb.mean(axis=2))
        elif i == count - 2:
            path = directory / f"fixture_{i:02d}.ppm"
            _write_netpbm_rgb(path, rgb)
        else:
            path = directory / f"fixture_{i:02d}.png"
            write_png(path, rgb)
        paths.append(path)
    return paths


def _write_netpbm_gray(path, arr: np.ndarray) -> None:
    data = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def _write_netpbm_rgb(path, arr: np.ndarray) -> None:
    data = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode())
        fh.write(data.tobytes())


def write_fixture_dataset(root, train_count: int = 8, val_count: int = 2,
                          seed: int = 2024):
    """Train/val directory pair of fixture images; returns (train_dir, val_dir).

    Training images are 192px (nine 64px windows each at the stride-64 patch
    grid), held-out images 128px; ten images total.
    """
    root = Path(root)
    train_dir = root / "train"
    val_dir = root / "val"
    train_dir.mkdir(parents=True, exist_ok=True)
    val_dir.mkdir(parents=True, exist_ok=True)
    write_fixture_images(train_dir, count=train_count, seed=seed, size=192)
    write_fixture_images(val_dir, count=val_count, seed=seed + 1, size=128)
    return train_dir, val_dir
