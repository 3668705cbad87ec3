"""Independent reference implementations and gradient-check utilities.

Everything here is deliberately naive (explicit loops, direct formulas) so
it stays independent of the library code paths it checks.
"""

from __future__ import annotations

import numpy as np


def fd_gradient(fn, arrays, wrt, h=1e-5):
    """Central finite-difference gradient of scalar fn(*arrays) w.r.t. arrays[wrt]."""
    work = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    target = work[wrt]
    grad = np.zeros_like(target)
    it = np.nditer(target, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = target[idx]
        target[idx] = orig + h
        fp = float(fn(*work))
        target[idx] = orig - h
        fm = float(fn(*work))
        target[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return grad


def rel_error(analytic, reference):
    """Max absolute difference normalized by the reference's largest magnitude."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    scale = max(float(np.max(np.abs(reference))), 1e-8)
    return float(np.max(np.abs(analytic - reference))) / scale


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct nested-loop grouped convolution."""
    n, c, h, wid = x.shape
    o, ig, kh, kw = w.shape
    og = o // groups
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wid + 2 * padding - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, o, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for oi in range(o):
            g = oi // og
            for yi in range(oh):
                for xi in range(ow):
                    acc = 0.0
                    for ci in range(ig):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += w[oi, ci, ky, kx] * xp[ni, g * ig + ci,
                                                              yi * stride + ky,
                                                              xi * stride + kx]
                    out[ni, oi, yi, xi] = acc
            if b is not None:
                out[ni, oi] += b[oi]
    return out


def naive_conv_transpose2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Scatter-accumulate transposed convolution, kernel (in, out/groups, kh, kw)."""
    n, a, h, wid = x.shape
    _, out_per_group, kh, kw = w.shape
    ag = a // groups
    out_ch = out_per_group * groups
    out_h = stride * (h - 1) + kh - 2 * padding
    out_w = stride * (wid - 1) + kw - 2 * padding
    padded = np.zeros((n, out_ch, out_h + 2 * padding, out_w + 2 * padding), dtype=x.dtype)
    for ni in range(n):
        for ai in range(a):
            g = ai // ag
            for yi in range(h):
                for xi in range(wid):
                    val = x[ni, ai, yi, xi]
                    for bi in range(out_per_group):
                        for ky in range(kh):
                            for kx in range(kw):
                                padded[ni, g * out_per_group + bi,
                                       yi * stride + ky, xi * stride + kx] += val * w[ai, bi, ky, kx]
    out = padded[:, :, padding:padding + out_h, padding:padding + out_w].copy()
    if b is not None:
        out += b.reshape(1, out_ch, 1, 1)
    return out


def naive_psnr(a, b, peak=255.0):
    """Two-pass mean-squared-error PSNR."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    total = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            d = a[i, j] - b[i, j]
            total += d * d
    mse = total / a.size
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def naive_ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03, peak=255.0):
    """Per-window double-loop SSIM with a Gaussian weighting."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    win /= win.sum()
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for i in range(a.shape[0] - window + 1):
        for j in range(a.shape[1] - window + 1):
            wa = a[i:i + window, j:j + window]
            wb = b[i:i + window, j:j + window]
            mu_a = (win * wa).sum()
            mu_b = (win * wb).sum()
            var_a = (win * wa * wa).sum() - mu_a ** 2
            var_b = (win * wb * wb).sum() - mu_b ** 2
            cov = (win * wa * wb).sum() - mu_a * mu_b
            scores.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                          ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return float(np.mean(scores))


def cubic_kernel_value(s, a=-0.5):
    """Direct scalar evaluation of the cubic convolution kernel."""
    s = abs(float(s))
    if s <= 1.0:
        return (a + 2) * s ** 3 - (a + 3) * s ** 2 + 1.0
    if s < 2.0:
        return a * s ** 3 - 5 * a * s ** 2 + 8 * a * s - 4 * a
    return 0.0
