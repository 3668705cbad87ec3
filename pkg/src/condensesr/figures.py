"""Matplotlib figures written next to the delimited reports.

Every report-producing CLI path (train, eval, flops) calls one of these to
drop a PNG beside its CSV / key=value output. Rendering is headless (Agg).
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def save_training_curves(rows, path) -> Path:
    """Loss (log scale) and learning rate per epoch from train-log rows."""
    epochs = [r["epoch"] for r in rows]
    losses = [r["loss"] for r in rows]
    lrs = [r["lr"] for r in rows]
    retained = [r["retained_fraction"] for r in rows]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(epochs, losses, color="tab:blue", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean Charbonnier loss")
        ax.set_yscale("log")
        ax2 = ax.twinx()
        ax2.plot(epochs, lrs, color="tab:orange", label="lr", alpha=0.8)
        ax2.plot(epochs, retained, color="tab:green", label="retained fraction", alpha=0.8)
        ax2.set_ylabel("learning rate / retained fraction")
        ax2.grid(False)
        lines, labels = ax.get_legend_handles_labels()
        lines2, labels2 = ax2.get_legend_handles_labels()
        ax.legend(lines + lines2, labels + labels2, loc="upper right")
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return Path(path)


def save_eval_bars(rows, path) -> Path:
    """Per-image PSNR of the model against the bicubic baseline."""
    def finite(value):
        # Perfect reconstructions report infinite PSNR; cap for display.
        return value if math.isfinite(value) else 99.0

    names = [r["name"] for r in rows]
    model = [finite(r["psnr_model"]) for r in rows]
    bicubic = [finite(r["psnr_bicubic"]) for r in rows]
    x = range(len(names))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        width = 0.38
        ax.bar([i - width / 2 for i in x], bicubic, width, label="bicubic", color="tab:gray")
        ax.bar([i + width / 2 for i in x], model, width, label="model", color="tab:blue")
        ax.set_xticks(list(x))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
        ax.set_ylabel("PSNR (dB)")
        lo = min(bicubic + model)
        hi = max(bicubic + model)
        pad = max(0.5, 0.1 * (hi - lo))
        ax.set_ylim(lo - pad, hi + pad)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return Path(path)


def save_flops_layers(report, path, top: int = 24) -> Path:
    """Horizontal bars of per-layer multiply-adds (largest layers first)."""
    entries = [e for e in report.entries if e.macs_dense > 0]
    entries.sort(key=lambda e: e.macs_retained, reverse=True)
    entries = entries[:top]
    names = [e.name for e in entries][::-1]
    dense = [e.macs_dense / 1e6 for e in entries][::-1]
    retained = [e.macs_retained / 1e6 for e in entries][::-1]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 0.28 * len(entries) + 1.6))
        y = range(len(names))
        ax.barh(y, dense, color="tab:gray", alpha=0.5, label="dense equivalent")
        ax.barh(y, retained, color="tab:blue", label="post-condensation")
        ax.set_yticks(list(y))
        ax.set_yticklabels(names, fontsize=7)
        ax.set_xlabel("multiply-adds (millions)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return Path(path)
