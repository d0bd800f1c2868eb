"""Figures written next to the CSV/log reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["figure_path", "plot_training_log", "plot_sweep", "plot_eval", "plot_bench"]

_RC = {
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "xtick.top": True,
    "ytick.right": True,
    "legend.frameon": False,
    "savefig.dpi": 150,
}


def figure_path(report_path) -> Path:
    """The figure that accompanies a report: same stem, ``.png`` suffix."""
    return Path(report_path).with_suffix(".png")


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_training_log(records, path, window: int = 50):
    """Per-step loss terms (log scale) with a moving average of the total."""
    steps = np.array([r.step for r in records])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for name, label in (("exposure", "exposure"), ("tv", "EA-TV"), ("mscol", "colour")):
            vals = np.array([getattr(r, name) for r in records])
            ax.plot(steps, np.maximum(vals, 1e-12), lw=0.7, alpha=0.7, label=label)
        total = np.array([r.total for r in records])
        ax.plot(steps, total, color="k", lw=0.5, alpha=0.3)
        if len(total) >= window:
            smooth = np.convolve(total, np.ones(window) / window, mode="valid")
            ax.plot(steps[window - 1:], smooth, color="k", lw=1.5, label=f"total ({window}-step mean)")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8)
        return _save(fig, path)


def plot_sweep(param: str, values: Sequence[float], psnrs: Sequence[float], path,
               ssims: Sequence[float] | None = None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(values, psnrs, "o-", color="C0")
        best = int(np.argmax(psnrs))
        ax.plot([values[best]], [psnrs[best]], "*", ms=14, color="C3")
        ax.set_xlabel(param)
        ax.set_ylabel("PSNR (dB)", color="C0")
        if ssims is not None:
            ax2 = ax.twinx()
            ax2.plot(values, ssims, "s--", color="C1")
            ax2.set_ylabel("SSIM", color="C1")
        return _save(fig, path)


def plot_eval(names: Sequence[str], psnrs: Sequence[float], path):
    finite = [p if np.isfinite(p) else np.nan for p in psnrs]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(names) + 1.5), 3.5))
        ax.bar(range(len(names)), finite, color="C0")
        ax.axhline(np.nanmean(finite), color="k", lw=1, ls="--", label="mean")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("PSNR (dB)")
        ax.legend(fontsize=8)
        return _save(fig, path)


def plot_bench(reports, path):
    """Median latency against megapixels, one line per thread count."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        by_threads: dict[int, list] = {}
        for r in reports:
            by_threads.setdefault(r.threads, []).append(r)
        for threads, rs in sorted(by_threads.items()):
            rs = sorted(rs, key=lambda r: r.height * r.width)
            mp = [r.height * r.width / 1e6 for r in rs]
            ax.plot(mp, [r.median_ms for r in rs], "o-", label=f"{threads} thread(s)")
        ax.set_xlabel("megapixels")
        ax.set_ylabel("median latency (ms)")
        ax.legend(fontsize=8)
        return _save(fig, path)
