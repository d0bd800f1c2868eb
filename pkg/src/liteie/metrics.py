"""Full-reference quality metrics: PSNR, SSIM, MAE and MSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgument, ShapeError

__all__ = ["MetricsReport", "psnr", "ssim", "mae_mse", "gaussian_window", "evaluate_pair"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricsReport:
    psnr: float  # dB, inf for identical images
    ssim: float
    mae: float  # 8-bit units
    mse: float  # squared 8-bit units

    def row(self, name: str) -> list:
        return [name, _fmt(self.psnr), _fmt(self.ssim), _fmt(self.mae), _fmt(self.mse)]


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.6f}"


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio for images on the ``[0, 1]`` scale."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def mae_mse(a, b) -> tuple[float, float]:
    """Mean absolute and mean squared error on the 0-255 scale."""
    a, b = _pair(a, b)
    d = 255.0 * a - 255.0 * b
    return float(np.mean(np.abs(d))), float(np.mean(d * d))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' filtering of a (H, W) plane
    rows = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a, b) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), dynamic range 1.

    Only fully-covered window positions are used. Multi-channel inputs are
    scored per channel and averaged.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if min(a.shape[1:]) < SSIM_WINDOW:
        raise InvalidArgument(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    g = gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    scores = []
    for x, y in zip(a, b):
        mx = _filter_valid(x, g)
        my = _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def evaluate_pair(enhanced, reference) -> MetricsReport:
    mae, mse = mae_mse(enhanced, reference)
    return MetricsReport(psnr(enhanced, reference), ssim(enhanced, reference), mae, mse)
