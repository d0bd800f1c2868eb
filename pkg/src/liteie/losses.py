"""Unsupervised training losses.

All losses are mean-normalised so their magnitudes do not depend on image
resolution. Every ``*_grad`` companion returns ``(value, gradient)`` where the
gradient is taken with respect to the first argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInput, InvalidArgument, ShapeError

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "chroma_factor",
    "exposure_targets",
    "exposure_loss",
    "exposure_loss_grad",
    "ea_tv_loss",
    "ea_tv_loss_grad",
    "mscol_loss",
    "mscol_loss_grad",
    "mscol_terms",
    "total_loss",
]


@dataclass(frozen=True)
class LossConfig:
    exp_alpha: float = 0.8
    tv_beta: float = 0.4
    lambda_local: float = 1.0
    lambda_global: float = 1.0
    local_window: int = 16

    def __post_init__(self):
        if not 0.0 < self.exp_alpha <= 2.0:
            raise InvalidArgument(f"exp_alpha must be in (0, 2], got {self.exp_alpha}")
        if self.tv_beta < 0 or self.lambda_local < 0 or self.lambda_global < 0:
            raise InvalidArgument("tv_beta and lambda weights must be non-negative")
        if self.local_window < 1:
            raise InvalidArgument(f"local_window must be >= 1, got {self.local_window}")


class LossBreakdown(NamedTuple):
    total: float
    exposure: float
    tv: float
    mscol: float


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) images, got {a.shape}")


def chroma_factor(r0: float, g0: float, b0: float) -> float:
    """``1 - ||(r0, g0, b0) - (1/3, 1/3, 1/3)||``; equals 1 for a neutral colour."""
    ratios = (r0, g0, b0)
    if min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-6:
        raise InvalidArgument(f"channel ratios must be non-negative and sum to 1: {ratios}")
    third = 1.0 / 3.0
    return 1.0 - math.sqrt(sum((c - third) ** 2 for c in ratios))


def exposure_targets(original: np.ndarray, alpha: float) -> np.ndarray:
    """Per-channel mean targets ``alpha * ratio_c * C0`` derived from the input."""
    means = original.mean(axis=(1, 2))
    total = means.sum()
    if not total > 0:
        raise DegenerateInput("original image is all zero; channel ratios are undefined")
    ratios = means / total
    c0 = chroma_factor(*ratios)
    return alpha * ratios * c0


def exposure_loss(enhanced: np.ndarray, original: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    _check_pair(enhanced, original)
    resid = enhanced.mean(axis=(1, 2)) - exposure_targets(original, cfg.exp_alpha)
    return float(np.sum(resid ** 2))


def exposure_loss_grad(enhanced, original, cfg: LossConfig = LossConfig()):
    _check_pair(enhanced, original)
    resid = enhanced.mean(axis=(1, 2)) - exposure_targets(original, cfg.exp_alpha)
    n = enhanced.shape[1] * enhanced.shape[2]
    grad = np.broadcast_to((2.0 * resid / n)[:, None, None], enhanced.shape).copy()
    return float(np.sum(resid ** 2)), grad


def _tv_terms(x: np.ndarray, beta: float):
    dh = x[:, 1:, :] - x[:, :-1, :]
    dw = x[:, :, 1:] - x[:, :, :-1]
    wh = np.exp(-beta * np.abs(dh))
    ww = np.exp(-beta * np.abs(dw))
    return dh, dw, wh, ww


def ea_tv_loss(x: np.ndarray, cfg: LossConfig = LossConfig()) -> float:
    """Edge-aware TV: squared forward differences weighted by ``exp(-beta |d|)``.

    Both directions are summed and divided by the number of map elements. A
    direction with a single row (or column) contributes nothing.
    """
    dh, dw, wh, ww = _tv_terms(x, cfg.tv_beta)
    return float((np.sum(wh * dh * dh) + np.sum(ww * dw * dw)) / x.size)


def ea_tv_loss_grad(x: np.ndarray, cfg: LossConfig = LossConfig()):
    beta = cfg.tv_beta
    dh, dw, wh, ww = _tv_terms(x, beta)
    value = float((np.sum(wh * dh * dh) + np.sum(ww * dw * dw)) / x.size)
    # d/dd [exp(-b|d|) d^2] = exp(-b|d|) d (2 - b|d|)
    gh = wh * dh * (2.0 - beta * np.abs(dh)) / x.size
    gw = ww * dw * (2.0 - beta * np.abs(dw)) / x.size
    grad = np.zeros_like(x)
    grad[:, 1:, :] += gh
    grad[:, :-1, :] -= gh
    grad[:, :, 1:] += gw
    grad[:, :, :-1] -= gw
    return value, grad


def _cells(n: int, win: int) -> tuple[np.ndarray, np.ndarray]:
    starts = np.arange(0, n, win)
    sizes = np.diff(np.append(starts, n))
    return starts, sizes


def _cell_means(x: np.ndarray, win: int):
    rs, rsz = _cells(x.shape[1], win)
    cs, csz = _cells(x.shape[2], win)
    sums = np.add.reduceat(np.add.reduceat(x, rs, axis=1), cs, axis=2)
    counts = np.outer(rsz, csz)
    return sums / counts, rsz, csz


def mscol_terms(enhanced, original, cfg: LossConfig = LossConfig()) -> tuple[float, float]:
    """``(local, global)`` parts of the colour-consistency loss, already weighted."""
    _check_pair(enhanced, original)
    me, _, _ = _cell_means(enhanced, cfg.local_window)
    mo, _, _ = _cell_means(original, cfg.local_window)
    n_cells = me.shape[1] * me.shape[2]
    local = cfg.lambda_local * float(np.sum((me - mo) ** 2)) / n_cells
    g = enhanced.mean(axis=(1, 2))
    glob = cfg.lambda_global * float(np.sum((g - g.mean()) ** 2))
    return local, glob


def mscol_loss(enhanced, original, cfg: LossConfig = LossConfig()) -> float:
    """Local cell-mean agreement with the input plus a gray-world global term.

    The image is tiled into ``local_window``-sized cells (the last row/column
    of cells may be smaller). The global target for every channel is the mean
    of the enhanced image's three channel means.
    """
    local, glob = mscol_terms(enhanced, original, cfg)
    return local + glob


def mscol_loss_grad(enhanced, original, cfg: LossConfig = LossConfig()):
    _check_pair(enhanced, original)
    me, rsz, csz = _cell_means(enhanced, cfg.local_window)
    mo, _, _ = _cell_means(original, cfg.local_window)
    n_cells = me.shape[1] * me.shape[2]
    diff = me - mo
    local = cfg.lambda_local * float(np.sum(diff ** 2)) / n_cells
    per_cell = 2.0 * cfg.lambda_local * diff / (n_cells * np.outer(rsz, csz))
    grad = np.repeat(np.repeat(per_cell, rsz, axis=1), csz, axis=2)

    g = enhanced.mean(axis=(1, 2))
    dev = g - g.mean()
    glob = cfg.lambda_global * float(np.sum(dev ** 2))
    # the mean-of-means term drops out because the deviations sum to zero
    n = enhanced.shape[1] * enhanced.shape[2]
    grad += (2.0 * cfg.lambda_global * dev / n)[:, None, None]
    return local + glob, grad


def total_loss(enhanced, original, phi3, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Sum of the exposure, edge-aware TV (on ``phi3``) and colour losses."""
    e = exposure_loss(enhanced, original, cfg)
    t = ea_tv_loss(phi3, cfg)
    m = mscol_loss(enhanced, original, cfg)
    return LossBreakdown(e + t + m, e, t, m)
