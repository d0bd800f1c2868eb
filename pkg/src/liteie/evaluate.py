"""Directory-level evaluation and hyperparameter sweeps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .enhance import EnhanceConfig, enhance_image
from .errors import DatasetError, InvalidArgument
from .image import load_image
from .metrics import MetricsReport, evaluate_pair
from .net import Weights
from .train import TrainConfig, list_images, train

log = logging.getLogger(__name__)

__all__ = [
    "Pairing",
    "pair_images",
    "evaluate_directory",
    "mean_metrics",
    "parse_grid",
    "apply_param",
    "SweepPoint",
    "sweep",
]


class Pairing(NamedTuple):
    pairs: list[tuple[str, Path, Path]]
    unmatched_low: list[str]
    unmatched_gt: list[str]


def pair_images(low_dir, gt_dir) -> Pairing:
    """Match low-light and reference images by identical file name."""
    low = {p.name: p for p in list_images(low_dir)}
    gt = {p.name: p for p in list_images(gt_dir)}
    names = sorted(low.keys() & gt.keys())
    return Pairing(
        [(n, low[n], gt[n]) for n in names],
        sorted(low.keys() - gt.keys()),
        sorted(gt.keys() - low.keys()),
    )


def evaluate_directory(weights: Weights | None, low_dir, gt_dir,
                       cfg: EnhanceConfig = EnhanceConfig(), backend: str = "numpy",
                       save_dir=None):
    """Enhance every paired low-light image and score it against its reference.

    ``weights=None`` scores the unenhanced inputs. Returns
    ``(rows, pairing)`` with ``rows`` a list of ``(name, MetricsReport)``.
    """
    pairing = pair_images(low_dir, gt_dir)
    if not pairing.pairs:
        raise DatasetError(f"no matching file names between {low_dir} and {gt_dir}")
    for name in pairing.unmatched_low + pairing.unmatched_gt:
        log.warning("unmatched image %s", name)
    rows = []
    for name, low_path, gt_path in pairing.pairs:
        low = load_image(low_path)
        ref = load_image(gt_path)
        if low.shape != ref.shape:
            raise DatasetError(f"{name}: low {low.shape} and reference {ref.shape} differ in size")
        out = low if weights is None else enhance_image(weights, low, cfg, backend=backend)
        if save_dir is not None:
            from .image import save_image

            save_image(out, Path(save_dir) / name)
        rows.append((name, evaluate_pair(out, ref)))
    return rows, pairing


def mean_metrics(rows) -> MetricsReport:
    reports = [r for _, r in rows]
    return MetricsReport(
        float(np.mean([r.psnr for r in reports])),
        float(np.mean([r.ssim for r in reports])),
        float(np.mean([r.mae for r in reports])),
        float(np.mean([r.mse for r in reports])),
    )


_GRID_KEYS = ("alpha", "beta", "iters", "lr")


def parse_grid(text: str) -> tuple[str, list[float]]:
    """``"alpha=0.4:1.2:0.2"`` (inclusive range) or ``"beta=0.2,0.4"``."""
    if "=" not in text:
        raise InvalidArgument(f"grid must look like alpha=0.4:1.2:0.2, got {text!r}")
    key, body = text.split("=", 1)
    key = key.strip()
    if key not in _GRID_KEYS:
        raise InvalidArgument(f"unknown sweep parameter {key!r}; choose from {', '.join(_GRID_KEYS)}")
    try:
        if ":" in body:
            start, stop, step = (float(t) for t in body.split(":"))
            if step <= 0 or stop < start:
                raise InvalidArgument(f"bad range {body!r}")
            n = int(round((stop - start) / step)) + 1
            values = [round(start + i * step, 10) for i in range(n)]
        else:
            values = [float(t) for t in body.split(",")]
    except ValueError:
        raise InvalidArgument(f"cannot parse grid values {body!r}") from None
    return key, values


def apply_param(cfg: TrainConfig, key: str, value: float) -> TrainConfig:
    if key == "alpha":
        return replace(cfg, loss_cfg=replace(cfg.loss_cfg, exp_alpha=value))
    if key == "beta":
        return replace(cfg, loss_cfg=replace(cfg.loss_cfg, tv_beta=value))
    if key == "iters":
        return replace(cfg, enhance_cfg=replace(cfg.enhance_cfg, iterations=int(value)))
    if key == "lr":
        return replace(cfg, learning_rate=value)
    raise InvalidArgument(f"unknown sweep parameter {key!r}")


@dataclass(frozen=True)
class SweepPoint:
    param: str
    value: float
    psnr: float
    ssim: float
    final_loss: float


def sweep(key: str, values, data_dir, gt_dir, eval_low_dir=None, topology="3-1-3",
          base: TrainConfig = TrainConfig(steps=500),
          on_point: Callable[[SweepPoint], None] | None = None) -> list[SweepPoint]:
    """Train one model per value and report its mean PSNR/SSIM on the eval pairs.

    Every point uses the same seed, so points differ only in the swept value.
    """
    eval_low_dir = eval_low_dir or data_dir
    if not pair_images(eval_low_dir, gt_dir).pairs:
        raise DatasetError(f"no evaluation pairs between {eval_low_dir} and {gt_dir}")
    points = []
    for v in values:
        cfg = apply_param(base, key, v)
        weights, records = train(data_dir, topology, cfg)
        rows, _ = evaluate_directory(weights, eval_low_dir, gt_dir, cfg.enhance_cfg)
        m = mean_metrics(rows)
        final = records[-1].total if records else float("nan")
        point = SweepPoint(key, v, m.psnr, m.ssim, final)
        points.append(point)
        if on_point is not None:
            on_point(point)
    return points
