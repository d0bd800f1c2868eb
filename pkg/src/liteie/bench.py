"""Throughput, latency and FLOPs accounting for the inference pipeline."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numba
import numpy as np

from .enhance import EnhanceConfig
from .errors import InvalidArgument
from .fast import FastPipeline
from .net import NetTopology, Weights

__all__ = ["BenchReport", "CSV_HEADER", "flops_estimate", "time_pipeline", "parse_resolution"]

# per-element FLOP constants for the elementwise stages
CURVE_STEP_FLOPS = 6
RESTORE_STEP_FLOPS = 15

CSV_HEADER = ["topology", "HxW", "T", "flops", "median_ms", "p95_ms", "fps", "threads"]


def flops_estimate(topology, height: int, width: int, iterations: int, irm: bool = True) -> int:
    """FLOPs of one enhancement, counting a multiply-add as 2.

    Convolutions: ``2 * H * W * sum(out * in * 9)`` per application of the
    shared operator, three applications. Elementwise: 6 FLOPs per element
    for each curve step and 15 for each restoration step.
    """
    topo = NetTopology.parse(topology)
    if iterations < 0:
        raise InvalidArgument("iterations must be >= 0")
    px = height * width
    macs = px * sum(o * i * 9 for o, i in topo.block_shapes())
    per_iter = CURVE_STEP_FLOPS + (RESTORE_STEP_FLOPS if irm else 0)
    return 2 * macs * 3 + iterations * per_iter * px * 3


def parse_resolution(text: str) -> tuple[int, int]:
    """``"1920x1080"`` (width x height) -> ``(height, width)``."""
    try:
        w, h = (int(t) for t in text.lower().replace("×", "x").split("x"))
    except ValueError:
        raise InvalidArgument(f"resolution must look like 1920x1080, got {text!r}") from None
    if w < 1 or h < 1:
        raise InvalidArgument(f"resolution must be positive, got {text!r}")
    return h, w


@dataclass(frozen=True)
class BenchReport:
    topology: str
    height: int
    width: int
    iterations: int
    flops: int
    median_ms: float
    p95_ms: float
    runs: int
    threads: int

    @property
    def fps(self) -> float:
        return 1000.0 / self.median_ms

    def row(self) -> list:
        return [self.topology, f"{self.height}x{self.width}", self.iterations, self.flops,
                f"{self.median_ms:.4f}", f"{self.p95_ms:.4f}", f"{self.fps:.3f}", self.threads]


def time_pipeline(weights: Weights, height: int, width: int, cfg: EnhanceConfig = EnhanceConfig(),
                  runs: int = 50, warmup: int = 3, parallel: bool = False,
                  threads: int | None = None, seed: int = 0) -> BenchReport:
    """Time ``runs`` full enhancements of a random image.

    The image and all buffers are allocated before timing starts; only the
    compute path is inside the timed region.
    """
    if runs < 1:
        raise InvalidArgument(f"runs must be >= 1, got {runs}")
    if warmup < 0:
        raise InvalidArgument(f"warmup must be >= 0, got {warmup}")
    image = np.random.default_rng(seed).random((3, height, width), dtype=np.float32)
    pipe = FastPipeline(weights, height, width, cfg, parallel=parallel)
    out = np.empty_like(image)
    prev_threads = numba.get_num_threads()
    n_threads = 1
    if parallel:
        n_threads = min(threads or numba.config.NUMBA_NUM_THREADS, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n_threads)
    try:
        pipe.run(image, out)  # compile outside the timed region
        for _ in range(warmup):
            pipe.run(image, out)
        times = np.empty(runs)
        for r in range(runs):
            t0 = time.perf_counter()
            pipe.run(image, out)
            times[r] = time.perf_counter() - t0
    finally:
        numba.set_num_threads(prev_threads)
    ms = times * 1000.0
    return BenchReport(
        topology=str(weights.topology),
        height=height,
        width=width,
        iterations=cfg.iterations,
        flops=flops_estimate(weights.topology, height, width, cfg.iterations, cfg.irm_enabled),
        median_ms=float(np.median(ms)),
        p95_ms=float(np.percentile(ms, 95)),
        runs=runs,
        threads=n_threads,
    )
