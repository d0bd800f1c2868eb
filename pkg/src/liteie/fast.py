"""Compiled float32 inference path used by the CLI and the benchmarks."""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .enhance import EnhanceConfig
from .net import Weights

__all__ = ["FastPipeline", "enhance_fast"]


class FastPipeline:
    """Preallocated pipeline for repeated inference at one resolution.

    ``parallel=True`` splits every pass across image rows. Rows are computed
    independently with the same instruction sequence, so both modes give
    bit-identical output.
    """

    def __init__(self, weights: Weights, height: int, width: int,
                 cfg: EnhanceConfig = EnhanceConfig(), parallel: bool = False):
        self.cfg = cfg
        self.parallel = parallel
        self.kernels = [np.ascontiguousarray(k, dtype=np.float32) for k in weights.kernels]
        self.biases = [np.ascontiguousarray(b, dtype=np.float32) for b in weights.biases]
        widths = weights.topology.channel_widths
        self._mid = [np.empty((c, height, width), np.float32) for c in widths[1:-1]]
        self._phi = [np.empty((3, height, width), np.float32) for _ in range(3)]
        self.shape = (3, height, width)

    def _apply_F(self, x, out, act):
        conv = K._conv_parallel if self.parallel else K._conv_serial
        z = x
        last = len(self.kernels) - 1
        for j, (k, b) in enumerate(zip(self.kernels, self.biases)):
            dst = out if j == last else self._mid[j]
            conv(z, k, b, dst, act if j == last else 0)
            z = dst

    def run(self, image32: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if image32.shape != self.shape or image32.dtype != np.float32:
            raise ValueError(f"expected float32 {self.shape}, got {image32.dtype} {image32.shape}")
        p1, p2, p3 = self._phi
        self._apply_F(image32, p1, 1)
        self._apply_F(p1, p2, 1)
        self._apply_F(p2, p3, 2)
        if out is None:
            out = np.empty_like(image32)
        a1, a2, a3 = (np.float32(a) for a in self.cfg.irm_alphas)
        it = K._iterate_parallel if self.parallel else K._iterate_serial
        it(image32, p1, p2, p3, out, a1, a2, a3, self.cfg.iterations,
           self.cfg.irm_enabled, self.cfg.clamp_output)
        return out


def enhance_fast(weights: Weights, image: np.ndarray, cfg: EnhanceConfig = EnhanceConfig(),
                 parallel: bool = False) -> np.ndarray:
    img32 = np.ascontiguousarray(image, dtype=np.float32)
    pipe = FastPipeline(weights, img32.shape[1], img32.shape[2], cfg, parallel)
    return pipe.run(img32)
