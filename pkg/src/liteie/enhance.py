"""Iterative curve enhancement and the parameter-free restoration step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, ShapeError
from .net import FeaturePyramid, Weights, extract_features

__all__ = [
    "EnhanceConfig",
    "enhance_step",
    "restore_step",
    "enhance_image",
]


@dataclass(frozen=True)
class EnhanceConfig:
    """Inference settings.

    ``irm_alphas`` weight the three feature maps inside the restoration step.
    The defaults split the weight evenly, which keeps every restoration step
    inside ``[0, 1]`` without needing the clamp.
    """

    iterations: int = 8
    irm_alphas: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    clamp_output: bool = True
    irm_enabled: bool = True

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.irm_alphas)
        object.__setattr__(self, "irm_alphas", alphas)
        if self.iterations < 0:
            raise InvalidArgument(f"iterations must be >= 0, got {self.iterations}")
        if len(alphas) != 3 or not all(np.isfinite(a) and a >= 0 for a in alphas):
            raise InvalidArgument(f"irm_alphas must be three finite non-negative values: {alphas}")


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {a.shape}")


def enhance_step(image: np.ndarray, phi3: np.ndarray) -> np.ndarray:
    """One curve step ``I + phi3 * (I**2 - I)``.

    Negative ``phi3`` brightens, positive darkens. For ``I`` in ``[0, 1]`` and
    ``phi3`` in ``[-1, 1]`` the result stays in ``[0, 1]``.
    """
    _same_shape(image, phi3)
    return image + phi3 * (image * image - image)


def irm_gain(pyr: FeaturePyramid, alphas) -> np.ndarray:
    """``sum_i alpha_i * tanh(phi_i)``; tanh is re-applied to phi3 as well."""
    a1, a2, a3 = alphas
    return a1 * np.tanh(pyr.phi1) + a2 * np.tanh(pyr.phi2) + a3 * np.tanh(pyr.phi3)


def restore_step(enhanced: np.ndarray, pyr: FeaturePyramid, original: np.ndarray,
                 cfg: EnhanceConfig = EnhanceConfig(), *, gain: np.ndarray | None = None) -> np.ndarray:
    """Restoration after one enhancement step.

    ``enhanced + sum_i alpha_i tanh(phi_i) * (enhanced**2 - enhanced) * original``,
    clamped to ``[0, 1]`` when ``cfg.clamp_output`` is set. ``gain`` lets the
    caller pass a precomputed :func:`irm_gain`.
    """
    _same_shape(enhanced, original, pyr.phi1, pyr.phi2, pyr.phi3)
    if gain is None:
        gain = irm_gain(pyr, cfg.irm_alphas)
    out = enhanced + gain * (enhanced * enhanced - enhanced) * original
    if cfg.clamp_output:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def enhance_image(weights: Weights, image: np.ndarray, cfg: EnhanceConfig = EnhanceConfig(),
                  *, backend: str = "numpy") -> np.ndarray:
    """Full pipeline: extract features once, then ``cfg.iterations`` rounds of
    enhancement followed by restoration against the original input.

    ``backend="numba"`` runs the fused float32 kernels used for benchmarking;
    ``"numpy"`` is the float64 reference.
    """
    image = np.asarray(image, dtype=np.float64)
    if backend == "numba":
        from .fast import enhance_fast

        return enhance_fast(weights, image, cfg).astype(np.float64)
    if backend != "numpy":
        raise InvalidArgument(f"unknown backend {backend!r}")
    pyr = extract_features(weights, image)
    gain = irm_gain(pyr, cfg.irm_alphas) if cfg.irm_enabled else None
    cur = image
    for _ in range(cfg.iterations):
        cur = enhance_step(cur, pyr.phi3)
        if cfg.irm_enabled:
            cur = restore_step(cur, pyr, image, cfg, gain=gain)
    if cfg.iterations == 0:
        cur = cur.copy()
    return cur
