"""Reverse-mode gradients, finite-difference checking, Adam and the training loop.

The backward pass is written by hand against the concrete pipeline::

    x0 --F--> pre1 --relu--> phi1 --F--> pre2 --relu--> phi2 --F--> pre3 --tanh--> phi3
    x0, phi1..3 --T x (curve step, restoration)--> out --losses--> L

``F`` shares its weights across the three stages, so its weight gradient is
the sum of three per-stage contributions. The input image gets no gradient.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .enhance import EnhanceConfig
from .errors import DatasetError, DivergenceError, InvalidArgument, ShapeError
from .image import crop_offsets, load_image_u8
from .losses import (
    LossBreakdown,
    LossConfig,
    ea_tv_loss,
    ea_tv_loss_grad,
    exposure_loss,
    exposure_loss_grad,
    mscol_loss,
    mscol_loss_grad,
)
from .net import NetTopology, Weights, apply_F, conv3x3_backward, init_weights, serialize_weights

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainRecord",
    "ALL_TERMS",
    "pipeline_loss",
    "backward_gradients",
    "central_differences",
    "fd_gradients",
    "adam_step",
    "smooth_random_weights",
    "relative_errors",
    "gradient_check",
    "list_images",
    "train",
]

ALL_TERMS = ("exposure", "tv", "mscol")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    patch: int = 256
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    enhance_cfg: EnhanceConfig = field(default_factory=EnhanceConfig)

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidArgument(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch < 3:
            raise InvalidArgument(f"patch must be >= 3, got {self.patch}")


# -- forward / backward --------------------------------------------------------------

class _Forward(NamedTuple):
    losses: LossBreakdown
    out: np.ndarray
    pre: tuple  # pre-activations of the three stages
    phi: tuple
    inputs: tuple  # per stage, the input of every conv block
    gain: np.ndarray
    tanh_phi: tuple | None  # tanh of phi1..3, only when the restoration step is on


def _forward(stage_weights: Sequence[Weights], x0: np.ndarray, cfg: TrainConfig,
             terms=ALL_TERMS, want_grads: bool = False):
    ecfg, lcfg = cfg.enhance_cfg, cfg.loss_cfg
    pre, phi, inputs = [], [], []
    inp = x0
    for s, w in enumerate(stage_weights):
        cache: list = []
        z = apply_F(w, inp, cache)
        p = np.tanh(z) if s == 2 else np.maximum(z, 0.0)
        pre.append(z)
        phi.append(p)
        inputs.append(cache)
        inp = p
    phi1, phi2, phi3 = phi
    tanh_phi = None
    if ecfg.irm_enabled:
        a1, a2, a3 = ecfg.irm_alphas
        tanh_phi = (np.tanh(phi1), np.tanh(phi2), np.tanh(phi3))
        gain = a1 * tanh_phi[0] + a2 * tanh_phi[1] + a3 * tanh_phi[2]
    else:
        gain = np.zeros_like(x0)
    rows = (-1, x0.shape[2])
    out = _kernels.iter_forward(x0.reshape(rows), phi3.reshape(rows), gain.reshape(rows),
                                ecfg.iterations, ecfg.irm_enabled,
                                ecfg.clamp_output).reshape(x0.shape)
    if not want_grads:
        le = exposure_loss(out, x0, lcfg)
        lt = ea_tv_loss(phi3, lcfg)
        lm = mscol_loss(out, x0, lcfg)
    else:
        le, ge = exposure_loss_grad(out, x0, lcfg)
        lt, gt = ea_tv_loss_grad(phi3, lcfg)
        lm, gm = mscol_loss_grad(out, x0, lcfg)
    parts = {"exposure": le, "tv": lt, "mscol": lm}
    total = sum(parts[t] for t in terms)
    fwd = _Forward(LossBreakdown(total, le, lt, lm), out, tuple(pre), tuple(phi),
                   tuple(inputs), gain, tanh_phi)
    if not want_grads:
        return fwd, None
    g_out = np.zeros_like(x0)
    g_phi3 = np.zeros_like(x0)
    if "exposure" in terms:
        g_out += ge
    if "mscol" in terms:
        g_out += gm
    if "tv" in terms:
        g_phi3 += gt
    return fwd, (g_out, g_phi3)


def _backward_F(w: Weights, inputs: list, g: np.ndarray, need_input: bool):
    """Gradient of ``F`` w.r.t. its weights (flat, file order) and its input."""
    parts = [None] * (2 * len(w.kernels))
    for j in range(len(w.kernels) - 1, -1, -1):
        g, gk, gb = conv3x3_backward(inputs[j], w.kernels[j], g, need_input_grad=need_input or j > 0)
        parts[2 * j] = gk.ravel()
        parts[2 * j + 1] = gb
    return np.concatenate(parts), g


def _single_grad(stage_weights, x0, cfg: TrainConfig, terms):
    fwd, (g_out, g_phi3) = _forward(stage_weights, x0, cfg, terms, want_grads=True)
    ecfg = cfg.enhance_cfg
    phi1, phi2, phi3 = fwd.phi
    pre1, pre2, _ = fwd.pre
    rows = (-1, x0.shape[2])
    g_p3, g_gain = _kernels.iter_backward(x0.reshape(rows), phi3.reshape(rows),
                                          fwd.gain.reshape(rows), ecfg.iterations,
                                          ecfg.irm_enabled, ecfg.clamp_output, g_out.reshape(rows))
    g_phi3 = g_phi3 + g_p3.reshape(x0.shape)
    g_phi1 = np.zeros_like(x0)
    g_phi2 = np.zeros_like(x0)
    if ecfg.irm_enabled:
        g_gain = g_gain.reshape(x0.shape)
        a1, a2, a3 = ecfg.irm_alphas
        t1, t2, t3 = fwd.tanh_phi
        g_phi1 += g_gain * a1 * (1.0 - t1 * t1)
        g_phi2 += g_gain * a2 * (1.0 - t2 * t2)
        g_phi3 += g_gain * a3 * (1.0 - t3 * t3)

    per_stage = [None, None, None]
    g_pre3 = g_phi3 * (1.0 - phi3 * phi3)
    per_stage[2], g_in = _backward_F(stage_weights[2], fwd.inputs[2], g_pre3, True)
    g_phi2 += g_in
    g_pre2 = g_phi2 * (pre2 > 0)
    per_stage[1], g_in = _backward_F(stage_weights[1], fwd.inputs[1], g_pre2, True)
    g_phi1 += g_in
    g_pre1 = g_phi1 * (pre1 > 0)
    per_stage[0], _ = _backward_F(stage_weights[0], fwd.inputs[0], g_pre1, False)
    return fwd.losses, per_stage


def _check_batch(batch) -> list[np.ndarray]:
    batch = [np.asarray(b, dtype=np.float64) for b in batch]
    if not batch:
        raise InvalidArgument("batch is empty")
    shape = batch[0].shape
    if len(shape) != 3 or shape[0] != 3:
        raise ShapeError(f"expected (3, H, W) patches, got {shape}")
    for b in batch:
        if b.shape != shape:
            raise ShapeError(f"batch patches differ in shape: {shape} vs {b.shape}")
    return batch


def _stages(weights, stage_weights):
    if stage_weights is None:
        return (weights, weights, weights)
    if len(stage_weights) != 3:
        raise InvalidArgument("stage_weights needs one Weights per stage")
    return tuple(stage_weights)


def pipeline_loss(weights: Weights, batch, cfg: TrainConfig = TrainConfig(),
                  terms=ALL_TERMS, stage_weights=None) -> LossBreakdown:
    """Batch-averaged loss of the full pipeline (forward only).

    ``stage_weights`` overrides the weights used by each of the three stages,
    which lets tests decouple the shared operator.
    """
    batch = _check_batch(batch)
    sw = _stages(weights, stage_weights)
    acc = np.zeros(4)
    for x0 in batch:
        fwd, _ = _forward(sw, x0, cfg, terms)
        acc += np.array(fwd.losses)
    return LossBreakdown(*(acc / len(batch)).tolist())


def backward_gradients(weights: Weights, batch, cfg: TrainConfig = TrainConfig(),
                       terms=ALL_TERMS, stage_weights=None, per_stage: bool = False):
    """Loss and its exact gradient with respect to every parameter.

    Returns ``(losses, grad)`` where ``losses`` is a :class:`LossBreakdown`
    averaged over the batch and ``grad`` is a flat float64 vector in
    :meth:`Weights.flat` order. ``terms`` selects which loss terms enter the
    total. With ``per_stage=True`` the gradient is returned as three vectors,
    one per stage of the shared operator, which sum to the full gradient.
    """
    batch = _check_batch(batch)
    sw = _stages(weights, stage_weights)
    acc = np.zeros(4)
    grads = [np.zeros(w.size) for w in sw]
    for x0 in batch:
        losses, stage_grads = _single_grad(sw, x0, cfg, terms)
        acc += np.array(losses)
        for g, sg in zip(grads, stage_grads):
            g += sg
    n = len(batch)
    losses = LossBreakdown(*(acc / n).tolist())
    grads = [g / n for g in grads]
    if per_stage:
        return losses, grads
    return losses, grads[0] + grads[1] + grads[2]


def central_differences(f: Callable[[np.ndarray], float], theta: np.ndarray,
                        epsilon: float = 1e-4) -> np.ndarray:
    """``(f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)`` for every coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += epsilon
        tm[i] -= epsilon
        grad[i] = (f(tp) - f(tm)) / (2.0 * epsilon)
    return grad


def fd_gradients(weights: Weights, batch, cfg: TrainConfig = TrainConfig(), epsilon: float = 1e-4,
                 terms=ALL_TERMS, stage: int | None = None) -> np.ndarray:
    """Central-difference gradient of :func:`pipeline_loss`.

    ``stage`` (0, 1 or 2) perturbs only the copy of the weights used by that
    stage, leaving the other two fixed.
    """
    batch = _check_batch(batch)
    topo = weights.topology

    def f(theta):
        w = Weights.from_flat(topo, theta)
        sw = None
        if stage is not None:
            sw = [weights, weights, weights]
            sw[stage] = w
        return pipeline_loss(w, batch, cfg, terms, stage_weights=sw).total

    return central_differences(f, weights.flat(), epsilon)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Per-parameter ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def smooth_random_weights(topology, seed) -> Weights:
    """Random weights whose ReLU inputs stay bounded away from zero.

    All blocks but the last use positive kernels and biases, so internal
    activations are strictly positive for non-negative input. The last block
    gives each output channel a random sign shared by its kernel and bias, so
    that channel's pre-activation is sign-definite with magnitude at least
    ``|bias| >= 0.05``. Finite differences then never straddle a ReLU kink,
    while both ReLU branches are still exercised.
    """
    topo = NetTopology.parse(topology)
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    shapes = topo.block_shapes()
    for j, (o, i) in enumerate(shapes):
        k = rng.uniform(0.01, 0.1, size=(o, i, 3, 3))
        b = rng.uniform(0.05, 0.15, size=o)
        if j == len(shapes) - 1:
            sign = rng.choice([-1.0, 1.0], size=o)
            k *= sign[:, None, None, None]
            b *= sign
        kernels.append(k)
        biases.append(b)
    return Weights(topo, tuple(kernels), tuple(biases))


def gradient_check(seed: int, iterations: int = 2, irm: bool = True, size: int = 16,
                   topology="3-1-3", epsilon: float = 1e-4) -> float:
    """Max per-parameter relative error between analytic and FD gradients."""
    rng = np.random.default_rng(seed)
    weights = smooth_random_weights(topology, rng.integers(2 ** 32))
    patch = rng.uniform(0.0, 1.0, size=(3, size, size))
    cfg = TrainConfig(enhance_cfg=EnhanceConfig(iterations=iterations, irm_enabled=irm))
    _, analytic = backward_gradients(weights, [patch], cfg)
    numeric = fd_gradients(weights, [patch], cfg, epsilon)
    return float(relative_errors(analytic, numeric).max())


# -- optimiser ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(weights, grad, state: AdamState, cfg: TrainConfig = TrainConfig()):
    """One bias-corrected Adam update.

    ``weights`` may be a :class:`Weights` or a flat vector; the result has the
    same type.
    """
    theta = weights.flat() if isinstance(weights, Weights) else np.asarray(weights, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ShapeError(f"gradient {grad.shape} / state {state.m.shape} vs parameters {theta.shape}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    m = b1 * state.m + (1.0 - b1) * grad
    v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    theta = theta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    new_state = AdamState(m, v, t)
    if isinstance(weights, Weights):
        return Weights.from_flat(weights.topology, theta), new_state
    return theta, new_state


# -- training loop -----------------------------------------------------------------------

class TrainRecord(NamedTuple):
    step: int
    total: float
    exposure: float
    tv: float
    mscol: float

    def format(self) -> str:
        return (f"{self.step}, {self.total:.10g}, {self.exposure:.10g}, "
                f"{self.tv:.10g}, {self.mscol:.10g}")


IMAGE_SUFFIXES = (".png", ".ppm")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _round32(topology, theta) -> Weights:
    return Weights.from_flat(topology, np.asarray(theta, dtype=np.float32))


def _checkpoint_path(prefix: Path, step: int) -> Path:
    return prefix.with_name(f"{prefix.stem}.step{step:06d}{prefix.suffix or '.lie'}")


def _sample_batch(images: list[np.ndarray], size: int, count: int, rng: np.random.Generator):
    batch = []
    while len(batch) < count:
        for _ in range(100):
            img = images[int(rng.integers(len(images)))]
            y, x = crop_offsets(img.shape[1], img.shape[2], size, rng)
            crop = img[:, y:y + size, x:x + size]
            if crop.any():
                break
        else:
            raise DatasetError("could not draw a non-black training crop in 100 attempts")
        batch.append(crop.astype(np.float64) / 255.0)
    return batch


def train(dataset_dir, topology="3-1-3", cfg: TrainConfig = TrainConfig(), *,
          on_record: Callable[[TrainRecord], None] | None = None,
          checkpoint_prefix=None, checkpoint_every: int = 0):
    """Unsupervised training on random crops of the images in ``dataset_dir``.

    Returns ``(weights, records)``; ``records[k]`` holds the batch loss measured
    before the ``k+1``-th update. Parameters are kept in float64 during
    training and rounded to float32 for checkpoints and the returned weights,
    which therefore match what a saved file reproduces.

    Raises
    ------
    DatasetError
        No decodable image in ``dataset_dir``.
    DivergenceError
        The loss became non-finite; ``exc.step`` is the offending step.
    """
    topo = NetTopology.parse(topology)
    paths = list_images(dataset_dir)
    if not paths:
        raise DatasetError(f"no PNG/PPM images in {dataset_dir}")
    images = [load_image_u8(p) for p in paths]
    size = min(cfg.patch, *(min(im.shape[1:]) for im in images))
    if size < cfg.patch:
        log.warning("patch %d exceeds the smallest image; using %d", cfg.patch, size)
    if size < 3:
        raise DatasetError(f"images too small for training ({size} px)")

    rng = np.random.default_rng(cfg.seed)
    weights = init_weights(topo, int(rng.integers(2 ** 32)))
    theta = weights.flat()
    state = AdamState.fresh(theta.size)
    records: list[TrainRecord] = []
    prefix = Path(checkpoint_prefix) if checkpoint_prefix is not None else None

    for step in range(1, cfg.steps + 1):
        batch = _sample_batch(images, size, cfg.batch_size, rng)
        w = Weights.from_flat(topo, theta)
        losses, grad = backward_gradients(w, batch, cfg)
        if not (np.isfinite(losses.total) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite loss or gradient at step {step}", step)
        rec = TrainRecord(step, *losses)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        theta, state = adam_step(theta, grad, state, cfg)
        if prefix is not None and checkpoint_every > 0 and step % checkpoint_every == 0:
            serialize_weights(_round32(topo, theta), _checkpoint_path(prefix, step))
    if cfg.steps == 0:
        return weights, records
    return _round32(topo, theta), records
