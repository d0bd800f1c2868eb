"""Weight-shared feature extractor.

One operator ``F`` (a chain of 3x3 convolutions with no activation between
them) is applied three times with the same weights::

    phi1 = relu(F(image))
    phi2 = relu(F(phi1))
    phi3 = tanh(F(phi2))

The canonical ``3-1-3`` chain has 58 parameters.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import FormatError, InvalidArgument, IoError, NotFound, ShapeError

__all__ = [
    "NetTopology",
    "REFERENCE_TOPOLOGIES",
    "Weights",
    "FeaturePyramid",
    "param_count",
    "init_weights",
    "conv3x3_same",
    "conv3x3_backward",
    "apply_F",
    "extract_features",
    "serialize_weights",
    "deserialize_weights",
]


@dataclass(frozen=True)
class NetTopology:
    """Channel widths of the convolution chain, e.g. ``(3, 1, 3)``."""

    channel_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(c) for c in self.channel_widths)
        object.__setattr__(self, "channel_widths", widths)
        if len(widths) < 2:
            raise InvalidArgument("a topology needs at least two channel widths")
        if any(c < 1 for c in widths):
            raise InvalidArgument(f"channel widths must be >= 1: {widths}")
        if widths[0] != 3 or widths[-1] != 3:
            raise InvalidArgument(f"topology must start and end with 3 channels: {widths}")

    @classmethod
    def parse(cls, text: "str | NetTopology | Sequence[int]") -> "NetTopology":
        if isinstance(text, NetTopology):
            return text
        if isinstance(text, str):
            try:
                widths = tuple(int(tok) for tok in text.strip().split("-"))
            except ValueError:
                raise InvalidArgument(f"cannot parse topology {text!r}") from None
            return cls(widths)
        return cls(tuple(text))

    @property
    def blocks(self) -> int:
        return len(self.channel_widths) - 1

    def block_shapes(self) -> list[tuple[int, int]]:
        """``(out_ch, in_ch)`` for every convolution in order."""
        w = self.channel_widths
        return [(w[i + 1], w[i]) for i in range(self.blocks)]

    def __str__(self) -> str:
        return "-".join(str(c) for c in self.channel_widths)


# Channel configurations with their published parameter counts.
REFERENCE_TOPOLOGIES = {
    "3-3": 84,
    "3-1-3": 58,
    "3-3-3": 168,
    "3-8-3": 443,
    "3-16-3": 883,
    "3-1-1-3": 68,
    "3-3-3-3": 252,
    "3-8-8-3": 1027,
    "3-16-16-3": 3203,
}


def param_count(topology) -> int:
    """Number of scalars (kernels and biases) in ``F`` for a topology."""
    topo = NetTopology.parse(topology)
    return sum(o * i * 9 + o for o, i in topo.block_shapes())


@dataclass(frozen=True, eq=False)
class Weights:
    """Kernels ``(out, in, 3, 3)`` and biases ``(out,)`` for each block of ``F``."""

    topology: NetTopology
    kernels: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        shapes = self.topology.block_shapes()
        if len(self.kernels) != len(shapes) or len(self.biases) != len(shapes):
            raise ShapeError("block count does not match topology")
        for (o, i), k, b in zip(shapes, self.kernels, self.biases):
            if k.shape != (o, i, 3, 3) or b.shape != (o,):
                raise ShapeError(f"block expects kernel {(o, i, 3, 3)} and bias {(o,)}, "
                                 f"got {k.shape} and {b.shape}")
        for arr in (*self.kernels, *self.biases):
            arr.setflags(write=False)

    @property
    def size(self) -> int:
        return sum(k.size + b.size for k, b in zip(self.kernels, self.biases))

    def flat(self) -> np.ndarray:
        """All parameters as one float64 vector: per block, kernel then bias."""
        parts = []
        for k, b in zip(self.kernels, self.biases):
            parts.append(k.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts).astype(np.float64)

    @classmethod
    def from_flat(cls, topology, values) -> "Weights":
        topo = NetTopology.parse(topology)
        vec = np.asarray(values, dtype=np.float64).ravel()
        if vec.size != param_count(topo):
            raise ShapeError(f"{topo} needs {param_count(topo)} values, got {vec.size}")
        kernels, biases, pos = [], [], 0
        for o, i in topo.block_shapes():
            n = o * i * 9
            kernels.append(vec[pos:pos + n].reshape(o, i, 3, 3).copy())
            pos += n
            biases.append(vec[pos:pos + o].copy())
            pos += o
        return cls(topo, tuple(kernels), tuple(biases))

    @classmethod
    def zeros(cls, topology) -> "Weights":
        topo = NetTopology.parse(topology)
        return cls.from_flat(topo, np.zeros(param_count(topo)))

    def equals(self, other: "Weights") -> bool:
        """Bitwise equality of topology and every parameter."""
        return (self.topology == other.topology
                and np.array_equal(self.flat().view(np.uint64), other.flat().view(np.uint64)))


def init_weights(topology, seed=0) -> Weights:
    """Gaussian kernels (std 0.02), zero biases.

    Values are rounded to float32 so a saved file reproduces them exactly.
    """
    topo = NetTopology.parse(topology)
    rng = np.random.default_rng(seed)
    kernels, biases = [], []
    for o, i in topo.block_shapes():
        k = rng.normal(0.0, 0.02, size=(o, i, 3, 3)).astype(np.float32).astype(np.float64)
        kernels.append(k)
        biases.append(np.zeros(o))
    return Weights(topo, tuple(kernels), tuple(biases))


# -- convolution ---------------------------------------------------------------

def conv3x3_same(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1, zero-padded 3x3 cross-correlation (no kernel flip).

    ``out[o] = bias[o] + sum_i sum_{dy,dx} kernel[o, i, dy, dx] * x[i, y+dy-1, x+dx-1]``
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) feature map, got shape {x.shape}")
    o, i = kernel.shape[:2]
    if kernel.shape != (o, i, 3, 3) or bias.shape != (o,):
        raise ShapeError(f"bad kernel/bias shapes {kernel.shape}, {bias.shape}")
    if x.shape[0] != i:
        raise ShapeError(f"kernel expects {i} input channels, feature map has {x.shape[0]}")
    return _kernels.conv3x3(x, np.ascontiguousarray(kernel, dtype=np.float64),
                            np.ascontiguousarray(bias, dtype=np.float64))


def conv3x3_backward(x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray,
                     need_input_grad: bool = True):
    """Gradients of :func:`conv3x3_same` at input ``x``.

    Returns ``(grad_input, grad_kernel, grad_bias)``; ``grad_input`` is None
    when not requested. The input gradient is itself a 3x3 correlation of
    ``grad_out`` with the spatially flipped, channel-transposed kernel.
    """
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    gk = _kernels.conv3x3_kernel_grad(x, grad_out)
    gb = grad_out.sum(axis=(1, 2))
    gx = None
    if need_input_grad:
        flipped = np.ascontiguousarray(kernel[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = _kernels.conv3x3(grad_out, flipped, np.zeros(kernel.shape[1]))
    return gx, gk, gb


def apply_F(weights: Weights, x: np.ndarray, cache: list | None = None) -> np.ndarray:
    """Run the convolution chain once (identity activation between blocks).

    If ``cache`` is given, the input of every block is appended to it.
    """
    z = np.ascontiguousarray(x, dtype=np.float64)
    for k, b in zip(weights.kernels, weights.biases):
        if cache is not None:
            cache.append(z)
        z = conv3x3_same(z, k, b)
    return z


class FeaturePyramid(NamedTuple):
    phi1: np.ndarray
    phi2: np.ndarray
    phi3: np.ndarray


def extract_features(weights: Weights, image: np.ndarray) -> FeaturePyramid:
    """Three shared-weight applications of ``F``: relu, relu, tanh."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected a 3-channel (3, H, W) image, got {image.shape}")
    phi1 = np.maximum(apply_F(weights, image), 0.0)
    phi2 = np.maximum(apply_F(weights, phi1), 0.0)
    phi3 = np.tanh(apply_F(weights, phi2))
    return FeaturePyramid(phi1, phi2, phi3)


# -- weights file ----------------------------------------------------------------
#
# "LIE1" | u16 version | u16 block_count | u16 width * (block_count + 1) | f32 params
# All integers and floats little-endian.

MAGIC = b"LIE1"
FORMAT_VERSION = 1


def serialize_weights(w: Weights, path) -> None:
    widths = w.topology.channel_widths
    header = MAGIC + struct.pack(f"<HH{len(widths)}H", FORMAT_VERSION, w.topology.blocks, *widths)
    payload = w.flat().astype("<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise IoError(f"cannot write weights to {path}: {exc}") from exc


def deserialize_weights(path) -> Weights:
    p = Path(path)
    if not p.is_file():
        raise NotFound(f"no such weights file: {p}")
    data = p.read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{p}: not a weights file (bad magic)")
    version, blocks = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{p}: unsupported format version {version}")
    head_len = 8 + 2 * (blocks + 1)
    if blocks < 1 or len(data) < head_len:
        raise FormatError(f"{p}: truncated header")
    widths = struct.unpack_from(f"<{blocks + 1}H", data, 8)
    try:
        topo = NetTopology(widths)
    except InvalidArgument as exc:
        raise FormatError(f"{p}: invalid topology in header: {exc}") from exc
    expected = param_count(topo)
    body = data[head_len:]
    if len(body) != 4 * expected:
        raise FormatError(f"{p}: topology {topo} declares {expected} parameters, "
                          f"file holds {len(body) / 4:g}")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{p}: non-finite parameter values")
    return Weights.from_flat(topo, values)
