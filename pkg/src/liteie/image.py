"""Image I/O and small geometric helpers.

Images are carried as planar ``float64`` numpy arrays of shape ``(C, H, W)``
with values in ``[0, 1]``. Feature maps use the same layout without the range
restriction.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, InvalidArgument, IoError, NotFound, ShapeError

__all__ = [
    "ImageTensor",
    "as_image",
    "check_image",
    "load_image",
    "load_image_u8",
    "save_image",
    "quantize8",
    "resize_bilinear",
    "crop_offsets",
    "random_crop",
]

# Planar (C, H, W) float array. Kept as a plain ndarray: every operation in
# the package is vectorised numpy, and a wrapper class would only get in the way.
ImageTensor = np.ndarray

PathLike = Union[str, "os.PathLike[str]"]
SeedLike = Union[int, np.random.Generator, None]

_ACCEPTED_FORMATS = {"PNG", "PPM"}


def as_image(data, channels_last: bool = False) -> ImageTensor:
    """Convert array-like pixel data to a planar float64 tensor.

    ``channels_last=True`` accepts the usual ``(H, W, C)`` layout; a 2-D input
    becomes a single-channel image.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None, :, :].copy()
    if arr.ndim != 3:
        raise ShapeError(f"expected a 2-D or 3-D array, got shape {arr.shape}")
    if channels_last:
        arr = np.moveaxis(arr, -1, 0)
    return np.ascontiguousarray(arr)


def check_image(img: ImageTensor, *, in_range: bool = True, channels=None) -> None:
    """Raise if ``img`` violates the tensor invariants."""
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise ShapeError(f"expected a (C, H, W) array, got {getattr(img, 'shape', type(img))}")
    c, h, w = img.shape
    if h < 1 or w < 1:
        raise ShapeError(f"empty image {img.shape}")
    if channels is not None and c != channels:
        raise ShapeError(f"expected {channels} channels, got {c}")
    if c not in (1, 3) and channels is None:
        raise ShapeError(f"images have 1 or 3 channels, got {c}")
    if not np.all(np.isfinite(img)):
        raise InvalidArgument("image contains non-finite values")
    if in_range and (img.min() < 0.0 or img.max() > 1.0):
        raise InvalidArgument("image values must lie in [0, 1]")


def load_image_u8(path: PathLike) -> np.ndarray:
    """Decode a PNG or binary PPM into a ``(3, H, W)`` uint8 array."""
    p = Path(path)
    if not p.is_file():
        raise NotFound(f"no such image: {p}")
    try:
        with Image.open(p) as im:
            if im.format not in _ACCEPTED_FORMATS:
                raise DecodeError(f"{p}: unsupported format {im.format!r} (PNG or PPM only)")
            if im.mode in ("I", "I;16", "I;16B", "F"):
                raise DecodeError(f"{p}: only 8-bit images are supported (mode {im.mode})")
            im.load()
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"{p}: cannot decode image ({exc})") from exc
    return np.ascontiguousarray(np.moveaxis(arr, -1, 0))


def load_image(path: PathLike) -> ImageTensor:
    """Load an image as a 3-channel float tensor in ``[0, 1]``.

    8-bit values are divided by 255; grayscale inputs are replicated across
    the three channels.

    Raises
    ------
    NotFound
        The path does not exist.
    DecodeError
        The bytes are not a decodable 8-bit PNG or PPM.
    """
    return load_image_u8(path).astype(np.float64) / 255.0


def quantize8(img: ImageTensor) -> np.ndarray:
    """Clamp to ``[0, 1]`` and round half up to 8-bit codes."""
    clipped = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def save_image(img: ImageTensor, path: PathLike) -> None:
    """Write ``img`` as an 8-bit file (PNG, or binary PPM for ``.ppm`` paths)."""
    check_image(img, in_range=False)
    codes = quantize8(img)
    if codes.shape[0] == 1:
        pil = Image.fromarray(codes[0], mode="L")
    else:
        pil = Image.fromarray(np.ascontiguousarray(np.moveaxis(codes, 0, -1)), mode="RGB")
    p = Path(path)
    fmt = "PPM" if p.suffix.lower() == ".ppm" else "PNG"
    try:
        pil.save(p, format=fmt)
    except OSError as exc:
        raise IoError(f"cannot write {p}: {exc}") from exc


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: ImageTensor, new_h: int, new_w: int) -> ImageTensor:
    """Bilinear resize with half-pixel-centre alignment and edge clamping."""
    if new_h < 1 or new_w < 1:
        raise InvalidArgument(f"target size must be positive, got {new_h}x{new_w}")
    c, h, w = img.shape
    if (h, w) == (new_h, new_w):
        return np.array(img, dtype=np.float64, copy=True)
    y0, y1, fy = _axis_weights(h, new_h)
    x0, x1, fx = _axis_weights(w, new_w)
    fy = fy[None, :, None]
    fx = fx[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def crop_offsets(height: int, width: int, size: int, rng_state: SeedLike) -> tuple[int, int]:
    """Draw a top-left corner for a ``size`` x ``size`` crop that fits inside the image."""
    if size < 1 or size > min(height, width):
        raise InvalidArgument(f"crop size {size} does not fit a {height}x{width} image")
    rng = _rng(rng_state)
    y = int(rng.integers(0, height - size + 1))
    x = int(rng.integers(0, width - size + 1))
    return y, x


def random_crop(img: ImageTensor, size: int, rng_state: SeedLike) -> ImageTensor:
    """Square crop at a random position; deterministic for an integer seed."""
    _, h, w = img.shape
    y, x = crop_offsets(h, w, size, rng_state)
    return img[:, y:y + size, x:x + size].copy()
