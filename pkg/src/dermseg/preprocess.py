"""Resizing and per-base-model normalization schemes.

Resizing uses the half-pixel-center convention: output pixel i samples the
input at (i + 0.5) * n_in / n_out - 0.5, with edge clamping. Binary masks
are always resized nearest-neighbor so they stay binary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .rasters import BinaryMask, Image, NormalizedImage, ProbabilityMap

LESION_TARGET = (192, 256)
ATTRIBUTE_TARGET = (384, 576)


@dataclass(frozen=True)
class NormalizationConstants:
    """Channel statistics used by the normalization schemes (config-overridable)."""

    channel_mean: tuple[float, float, float] = (123.68, 116.779, 103.939)
    unit_mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    unit_std: tuple[float, float, float] = (0.229, 0.224, 0.225)


DEFAULT_CONSTANTS = NormalizationConstants()


def _sample_coords(n_out: int, n_in: int) -> np.ndarray:
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def _bilinear(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Separable bilinear resample of a float64 (H, W[, C]) array."""
    ys = np.clip(_sample_coords(h, arr.shape[0]), 0.0, arr.shape[0] - 1)
    xs = np.clip(_sample_coords(w, arr.shape[1]), 0.0, arr.shape[1] - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, arr.shape[0] - 1)
    x1 = np.minimum(x0 + 1, arr.shape[1] - 1)
    wy = (ys - y0).reshape(-1, 1)
    wx = (xs - x0).reshape(1, -1)
    if arr.ndim == 3:
        wy = wy[..., None]
        wx = wx[..., None]
    a00 = arr[y0[:, None], x0[None, :]]
    a01 = arr[y0[:, None], x1[None, :]]
    a10 = arr[y1[:, None], x0[None, :]]
    a11 = arr[y1[:, None], x1[None, :]]
    top = a00 + wx * (a01 - a00)
    bot = a10 + wx * (a11 - a10)
    return top + wy * (bot - top)


def _nearest(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = np.clip(np.floor(_sample_coords(h, arr.shape[0]) + 0.5), 0, arr.shape[0] - 1).astype(np.intp)
    xs = np.clip(np.floor(_sample_coords(w, arr.shape[1]) + 0.5), 0, arr.shape[1] - 1).astype(np.intp)
    return arr[ys[:, None], xs[None, :]]


def resize(raster, h: int, w: int, mode: str | None = None):
    """Resize to exactly (h, w); returns the same raster kind.

    mode is 'bilinear' or 'nearest'; the default is bilinear for images and
    probability maps and nearest for binary masks. Bilinear on a BinaryMask
    is rejected because it would manufacture non-binary values.
    """
    if h < 1 or w < 1:
        raise ValidationError(f"target dimensions must be >= 1, got {(h, w)}")
    if mode not in (None, "bilinear", "nearest"):
        raise ValidationError(f"unknown resize mode: {mode!r}")
    if isinstance(raster, BinaryMask):
        if mode == "bilinear":
            raise ValidationError("bilinear resize is not defined for binary masks")
        return BinaryMask(_nearest(raster.data, h, w))
    if isinstance(raster, ProbabilityMap):
        if mode == "nearest":
            return ProbabilityMap(_nearest(raster.data, h, w))
        return ProbabilityMap(_bilinear(raster.data.astype(np.float64), h, w).astype(np.float32))
    if isinstance(raster, Image):
        if mode == "nearest":
            return Image(_nearest(raster.data, h, w))
        out = _bilinear(raster.data.astype(np.float64), h, w)
        return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))
    raise ValidationError(f"cannot resize object of type {type(raster).__name__}")


def normalize(
    image: Image,
    scheme: str,
    constants: NormalizationConstants = DEFAULT_CONSTANTS,
) -> NormalizedImage:
    """Apply one normalization scheme.

    channel_mean_subtract: x - mean_c        (raw intensity scale)
    mean_std:              (x/255 - m_c)/s_c
    symmetric_unit:        x/127.5 - 1
    unit:                  x/255
    """
    x = image.data.astype(np.float64)
    if scheme == "channel_mean_subtract":
        out = x - np.asarray(constants.channel_mean)
    elif scheme == "mean_std":
        out = (x / 255.0 - np.asarray(constants.unit_mean)) / np.asarray(constants.unit_std)
    elif scheme == "symmetric_unit":
        out = x / 127.5 - 1.0
    elif scheme == "unit":
        out = x / 255.0
    else:
        raise ValidationError(f"unknown normalization scheme: {scheme!r}")
    return NormalizedImage(out.astype(np.float32), scheme)


def denormalize(
    nimg: NormalizedImage,
    constants: NormalizationConstants = DEFAULT_CONSTANTS,
) -> np.ndarray:
    """Invert normalize(); returns float64 values on the 0..255 scale."""
    y = nimg.data.astype(np.float64)
    if nimg.scheme == "channel_mean_subtract":
        return y + np.asarray(constants.channel_mean)
    if nimg.scheme == "mean_std":
        return (y * np.asarray(constants.unit_std) + np.asarray(constants.unit_mean)) * 255.0
    if nimg.scheme == "symmetric_unit":
        return (y + 1.0) * 127.5
    return y * 255.0


def task_resize_target(task: str) -> tuple[int, int]:
    """(height, width) the given task trains and predicts at."""
    if task == "lesion":
        return LESION_TARGET
    if task == "attribute":
        return ATTRIBUTE_TARGET
    raise ValidationError(f"unknown task: {task!r} (expected 'lesion' or 'attribute')")
