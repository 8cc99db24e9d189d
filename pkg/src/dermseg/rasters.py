"""Core raster types and elementary raster algebra.

All types are thin immutable wrappers around validated numpy arrays:

* Image          -- (H, W, 3) uint8 photograph
* ProbabilityMap -- (H, W) float32 in [0, 1], finite (NaN is a hard error)
* BinaryMask     -- (H, W) uint8 in {0, 1}
* NormalizedImage-- (H, W, 3) float32 plus the normalization scheme tag

The underlying arrays are marked read-only, so instances are safe to share
across workers. All operations here are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError

NORMALIZATION_SCHEMES = ("channel_mean_subtract", "mean_std", "symmetric_unit", "unit")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit interleaved RGB raster, row-major (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data)
        if a.dtype != np.uint8:
            raise ValidationError(f"image data must be uint8, got {a.dtype}")
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValidationError(f"image must have shape (H, W, 3), got {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError("image dimensions must be >= 1")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    """Per-pixel foreground belief in [0, 1], stored as float32."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 2:
            raise ValidationError(f"probability map must be 2-D, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError("probability map dimensions must be >= 1")
        if not np.isfinite(a).all():
            raise ValidationError("probability map contains NaN or Inf")
        lo, hi = float(a.min()), float(a.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"probability values outside [0, 1]: min={lo}, max={hi}")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Strictly binary raster over {0, 1}, uint8."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data)
        if a.dtype == np.bool_:
            a = a.astype(np.uint8)
        if a.dtype != np.uint8:
            raise ValidationError(f"mask data must be uint8 or bool, got {a.dtype}")
        if a.ndim != 2:
            raise ValidationError(f"mask must be 2-D, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError("mask dimensions must be >= 1")
        if a.max(initial=0) > 1:
            raise ValidationError("mask values must be strictly {0, 1}")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def area(self) -> int:
        return int(np.count_nonzero(self.data))


@dataclass(frozen=True, eq=False)
class NormalizedImage:
    """Float image produced by one of the normalization schemes."""

    data: np.ndarray
    scheme: str

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float32)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValidationError(f"normalized image must be (H, W, 3), got {a.shape}")
        if not np.isfinite(a).all():
            raise ValidationError("normalized image contains NaN or Inf")
        if self.scheme not in NORMALIZATION_SCHEMES:
            raise ValidationError(f"unknown normalization scheme: {self.scheme!r}")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ThresholdPair:
    """Marker/mask threshold pair; the marker threshold is the stricter one."""

    t_high: float
    t_low: float

    def __post_init__(self) -> None:
        if not (0.0 < self.t_high < 1.0 and 0.0 < self.t_low < 1.0):
            raise ValidationError(f"thresholds must lie in (0, 1): {self}")
        if self.t_high < self.t_low:
            raise ValidationError(f"t_high must be >= t_low: {self}")


@dataclass(frozen=True)
class LossCoefficients:
    """Smoothing coefficients of the soft-overlap losses."""

    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha < 0.0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0.0:
            raise ValidationError(f"beta must be > 0, got {self.beta}")


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def map_stats(pm: ProbabilityMap) -> tuple[float, float, float]:
    """(min, max, mean) of a probability map; mean accumulated in float64."""
    a = pm.data
    return float(a.min()), float(a.max()), float(a.mean(dtype=np.float64))


def threshold(pm: ProbabilityMap, t: float) -> BinaryMask:
    """Binarize at t with the inclusive convention: pixel = 1 iff value >= t."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {t}")
    return BinaryMask((pm.data >= t).astype(np.uint8))


def pixelwise_multiply(a: ProbabilityMap, b: ProbabilityMap | BinaryMask) -> ProbabilityMap:
    """Elementwise product; with a binary right operand this restricts a to b."""
    _same_shape(a.data, b.data)
    return ProbabilityMap(a.data * b.data.astype(np.float32))
