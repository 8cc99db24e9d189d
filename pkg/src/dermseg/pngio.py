"""Raster file formats.

* images: 8-bit RGB PNG (other common photo formats are accepted on read)
* masks: 8-bit single-channel PNG with values {0, 255}
* probability maps: 16-bit single-channel PNG, linear [0, 1] -> [0, 65535]

Readers are pure; writers must not interleave on the same path.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .errors import DataError, ValidationError
from .rasters import BinaryMask, Image, ProbabilityMap

PROBMAP_SCALE = 65535


def _open(path: str | Path) -> PILImage.Image:
    try:
        return PILImage.open(path)
    except FileNotFoundError as e:
        raise DataError(f"file not found: {path}") from e
    except UnidentifiedImageError as e:
        raise DataError(f"unsupported or corrupt image file: {path}") from e


def read_image(path: str | Path) -> Image:
    """Decode a color photograph; converts any supported mode to RGB."""
    with _open(path) as im:
        rgb = im.convert("RGB")
        return Image(np.asarray(rgb, dtype=np.uint8))


def read_mask(path: str | Path) -> BinaryMask:
    """Decode an 8-bit {0, 255} mask file; 0 -> 0, 255 -> 1."""
    with _open(path) as im:
        if im.mode == "1":
            im = im.convert("L")
        if im.mode != "L":
            raise DataError(f"mask must be 8-bit single-channel, got mode {im.mode!r}: {path}")
        a = np.asarray(im, dtype=np.uint8)
    bad = np.setdiff1d(np.unique(a), [0, 255])
    if bad.size:
        raise ValidationError(f"non-binary mask values {bad.tolist()} in {path}")
    return BinaryMask((a == 255).astype(np.uint8))


def read_probmap_raw(path: str | Path) -> np.ndarray:
    """The quantized uint16 grid of a probability-map file."""
    with _open(path) as im:
        if im.mode not in ("I;16", "I"):
            raise DataError(f"probability map must be 16-bit grayscale, got mode {im.mode!r}: {path}")
        a = np.asarray(im)
    if a.max(initial=0) > PROBMAP_SCALE or a.min(initial=0) < 0:
        raise DataError(f"probability-map values outside 16-bit range in {path}")
    return a.astype(np.uint16)


def read_probmap(path: str | Path) -> ProbabilityMap:
    """Decode a 16-bit map file: value v -> v / 65535."""
    raw = read_probmap_raw(path)
    return ProbabilityMap((raw.astype(np.float64) / PROBMAP_SCALE).astype(np.float32))


def quantize_probmap(pm: ProbabilityMap) -> np.ndarray:
    """Round a map to the uint16 grid used on disk."""
    return np.rint(pm.data.astype(np.float64) * PROBMAP_SCALE).astype(np.uint16)


def write_image(img: Image, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(img.data, mode="RGB").save(path, format="PNG")


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(mask.data * np.uint8(255), mode="L").save(path, format="PNG")


def write_probmap(pm: ProbabilityMap, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(quantize_probmap(pm)).save(path, format="PNG")


def write_probmap_raw(raw: np.ndarray, path: str | Path) -> None:
    """Write an already-quantized uint16 grid."""
    if raw.dtype != np.uint16 or raw.ndim != 2:
        raise ValidationError(f"raw probability grid must be 2-D uint16, got {raw.dtype} {raw.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(raw).save(path, format="PNG")
