"""Test-time augmentation and prediction ensembling.

Each test image is expanded into five variants in fixed order: the
original, horizontal flip, vertical flip, a contrast-enhanced 90-degree
(counter-clockwise) rotation, and a sharpened copy. Predictions are mapped
back through the geometric inverses (the photometric variants need none)
and averaged. With F folds per model this yields F x 5 predictions per
image per model; model ensembles average the per-model maps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .augment import PhotometricParams, apply_photometric
from .errors import DimensionError, PredictorContractError, ValidationError
from .preprocess import NormalizationConstants, DEFAULT_CONSTANTS, normalize
from .rasters import Image, NormalizedImage, ProbabilityMap

TTA_KINDS = ("identity", "hflip", "vflip", "rot90_contrast", "sharpen")
TTA_CONTRAST_DEFAULT = 0.5
TTA_UNSHARP_DEFAULT = 0.5
NUM_FOLDS_EXPECTED = 5


@runtime_checkable
class Predictor(Protocol):
    """Pluggable probability-map model.

    predict() must be deterministic and return a map with the same spatial
    dimensions as its input. Predictors with wants_normalized = False are
    handed the raw (already resized/TTA-transformed) 8-bit image instead of
    the normalized float image and own their preprocessing.
    """

    wants_normalized: bool

    def predict(
        self, image: NormalizedImage | Image, case_id: str | None = None
    ) -> ProbabilityMap: ...


def tta_expand(
    image: Image,
    contrast: float = TTA_CONTRAST_DEFAULT,
    unsharp: float = TTA_UNSHARP_DEFAULT,
) -> list[tuple[str, Image]]:
    """The five (kind, variant) pairs, in fixed order."""
    rot = Image(np.ascontiguousarray(np.rot90(image.data, k=1)))
    return [
        ("identity", image),
        ("hflip", Image(np.ascontiguousarray(image.data[:, ::-1]))),
        ("vflip", Image(np.ascontiguousarray(image.data[::-1, :]))),
        ("rot90_contrast", apply_photometric(rot, PhotometricParams(contrast_delta=contrast))),
        ("sharpen", apply_photometric(image, PhotometricParams(sharpness=unsharp))),
    ]


def tta_inverse(pred: ProbabilityMap, kind: str) -> ProbabilityMap:
    """Undo the geometric part of a variant on its prediction map."""
    if kind in ("identity", "sharpen"):
        return pred
    if kind == "hflip":
        return ProbabilityMap(np.ascontiguousarray(pred.data[:, ::-1]))
    if kind == "vflip":
        return ProbabilityMap(np.ascontiguousarray(pred.data[::-1, :]))
    if kind == "rot90_contrast":
        return ProbabilityMap(np.ascontiguousarray(np.rot90(pred.data, k=-1)))
    raise ValidationError(f"unknown TTA kind {kind!r}")


def tta_merge(preds: Sequence[ProbabilityMap], kinds: Sequence[str]) -> ProbabilityMap:
    """Invert each prediction's transform and average pixelwise."""
    if len(preds) != len(kinds):
        raise DimensionError(f"{len(preds)} maps but {len(kinds)} tags")
    if not preds:
        raise ValidationError("nothing to merge")
    restored = [tta_inverse(p, k).data for p, k in zip(preds, kinds)]
    shapes = {a.shape for a in restored}
    if len(shapes) != 1:
        raise DimensionError(f"inverse-transformed maps disagree on shape: {sorted(shapes)}")
    mean = np.mean(np.stack(restored), axis=0, dtype=np.float64)
    return ProbabilityMap(np.clip(mean, 0.0, 1.0).astype(np.float32))


@dataclass
class PredictionAudit:
    """Counts every raw predictor invocation, keyed by case."""

    calls: dict[str, int] = field(default_factory=dict)

    def record(self, case_id: str | None, n: int = 1) -> None:
        key = case_id or ""
        self.calls[key] = self.calls.get(key, 0) + n

    def count(self, case_id: str | None = None) -> int:
        return self.calls.get(case_id or "", 0)


def _predict_variants(
    predictor: Predictor,
    variants: list[tuple[str, Image]],
    scheme: str,
    constants: NormalizationConstants,
    case_id: str | None,
    audit: PredictionAudit | None,
) -> list[ProbabilityMap]:
    wants_norm = getattr(predictor, "wants_normalized", True)
    inputs: list[NormalizedImage | Image] = [
        normalize(img, scheme, constants) if wants_norm else img for _, img in variants
    ]
    batch = getattr(predictor, "predict_batch", None)
    if batch is not None:
        preds = batch(inputs, case_id)
        if len(preds) != len(inputs):
            raise PredictorContractError(
                f"predictor returned {len(preds)} maps for a batch of {len(inputs)}"
            )
    else:
        preds = [predictor.predict(x, case_id) for x in inputs]
    if audit is not None:
        audit.record(case_id, len(inputs))
    for (kind, img), pred in zip(variants, preds):
        if (pred.height, pred.width) != (img.height, img.width):
            raise PredictorContractError(
                f"predictor output {pred.data.shape} does not match the "
                f"{kind} variant dimensions {(img.height, img.width)}"
            )
    return list(preds)


def predict_with_tta(
    predictor: Predictor,
    image: Image,
    scheme: str = "unit",
    constants: NormalizationConstants = DEFAULT_CONSTANTS,
    kinds: Sequence[str] = TTA_KINDS,
    contrast: float = TTA_CONTRAST_DEFAULT,
    unsharp: float = TTA_UNSHARP_DEFAULT,
    case_id: str | None = None,
    audit: PredictionAudit | None = None,
) -> ProbabilityMap:
    """expand -> preprocess each variant -> predict -> inverse -> average.

    kinds selects a subset of the five variants (e.g. ("identity",) to
    disable TTA for fixture playback).
    """
    unknown = set(kinds) - set(TTA_KINDS)
    if unknown:
        raise ValidationError(f"unknown TTA kinds: {sorted(unknown)}")
    if not kinds:
        raise ValidationError("at least one TTA variant is required")
    chosen = [v for v in tta_expand(image, contrast, unsharp) if v[0] in set(kinds)]
    preds = _predict_variants(predictor, chosen, scheme, constants, case_id, audit)
    return tta_merge(preds, [k for k, _ in chosen])


def ensemble_mean(maps: Sequence[ProbabilityMap]) -> ProbabilityMap:
    """Uniform pixelwise mean of aligned probability maps."""
    if not maps:
        raise ValidationError("cannot ensemble an empty list")
    shapes = {m.data.shape for m in maps}
    if len(shapes) != 1:
        raise DimensionError(f"maps disagree on shape: {sorted(shapes)}")
    mean = np.mean(np.stack([m.data for m in maps]), axis=0, dtype=np.float64)
    return ProbabilityMap(np.clip(mean, 0.0, 1.0).astype(np.float32))


def fold_ensemble(
    predictors: Sequence[Predictor],
    image: Image,
    scheme: str = "unit",
    constants: NormalizationConstants = DEFAULT_CONSTANTS,
    kinds: Sequence[str] = TTA_KINDS,
    contrast: float = TTA_CONTRAST_DEFAULT,
    unsharp: float = TTA_UNSHARP_DEFAULT,
    case_id: str | None = None,
    audit: PredictionAudit | None = None,
    expected_folds: int = NUM_FOLDS_EXPECTED,
) -> ProbabilityMap:
    """Average the TTA-merged prediction of one predictor per fold."""
    if expected_folds is not None and len(predictors) != expected_folds:
        raise ValidationError(
            f"expected {expected_folds} fold predictors, got {len(predictors)}"
        )
    per_fold = [
        predict_with_tta(
            p, image, scheme, constants, kinds, contrast, unsharp, case_id, audit
        )
        for p in predictors
    ]
    return ensemble_mean(per_fold)
