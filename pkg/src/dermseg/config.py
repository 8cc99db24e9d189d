"""Pipeline configuration.

One JSON file with a section per stage; every constant the pipeline bakes
in (resize targets, normalization statistics, augmentation ranges, TTA
strengths, threshold grids, the thresholded-Jaccard cutoff) lives here with
its default value, so nothing numeric hides in code. Unknown keys are
rejected rather than ignored.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .errors import DataError, ValidationError
from .postprocess import T_HIGH_GRID_DEFAULT, T_LOW_GRID_DEFAULT
from .preprocess import NormalizationConstants
from .rasters import NORMALIZATION_SCHEMES
from .tta import TTA_CONTRAST_DEFAULT, TTA_KINDS, TTA_UNSHARP_DEFAULT


@dataclass(frozen=True)
class PreprocessSection:
    scheme: str = "unit"
    lesion_target: tuple[int, int] = (192, 256)
    attribute_target: tuple[int, int] = (384, 576)
    channel_mean: tuple[float, float, float] = NormalizationConstants.channel_mean
    unit_mean: tuple[float, float, float] = NormalizationConstants.unit_mean
    unit_std: tuple[float, float, float] = NormalizationConstants.unit_std

    def __post_init__(self) -> None:
        if self.scheme not in NORMALIZATION_SCHEMES:
            raise ValidationError(f"unknown normalization scheme {self.scheme!r}")

    def constants(self) -> NormalizationConstants:
        return NormalizationConstants(
            channel_mean=tuple(self.channel_mean),
            unit_mean=tuple(self.unit_mean),
            unit_std=tuple(self.unit_std),
        )

    def target(self, task: str) -> tuple[int, int]:
        if task == "lesion":
            return tuple(self.lesion_target)
        if task == "attribute":
            return tuple(self.attribute_target)
        raise ValidationError(f"unknown task {task!r}")


@dataclass(frozen=True)
class TtaSection:
    kinds: tuple[str, ...] = TTA_KINDS
    contrast: float = TTA_CONTRAST_DEFAULT
    unsharp: float = TTA_UNSHARP_DEFAULT

    def __post_init__(self) -> None:
        unknown = set(self.kinds) - set(TTA_KINDS)
        if unknown:
            raise ValidationError(f"unknown TTA kinds {sorted(unknown)}")


@dataclass(frozen=True)
class PostprocessSection:
    t_high: float = 0.8
    t_low: float = 0.45
    t_high_grid: tuple[float, ...] = T_HIGH_GRID_DEFAULT
    t_low_grid: tuple[float, ...] = T_LOW_GRID_DEFAULT
    connectivity: int = 8
    lesion_objective: str = "mean_thresholded_jaccard"
    attribute_objective: str = "pooled_jaccard"


@dataclass(frozen=True)
class EvaluateSection:
    jaccard_cutoff: float = 0.65
    attribute_eval_size: tuple[int, int] = (256, 256)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    folds: int = 5
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    tta: TtaSection = field(default_factory=TtaSection)
    postprocess: PostprocessSection = field(default_factory=PostprocessSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)


def _merge(instance, overrides: dict, context: str):
    fields = {f.name: f for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in overrides.items():
        if key not in fields:
            raise ValidationError(f"unknown config key {context}{key!r}")
        current = getattr(instance, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ValidationError(f"config section {context}{key!r} must be an object")
            updates[key] = _merge(current, value, f"{context}{key}.")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ValidationError(f"config key {context}{key!r} must be a list")
            updates[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            updates[key] = value
    return dataclasses.replace(instance, **updates)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Defaults, with the JSON file's values merged over them."""
    base = PipelineConfig()
    if path is None:
        return base
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"config file is not valid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise ValidationError("config root must be a JSON object")
    return _merge(base, obj, "")


def dump_default_config() -> str:
    """The complete default configuration, as pretty JSON."""

    def enc(x):
        if dataclasses.is_dataclass(x):
            return {f.name: enc(getattr(x, f.name)) for f in dataclasses.fields(x)}
        if isinstance(x, tuple):
            return [enc(v) for v in x]
        return x

    return json.dumps(enc(PipelineConfig()), indent=2, sort_keys=True)
