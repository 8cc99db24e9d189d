"""Dual-threshold morphological post-processing and the threshold grid search.

A high threshold builds the marker (for lesions, reduced to its largest
connected object) and a low threshold builds the mask; binary morphological
reconstruction keeps exactly the mask components the marker touches. The
(T_H, T_L) pair is picked by exhaustive grid search against ground truth.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ValidationError
from .metrics import (
    JACCARD_CUTOFF_DEFAULT,
    mean_thresholded_jaccard,
    per_image_reports,
    pooled_attribute_metrics,
)
from .rasters import BinaryMask, ProbabilityMap, ThresholdPair, pixelwise_multiply, threshold

T_HIGH_GRID_DEFAULT: tuple[float, ...] = (0.8, 0.9, 0.95, 0.975, 0.99, 0.995, 0.996)
T_LOW_GRID_DEFAULT: tuple[float, ...] = tuple(round(0.3 + 0.05 * i, 2) for i in range(12))

OBJECTIVES = ("mean_thresholded_jaccard", "mean_jaccard", "pooled_jaccard")


@dataclass(frozen=True)
class GridSearchSpec:
    t_high_candidates: tuple[float, ...] = T_HIGH_GRID_DEFAULT
    t_low_candidates: tuple[float, ...] = T_LOW_GRID_DEFAULT
    objective: str = "mean_thresholded_jaccard"

    def __post_init__(self) -> None:
        for t in tuple(self.t_high_candidates) + tuple(self.t_low_candidates):
            if not 0.0 < t < 1.0:
                raise ValidationError(f"grid candidates must lie in (0, 1), got {t}")
        if not self.t_high_candidates or not self.t_low_candidates:
            raise ValidationError("candidate grids must be non-empty")
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective!r}")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    raise ValidationError(f"connectivity must be 4 or 8, got {connectivity}")


def largest_component(mask: BinaryMask, connectivity: int = 8) -> BinaryMask:
    """Keep only the maximum-area connected component (first label on ties)."""
    labels, n = ndimage.label(mask.data, structure=_structure(connectivity))
    if n == 0:
        return mask
    areas = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(areas)) + 1
    return BinaryMask((labels == keep).astype(np.uint8))


def _neighbor_or(frontier: np.ndarray, connectivity: int) -> np.ndarray:
    """Union of one-step shifts of a boolean grid."""
    out = np.zeros_like(frontier)
    out[1:, :] |= frontier[:-1, :]
    out[:-1, :] |= frontier[1:, :]
    out[:, 1:] |= frontier[:, :-1]
    out[:, :-1] |= frontier[:, 1:]
    if connectivity == 8:
        out[1:, 1:] |= frontier[:-1, :-1]
        out[1:, :-1] |= frontier[:-1, 1:]
        out[:-1, 1:] |= frontier[1:, :-1]
        out[:-1, :-1] |= frontier[1:, 1:]
    return out


def morphological_reconstruct(
    marker: BinaryMask, mask: BinaryMask, connectivity: int = 8
) -> BinaryMask:
    """Binary reconstruction by dilation: grow marker & mask inside mask until stable.

    The result is the union of mask components that intersect the marker.
    The marker is intersected with the mask first, so a marker pixel outside
    the mask never leaks through. Propagation is frontier-based; the output
    equals the naive dilate-then-intersect fixpoint.
    """
    _structure(connectivity)  # validates connectivity
    if marker.data.shape != mask.data.shape:
        raise DimensionError(f"shape mismatch: {marker.data.shape} vs {mask.data.shape}")
    region = mask.data.astype(bool)
    grown = marker.data.astype(bool) & region
    frontier = grown
    while frontier.any():
        frontier = _neighbor_or(frontier, connectivity) & region & ~grown
        grown |= frontier
    return BinaryMask(grown.astype(np.uint8))


def lesion_postprocess(
    prob: ProbabilityMap, t: ThresholdPair, connectivity: int = 8
) -> BinaryMask:
    """Largest high-threshold object, reconstructed inside the low-threshold mask."""
    marker = largest_component(threshold(prob, t.t_high), connectivity)
    mask = threshold(prob, t.t_low)
    return morphological_reconstruct(marker, mask, connectivity)


def attribute_postprocess(
    prob: ProbabilityMap,
    lesion: BinaryMask | None,
    t: ThresholdPair,
    connectivity: int = 8,
) -> BinaryMask:
    """Attribute variant: restrict to the lesion area first, keep every
    marker object (no largest-component refinement).

    lesion=None skips the restriction (for pipelines that post-process
    attribute maps standalone)."""
    restricted = prob if lesion is None else pixelwise_multiply(prob, lesion)
    marker = threshold(restricted, t.t_high)
    mask = threshold(restricted, t.t_low)
    return morphological_reconstruct(marker, mask, connectivity)


@dataclass(frozen=True)
class GridSearchResult:
    best: ThresholdPair
    objective_value: float
    objective: str
    evaluated: tuple[tuple[float, float, float], ...]  # (t_high, t_low, value)
    skipped: tuple[tuple[float, float], ...] = field(default_factory=tuple)


def _objective_fn(objective: str, cutoff: float) -> Callable[[list[BinaryMask], Sequence[BinaryMask]], float]:
    if objective == "mean_thresholded_jaccard":
        return lambda preds, gts: mean_thresholded_jaccard(preds, gts, cutoff)
    if objective == "mean_jaccard":
        return lambda preds, gts: float(np.mean([r.jaccard for r in per_image_reports(preds, gts)]))
    return lambda preds, gts: pooled_attribute_metrics(preds, gts)[0]


def grid_search(
    probs: Sequence[ProbabilityMap],
    gts: Sequence[BinaryMask],
    spec: GridSearchSpec,
    postproc: str = "lesion",
    lesions: Sequence[BinaryMask] | None = None,
    connectivity: int = 8,
    cutoff: float = JACCARD_CUTOFF_DEFAULT,
) -> GridSearchResult:
    """Exhaustively score every candidate pair with T_H >= T_L.

    Pairs violating T_H >= T_L are skipped, not clamped. Ties on the
    objective break toward higher T_H, then higher T_L.
    """
    if postproc not in ("lesion", "attribute"):
        raise ValidationError(f"unknown postproc {postproc!r}")
    if len(probs) != len(gts):
        raise DimensionError(f"list length mismatch: {len(probs)} vs {len(gts)}")
    if not probs:
        raise ValidationError("grid search needs at least one image")
    if postproc == "attribute" and lesions is not None and len(lesions) != len(probs):
        raise DimensionError("lesion mask list length mismatch")

    if postproc == "attribute":
        maps = [
            prob if lesions is None else pixelwise_multiply(prob, lesions[i])
            for i, prob in enumerate(probs)
        ]
    else:
        maps = list(probs)

    # Threshold results are shared across pairs: memoize per (image, t).
    thresh_cache: list[dict[float, BinaryMask]] = [dict() for _ in maps]
    marker_cache: list[dict[float, BinaryMask]] = [dict() for _ in maps]

    def low_mask(i: int, t: float) -> BinaryMask:
        if t not in thresh_cache[i]:
            thresh_cache[i][t] = threshold(maps[i], t)
        return thresh_cache[i][t]

    def marker(i: int, t: float) -> BinaryMask:
        if t not in marker_cache[i]:
            m = low_mask(i, t)
            marker_cache[i][t] = largest_component(m, connectivity) if postproc == "lesion" else m
        return marker_cache[i][t]

    score = _objective_fn(spec.objective, cutoff)
    evaluated: list[tuple[float, float, float]] = []
    skipped: list[tuple[float, float]] = []
    best: tuple[float, float, float] | None = None  # (value, t_high, t_low)
    for th in spec.t_high_candidates:
        for tl in spec.t_low_candidates:
            if th < tl:
                skipped.append((th, tl))
                continue
            preds = [
                morphological_reconstruct(marker(i, th), low_mask(i, tl), connectivity)
                for i in range(len(maps))
            ]
            value = score(preds, gts)
            evaluated.append((th, tl, value))
            key = (value, th, tl)
            if best is None or key > best:
                best = key
    if best is None:
        raise ValidationError("every candidate pair violates t_high >= t_low")
    value, th, tl = best
    return GridSearchResult(
        best=ThresholdPair(t_high=th, t_low=tl),
        objective_value=value,
        objective=spec.objective,
        evaluated=tuple(evaluated),
        skipped=tuple(skipped),
    )


def write_gridsearch_csv(result: GridSearchResult, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["t_high", "t_low", result.objective, "selected"])
        for th, tl, value in result.evaluated:
            sel = th == result.best.t_high and tl == result.best.t_low
            writer.writerow([th, tl, f"{value:.6f}", int(sel)])
