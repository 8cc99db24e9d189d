"""Dataset manifests: records, fold assignment, and negative-class subsampling.

A manifest is a JSON-lines file. The first line may be a header object
carrying the manifest seed; every other line is one case:

    {"seed": 1234}
    {"case_id": "ISIC_0000000", "image": "images/ISIC_0000000.jpg",
     "lesion_gt": "gt/ISIC_0000000.png",
     "attribute_gts": {"streaks": "gt2/ISIC_0000000_streaks.png", ...},
     "attribute_present": {"streaks": false, ...},
     "fold": 3}

Relative paths are resolved against the manifest's directory on load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .pngio import read_mask
from .seeding import rng_for


class AttributeKind(str, Enum):
    PIGMENT_NETWORK = "pigment_network"
    GLOBULES = "globules"
    MILIA_LIKE_CYST = "milia_like_cyst"
    NEGATIVE_NETWORK = "negative_network"
    STREAKS = "streaks"


ATTRIBUTE_KINDS: tuple[AttributeKind, ...] = tuple(AttributeKind)

NUM_FOLDS_DEFAULT = 5


@dataclass(frozen=True)
class DatasetRecord:
    """One case: image, lesion ground truth, five attribute ground truths."""

    case_id: str
    image_path: Path
    lesion_gt_path: Path | None = None
    attribute_gt_paths: dict[AttributeKind, Path | None] = field(default_factory=dict)
    attribute_present: dict[AttributeKind, bool] = field(default_factory=dict)
    fold: int = 0

    def __post_init__(self) -> None:
        if not self.case_id:
            raise ValidationError("case_id must be non-empty")
        if self.fold < 0:
            raise ValidationError(f"fold must be >= 0, got {self.fold} for {self.case_id}")
        paths = {k: self.attribute_gt_paths.get(k) for k in ATTRIBUTE_KINDS}
        present = {k: bool(self.attribute_present.get(k, False)) for k in ATTRIBUTE_KINDS}
        for kind, flag in present.items():
            if flag and paths[kind] is None:
                raise ValidationError(
                    f"{self.case_id}: attribute {kind.value} declared present without a ground-truth path"
                )
        object.__setattr__(self, "attribute_gt_paths", paths)
        object.__setattr__(self, "attribute_present", present)


@dataclass(frozen=True)
class Manifest:
    """Ordered, immutable record list plus the seed that governs derived draws."""

    records: tuple[DatasetRecord, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.case_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate case_ids in manifest: {dupes}")

    def __len__(self) -> int:
        return len(self.records)

    def positives(self, attribute: AttributeKind) -> tuple[DatasetRecord, ...]:
        return tuple(r for r in self.records if r.attribute_present[attribute])

    def fold_records(self, fold: int) -> tuple[DatasetRecord, ...]:
        return tuple(r for r in self.records if r.fold == fold)


def _resolve(base: Path, p: str | None) -> Path | None:
    if p is None:
        return None
    q = Path(p)
    return q if q.is_absolute() else base / q


def _record_from_json(obj: dict, base: Path, lineno: int) -> DatasetRecord:
    try:
        case_id = obj["case_id"]
        image = obj["image"]
    except KeyError as e:
        raise DataError(f"manifest line {lineno}: missing field {e}") from e
    attr_gts_raw = obj.get("attribute_gts", {})
    attr_present_raw = obj.get("attribute_present", {})
    for key in list(attr_gts_raw) + list(attr_present_raw):
        if key not in AttributeKind._value2member_map_:
            raise DataError(f"manifest line {lineno}: unknown attribute {key!r}")
    fold = int(obj.get("fold", 0))
    if not 0 <= fold < NUM_FOLDS_DEFAULT:
        raise DataError(f"manifest line {lineno}: fold {fold} outside [0, {NUM_FOLDS_DEFAULT - 1}]")
    try:
        return DatasetRecord(
            case_id=case_id,
            image_path=_resolve(base, image),
            lesion_gt_path=_resolve(base, obj.get("lesion_gt")),
            attribute_gt_paths={
                AttributeKind(k): _resolve(base, v) for k, v in attr_gts_raw.items()
            },
            attribute_present={AttributeKind(k): bool(v) for k, v in attr_present_raw.items()},
            fold=fold,
        )
    except ValidationError as e:
        raise DataError(f"manifest line {lineno}: {e}") from e


def load_manifest(path: str | Path, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest file.

    With check_files (the default), referenced files must exist and each
    declared attribute_present flag is recomputed from its ground-truth mask
    (present := at least one positive pixel) and checked for contradiction.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"manifest not found: {path}") from e
    base = path.parent
    seed = 0
    records: list[DatasetRecord] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"manifest line {lineno}: parse error: {e}") from e
        if not isinstance(obj, dict):
            raise DataError(f"manifest line {lineno}: expected an object")
        if "case_id" not in obj:
            if lineno == 1 and "seed" in obj:
                seed = int(obj["seed"])
                continue
            raise DataError(f"manifest line {lineno}: record without case_id")
        records.append(_record_from_json(obj, base, lineno))

    if check_files:
        records = [_verify_record(r) for r in records]
    return Manifest(records=tuple(records), seed=seed)


def _verify_record(r: DatasetRecord) -> DatasetRecord:
    if not r.image_path.exists():
        raise DataError(f"{r.case_id}: image file missing: {r.image_path}")
    if r.lesion_gt_path is not None and not r.lesion_gt_path.exists():
        raise DataError(f"{r.case_id}: lesion ground truth missing: {r.lesion_gt_path}")
    for kind, gt in r.attribute_gt_paths.items():
        declared = r.attribute_present[kind]
        if gt is None:
            continue
        actual = read_mask(gt).area() > 0
        if actual != declared:
            raise DataError(
                f"{r.case_id}: attribute_present[{kind.value}]={declared} contradicts "
                f"ground truth ({'non-empty' if actual else 'all-zero'} mask {gt})"
            )
    return r


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write JSON lines; paths under the manifest directory become relative."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    def enc(p: Path | None) -> str | None:
        if p is None:
            return None
        q = Path(p).resolve()
        try:
            return q.relative_to(base).as_posix()
        except ValueError:
            return q.as_posix()

    lines = [json.dumps({"seed": manifest.seed}, sort_keys=True)]
    for r in manifest.records:
        lines.append(
            json.dumps(
                {
                    "case_id": r.case_id,
                    "image": enc(r.image_path),
                    "lesion_gt": enc(r.lesion_gt_path),
                    "attribute_gts": {k.value: enc(v) for k, v in r.attribute_gt_paths.items() if v},
                    "attribute_present": {k.value: v for k, v in r.attribute_present.items()},
                    "fold": r.fold,
                },
                sort_keys=True,
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def assign_folds(
    manifest: Manifest,
    k: int = NUM_FOLDS_DEFAULT,
    seed: int = 0,
    stratify_by: AttributeKind | None = None,
) -> Manifest:
    """Uniform random fold partition, sizes differing by at most one.

    With stratify_by, positives and negatives for that attribute are
    partitioned separately so each fold sees a proportional share.
    """
    if k < 2:
        raise ValidationError(f"fold count must be >= 2, got {k}")
    if len(manifest) < k:
        raise ValidationError(f"cannot split {len(manifest)} records into {k} folds")
    rng = rng_for(seed, "assign_folds")
    folds = np.empty(len(manifest), dtype=np.int64)
    if stratify_by is None:
        groups = [np.arange(len(manifest))]
    else:
        flags = np.array([r.attribute_present[stratify_by] for r in manifest.records])
        groups = [np.flatnonzero(flags), np.flatnonzero(~flags)]
    for idx in groups:
        perm = rng.permutation(len(idx))
        folds[idx[perm]] = np.arange(len(idx)) % k
    records = tuple(replace(r, fold=int(f)) for r, f in zip(manifest.records, folds))
    return Manifest(records=records, seed=seed)


def subsample_negatives(manifest: Manifest, attribute: AttributeKind, seed: int = 0) -> Manifest:
    """Balance classes for one attribute.

    Keeps every positive record and exactly min(#negatives, #positives)
    negatives, drawn uniformly without replacement; original record order
    is preserved.
    """
    pos_flags = [r.attribute_present[attribute] for r in manifest.records]
    n_pos = sum(pos_flags)
    if n_pos == 0:
        raise DataError(f"no records positive for attribute {attribute.value}")
    neg_idx = [i for i, f in enumerate(pos_flags) if not f]
    n_keep = min(len(neg_idx), n_pos)
    rng = rng_for(seed, "subsample_negatives", attribute.value)
    chosen = rng.choice(len(neg_idx), size=n_keep, replace=False)
    keep = set(neg_idx[i] for i in chosen)
    records = tuple(
        r for i, r in enumerate(manifest.records) if pos_flags[i] or i in keep
    )
    return Manifest(records=records, seed=seed)
