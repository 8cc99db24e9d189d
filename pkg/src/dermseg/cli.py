"""Command-line pipeline orchestration.

Subcommands mirror the processing chain:

    augment      materialize augmented image/mask pairs with a replayable log
    predict      probability maps via folds x TTA around a pluggable predictor
    ensemble     average per-case maps from several model output directories
    postprocess  dual-threshold reconstruction, optionally with grid search
    evaluate     challenge metrics to report.csv / report.json (+ overlays)
    subsample    negative-class balancing of a manifest for one attribute
    archcheck    wiring-rule validation of an architecture graph

Every command is deterministic given (inputs, config, seed). Exit codes:
0 success, 2 validation error, 3 data error, 4 predictor-contract error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import archspec
from .augment import apply_plan, plan_from_dict, plan_to_dict, sample_augmentation
from .config import PipelineConfig, dump_default_config, load_config
from .errors import DataError, PredictorContractError, ValidationError
from .manifest import (
    AttributeKind,
    ATTRIBUTE_KINDS,
    DatasetRecord,
    load_manifest,
    subsample_negatives,
    write_manifest,
)
from .metrics import (
    MetricReport,
    average_reports,
    confusion,
    metrics_from_confusion,
    write_report_csv,
    write_report_json,
)
from .pngio import (
    read_image,
    read_mask,
    read_probmap,
    read_probmap_raw,
    write_image,
    write_mask,
    write_probmap,
    write_probmap_raw,
)
from .postprocess import (
    GridSearchSpec,
    attribute_postprocess,
    grid_search,
    lesion_postprocess,
    write_gridsearch_csv,
)
from .predictors import BaselinePredictor, CommandPredictor, FixturePredictor
from .preprocess import resize
from .rasters import BinaryMask, Image, ProbabilityMap, ThresholdPair, pixelwise_multiply
from .tta import PredictionAudit, fold_ensemble


def _parse_task(task: str) -> tuple[str, AttributeKind | None]:
    """'lesion', 'attribute' (all five), or 'attribute:<kind>'."""
    if task == "lesion":
        return "lesion", None
    if task == "attribute":
        return "attribute", None
    if task.startswith("attribute:"):
        kind = task.split(":", 1)[1]
        if kind not in AttributeKind._value2member_map_:
            raise ValidationError(
                f"unknown attribute {kind!r}; choose from {[k.value for k in ATTRIBUTE_KINDS]}"
            )
        return "attribute", AttributeKind(kind)
    raise ValidationError(f"unknown task {task!r} (expected lesion | attribute[:<kind>])")


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _map_cases(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise DataError(f"map directory not found: {directory}")
    return {p.stem: p for p in sorted(directory.glob("*.png"))}


# --- augment -------------------------------------------------------------------


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    replay: dict[str, dict] | None = None
    if args.replay:
        try:
            replay = json.loads(Path(args.replay).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise DataError(f"replay log not found: {args.replay}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"replay log is not valid JSON: {e}") from e

    def run(record: DatasetRecord) -> tuple[str, dict]:
        image = read_image(record.image_path)
        mask = read_mask(record.lesion_gt_path) if record.lesion_gt_path else None
        if replay is not None:
            if record.case_id not in replay:
                raise DataError(f"replay log has no entry for case {record.case_id!r}")
            plan = plan_from_dict(replay[record.case_id])
        else:
            plan = sample_augmentation(seed, cfg.augment, case_id=record.case_id)
        aug_image, aug_mask = apply_plan(image, plan, mask)
        write_image(aug_image, out / f"{record.case_id}.png")
        if aug_mask is not None:
            write_mask(aug_mask, out / f"{record.case_id}_mask.png")
        return record.case_id, plan_to_dict(plan)

    results = _pmap(run, manifest.records, args.jobs)
    log = {case_id: plan for case_id, plan in results}
    out.mkdir(parents=True, exist_ok=True)
    (out / "augment_log.json").write_text(
        json.dumps(log, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"augmented {len(results)} cases -> {out}")
    return 0


# --- predict -------------------------------------------------------------------


def _build_predictors(spec: str, folds: int):
    if spec == "baseline":
        return [BaselinePredictor()] * folds
    if spec.startswith("cmd:"):
        return [CommandPredictor(spec[4:])] * folds
    root = Path(spec)
    if not root.is_dir():
        raise DataError(f"predictor spec {spec!r} is neither 'baseline', 'cmd:...', nor a directory")
    fold_dirs = [root / f"fold{k}" for k in range(folds)]
    present = [d for d in fold_dirs if d.is_dir()]
    if present and len(present) != folds:
        missing = [d.name for d in fold_dirs if not d.is_dir()]
        raise DataError(f"fixture directory {root} has per-fold subdirectories but lacks {missing}")
    if present:
        return [FixturePredictor(d) for d in fold_dirs]
    return [FixturePredictor(root)] * folds


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    task, _ = _parse_task(args.task)
    manifest = load_manifest(args.manifest)
    folds = cfg.folds if args.folds is None else args.folds
    predictors = _build_predictors(args.predictor, folds)
    target = cfg.preprocess.target(task)
    kinds = ("identity",) if args.no_tta else cfg.tta.kinds
    out = Path(args.out)
    audit = PredictionAudit()

    def run(record: DatasetRecord) -> str:
        image = read_image(record.image_path)
        resized = resize(image, *target)
        merged = fold_ensemble(
            predictors,
            resized,
            scheme=cfg.preprocess.scheme,
            constants=cfg.preprocess.constants(),
            kinds=kinds,
            contrast=cfg.tta.contrast,
            unsharp=cfg.tta.unsharp,
            case_id=record.case_id,
            audit=audit,
            expected_folds=folds,
        )
        write_probmap(merged, out / f"{record.case_id}.png")
        return record.case_id

    cases = _pmap(run, manifest.records, args.jobs)
    payload = {
        "per_case": {c: audit.count(c) for c in sorted(cases)},
        "folds": folds,
        "tta_variants": len(kinds),
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "predict_audit.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"predicted {len(cases)} cases ({folds} folds x {len(kinds)} TTA variants) -> {out}")
    return 0


# --- ensemble ------------------------------------------------------------------


def cmd_ensemble(args: argparse.Namespace) -> int:
    dirs = [Path(d) for d in args.map_dirs]
    case_maps = [_map_cases(d) for d in dirs]
    case_sets = [set(m) for m in case_maps]
    if any(s != case_sets[0] for s in case_sets[1:]):
        missing = set.union(*case_sets) - set.intersection(*case_sets)
        raise DataError(f"map directories disagree on case set: {sorted(missing)}")
    out = Path(args.out)

    def run(case_id: str) -> None:
        grids = [read_probmap_raw(m[case_id]) for m in case_maps]
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise DataError(f"case {case_id!r}: map shapes disagree: {sorted(shapes)}")
        # Integer accumulation keeps the result independent of directory order.
        total = np.zeros(grids[0].shape, dtype=np.int64)
        for g in grids:
            total += g
        write_probmap_raw(np.rint(total / len(grids)).astype(np.uint16), out / f"{case_id}.png")

    cases = sorted(case_sets[0])
    _pmap(run, cases, args.jobs)
    print(f"ensembled {len(dirs)} model(s) over {len(cases)} cases -> {out}")
    return 0


# --- postprocess ----------------------------------------------------------------


def _gt_for(record: DatasetRecord, task: str, kind: AttributeKind | None) -> Path | None:
    if task == "lesion":
        return record.lesion_gt_path
    assert kind is not None
    return record.attribute_gt_paths.get(kind)


def cmd_postprocess(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    task, kind = _parse_task(args.task)
    if task == "attribute" and kind is None:
        raise ValidationError("postprocess needs a specific attribute: --task attribute:<kind>")
    maps = _map_cases(Path(args.maps))
    out = Path(args.out)
    connectivity = cfg.postprocess.connectivity

    lesion_masks: dict[str, BinaryMask] = {}
    if task == "attribute" and not args.no_lesion_restrict:
        if not args.lesion_masks:
            raise ValidationError(
                "attribute post-processing restricts maps to the lesion area; pass "
                "--lesion-masks <dir> or disable with --no-lesion-restrict"
            )
        lesion_paths = _map_cases(Path(args.lesion_masks))
        missing = sorted(set(maps) - set(lesion_paths))
        if missing:
            raise DataError(f"no lesion mask for cases: {missing}")

        def lesion_for(case_id: str) -> BinaryMask:
            if case_id not in lesion_masks:
                m = read_mask(lesion_paths[case_id])
                lesion_masks[case_id] = m
            return lesion_masks[case_id]

    else:

        def lesion_for(case_id: str) -> BinaryMask | None:
            return None

    def postprocess_one(case_id: str, prob: ProbabilityMap, pair: ThresholdPair) -> BinaryMask:
        if task == "lesion":
            return lesion_postprocess(prob, pair, connectivity)
        lesion = lesion_for(case_id)
        if lesion is not None and lesion.data.shape != prob.data.shape:
            lesion = resize(lesion, prob.height, prob.width)
        return attribute_postprocess(prob, lesion, pair, connectivity)

    if args.grid_search:
        if not args.manifest:
            raise ValidationError("--grid-search needs --manifest for ground truth")
        manifest = load_manifest(args.manifest)
        probs, gts = [], []
        for record in manifest.records:
            if record.case_id not in maps:
                continue
            gt_path = _gt_for(record, task, kind)
            if gt_path is None:
                raise DataError(f"{record.case_id}: no ground truth for task {args.task!r}")
            prob = read_probmap(maps[record.case_id])
            gt = read_mask(gt_path)
            if gt.data.shape != prob.data.shape:
                gt = resize(gt, prob.height, prob.width)
            lesion = lesion_for(record.case_id)
            if lesion is not None:
                if lesion.data.shape != prob.data.shape:
                    lesion = resize(lesion, prob.height, prob.width)
                prob = pixelwise_multiply(prob, lesion)
            probs.append(prob)
            gts.append(gt)
        if not probs:
            raise DataError("no cases with both a probability map and ground truth")
        objective = (
            cfg.postprocess.lesion_objective if task == "lesion" else cfg.postprocess.attribute_objective
        )
        spec = GridSearchSpec(
            t_high_candidates=cfg.postprocess.t_high_grid,
            t_low_candidates=cfg.postprocess.t_low_grid,
            objective=objective,
        )
        result = grid_search(
            probs,
            gts,
            spec,
            postproc=task,
            connectivity=connectivity,
            cutoff=cfg.evaluate.jaccard_cutoff,
        )
        write_gridsearch_csv(result, out / "gridsearch.csv")
        pair = result.best
        print(
            f"grid search: best (t_high={pair.t_high}, t_low={pair.t_low}) "
            f"{result.objective}={result.objective_value:.4f}"
        )
    else:
        t_high = cfg.postprocess.t_high if args.t_high is None else args.t_high
        t_low = cfg.postprocess.t_low if args.t_low is None else args.t_low
        pair = ThresholdPair(t_high=t_high, t_low=t_low)

    def run(case_id: str) -> None:
        prob = read_probmap(maps[case_id])
        write_mask(postprocess_one(case_id, prob, pair), out / f"{case_id}.png")

    _pmap(run, sorted(maps), args.jobs)
    print(f"post-processed {len(maps)} cases with (t_high={pair.t_high}, t_low={pair.t_low}) -> {out}")
    return 0


# --- evaluate -------------------------------------------------------------------


def _overlay(image: Image, gt: BinaryMask, pred: BinaryMask) -> Image:
    """Ground truth green, prediction red, intersection orange, on the photo."""
    base = image.data.astype(np.float64) * 0.5
    g = gt.data.astype(bool)
    p = pred.data.astype(bool)
    colors = {
        "gt": (np.array([0.0, 200.0, 0.0]), g & ~p),
        "pred": (np.array([220.0, 0.0, 0.0]), p & ~g),
        "both": (np.array([255.0, 140.0, 0.0]), p & g),
    }
    for color, region in colors.values():
        base[region] = 0.4 * base[region] + 0.6 * color
    return Image(np.clip(np.rint(base), 0, 255).astype(np.uint8))


def _eval_lesion(args, cfg: PipelineConfig, manifest) -> list[tuple[str, MetricReport]]:
    pred_paths = _map_cases(Path(args.pred))
    rows: list[tuple[str, MetricReport]] = []
    overlays_dir = Path(args.out) / "overlays"
    for record in manifest.records:
        if record.lesion_gt_path is None:
            continue
        if record.case_id not in pred_paths:
            raise DataError(f"no predicted mask for case {record.case_id!r}")
        gt = read_mask(record.lesion_gt_path)
        pred = read_mask(pred_paths[record.case_id])
        if pred.data.shape != gt.data.shape:
            pred = resize(pred, gt.height, gt.width)
        rows.append(
            (record.case_id, metrics_from_confusion(confusion(pred, gt), cfg.evaluate.jaccard_cutoff))
        )
        if args.overlays:
            image = resize(read_image(record.image_path), gt.height, gt.width)
            write_image(_overlay(image, gt, pred), overlays_dir / f"{record.case_id}.png")
    if not rows:
        raise DataError("no cases with lesion ground truth to evaluate")
    return rows


def _eval_attribute_kind(
    args, cfg: PipelineConfig, manifest, kind: AttributeKind, pred_dir: Path
) -> MetricReport:
    eval_h, eval_w = cfg.evaluate.attribute_eval_size
    pred_paths = _map_cases(pred_dir)
    pooled = None
    for record in manifest.records:
        gt_path = record.attribute_gt_paths.get(kind)
        if gt_path is None:
            continue
        if record.case_id not in pred_paths:
            raise DataError(f"no predicted {kind.value} mask for case {record.case_id!r}")
        gt = resize(read_mask(gt_path), eval_h, eval_w)
        pred = resize(read_mask(pred_paths[record.case_id]), eval_h, eval_w)
        c = confusion(pred, gt)
        pooled = c if pooled is None else pooled + c
    if pooled is None:
        raise DataError(f"no cases with {kind.value} ground truth to evaluate")
    return metrics_from_confusion(pooled, cfg.evaluate.jaccard_cutoff)


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    task, kind = _parse_task(args.task)
    if args.cutoff is not None:
        cfg = dataclasses.replace(
            cfg, evaluate=dataclasses.replace(cfg.evaluate, jaccard_cutoff=args.cutoff)
        )
    manifest = load_manifest(args.manifest)
    out = Path(args.out)

    if task == "lesion":
        rows = _eval_lesion(args, cfg, manifest)
    else:
        kinds = [kind] if kind is not None else list(ATTRIBUTE_KINDS)
        rows = []
        for k in kinds:
            # with multiple attributes, predictions live in one subdir per kind
            pred_dir = Path(args.pred) if kind is not None else Path(args.pred) / k.value
            rows.append((f"attribute:{k.value}", _eval_attribute_kind(args, cfg, manifest, k, pred_dir)))

    write_report_csv(rows, out / "report.csv")
    write_report_json(rows, out / "report.json")
    agg = average_reports([r for _, r in rows])
    print(
        f"evaluated {len(rows)} {'cases' if task == 'lesion' else 'attribute(s)'}: "
        f"thresholded_jaccard={agg.thresholded_jaccard:.4f} jaccard={agg.jaccard:.4f} "
        f"dice={agg.dice:.4f} -> {out}"
    )
    return 0


# --- subsample / archcheck --------------------------------------------------------


def cmd_subsample(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    _, kind = _parse_task(args.task if args.task.startswith("attribute") else f"attribute:{args.task}")
    if kind is None:
        raise ValidationError("subsample needs a specific attribute, e.g. --task attribute:streaks")
    manifest = load_manifest(args.manifest)
    balanced = subsample_negatives(manifest, kind, seed)
    write_manifest(balanced, args.out)
    n_pos = len(balanced.positives(kind))
    print(
        f"subsampled {len(manifest)} -> {len(balanced)} records "
        f"({n_pos} positive / {len(balanced) - n_pos} negative) -> {args.out}"
    )
    return 0


def cmd_archcheck(args: argparse.Namespace) -> int:
    if args.builtin:
        graph = archspec.builtin_graph(args.builtin)
        name = args.builtin
    elif args.graph:
        graph = archspec.load_graph(args.graph)
        name = str(args.graph)
    else:
        raise ValidationError("archcheck needs --builtin <base> or --graph <file.json>")
    input_shape = tuple(args.input_shape)
    report = archspec.validate_unet_rules(graph, input_shape)
    if report.ok:
        shapes = archspec.infer_shapes(graph, input_shape)
        head = next(n.id for n in graph.nodes if n.kind == "output_head")
        print(f"{name}: OK ({len(graph.nodes)} nodes; output shape {shapes[head]})")
        return 0
    for v in report.violations:
        print(f"{name}: {v.rule} {list(v.nodes)}: {v.message}")
    return 2


# --- entry point -------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", required=True, help="JSON-lines dataset manifest")
    p.add_argument("--config", default=None, help="JSON pipeline configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker threads over cases")
    p.add_argument("--out", required=True, help="output directory or file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dermseg",
        description="Deterministic dermoscopy lesion/attribute segmentation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="materialize augmented image/mask pairs")
    _add_common(p)
    p.add_argument("--replay", default=None, help="re-apply plans from an augment_log.json")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("predict", help="probability maps from folds x TTA")
    _add_common(p)
    p.add_argument("--task", required=True, help="lesion | attribute[:<kind>]")
    p.add_argument(
        "--predictor",
        required=True,
        help="'baseline', a fixture directory of 16-bit maps, or 'cmd:<command>'",
    )
    p.add_argument("--folds", type=int, default=None, help="fold count (default from config)")
    p.add_argument("--no-tta", action="store_true", help="identity variant only")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ensemble", help="average maps from several model directories")
    p.add_argument("map_dirs", nargs="+", help="per-model probability-map directories")
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("postprocess", help="threshold + reconstruct binary masks")
    p.add_argument("--manifest", default=None, help="needed for --grid-search ground truth")
    p.add_argument("--config", default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--maps", required=True, help="probability-map directory")
    p.add_argument("--task", required=True, help="lesion | attribute:<kind>")
    p.add_argument("--t-high", type=float, default=None)
    p.add_argument("--t-low", type=float, default=None)
    p.add_argument("--grid-search", action="store_true", help="pick (T_H, T_L) against ground truth")
    p.add_argument("--lesion-masks", default=None, help="lesion masks for attribute restriction")
    p.add_argument("--no-lesion-restrict", action="store_true")
    p.set_defaults(fn=cmd_postprocess)

    p = sub.add_parser("evaluate", help="challenge metrics and reports")
    _add_common(p)
    p.add_argument("--task", required=True, help="lesion | attribute[:<kind>]")
    p.add_argument("--pred", required=True, help="predicted-mask directory")
    p.add_argument("--cutoff", type=float, default=None, help="thresholded-Jaccard cutoff")
    p.add_argument("--overlays", action="store_true", help="write gt/pred overlay PNGs")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("subsample", help="balance negatives for one attribute")
    _add_common(p)
    p.add_argument("--task", required=True, help="attribute:<kind> (or bare kind)")
    p.set_defaults(fn=cmd_subsample)

    p = sub.add_parser("archcheck", help="validate an architecture wiring graph")
    p.add_argument("--builtin", default=None, help=f"one of {list(archspec.BUILTIN_BASES)}")
    p.add_argument("--graph", default=None, help="graph description JSON")
    p.add_argument(
        "--input-shape", type=int, nargs=3, default=(192, 256, 3), metavar=("H", "W", "C")
    )
    p.set_defaults(fn=cmd_archcheck)

    p = sub.add_parser("config", help="print the full default configuration")
    p.set_defaults(fn=lambda _args: (print(dump_default_config()), 0)[1])

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except PredictorContractError as e:
        print(f"predictor error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
