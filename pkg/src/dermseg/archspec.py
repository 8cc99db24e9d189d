"""Symbolic validator for the encoder/decoder wiring rules.

Graphs are level-granularity summaries (one node per resolution level), not
layer-by-layer network definitions: no weights, no arithmetic on image
data. Shape inference walks the DAG; the rule validator then checks

  R1  as many decoder upsampling steps as encoder poolings
  R2  every skip connection merges through an "add" node
  R3  "add" operands agree on channels (bottleneck convs equalize them)
  R4  one feature per decoder level is gathered, upsampled to the finest
      level, into a single pyramid concat before the final convolutions
  R5  a single output head: 1x1 conv to one channel

Upsample nodes on pyramid-gathering chains carry stage="pyramid" and are
not counted by R1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError, DimensionError, ValidationError

NODE_KINDS = ("conv", "maxpool", "upsample", "add", "concat", "bottleneck_conv", "output_head")
STAGES = ("encoder", "decoder", "pyramid", "head")

BUILTIN_BASES = ("resnet152", "densenet169", "xception", "inception_resnet_v2")

# Per-level encoder widths at /2, /4, /8, /16, /32 (descriptive summaries of
# the published models, shipped as fixture data).
_ENCODER_CHANNELS: dict[str, tuple[int, ...]] = {
    "resnet152": (64, 256, 512, 1024, 2048),
    "densenet169": (64, 256, 512, 1280, 1664),
    "xception": (64, 128, 256, 728, 2048),
    "inception_resnet_v2": (64, 192, 320, 1088, 1536),
}
_STEM_CHANNELS = 48
_DECODER_CHANNELS = (32, 48, 64, 128, 256)  # index = decoder level (0 = finest)
_PYRAMID_HEAD_CHANNELS = 64


@dataclass(frozen=True)
class LayerNode:
    id: str
    kind: str
    channels_out: int | None = None
    spatial_factor: int = 1
    stage: str | None = None
    level: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in NODE_KINDS:
            raise ValidationError(f"node {self.id!r}: unknown kind {self.kind!r}")
        if self.stage is not None and self.stage not in STAGES:
            raise ValidationError(f"node {self.id!r}: unknown stage {self.stage!r}")
        if self.kind in ("maxpool", "upsample") and self.spatial_factor != 2:
            raise ValidationError(f"node {self.id!r}: {self.kind} must have spatial_factor 2")
        if self.kind == "output_head" and self.channels_out not in (None, 1):
            raise ValidationError(f"node {self.id!r}: output head must emit a single channel")
        if self.kind in ("conv", "bottleneck_conv") and not self.channels_out:
            raise ValidationError(f"node {self.id!r}: {self.kind} needs channels_out")


@dataclass(frozen=True)
class ArchGraph:
    nodes: tuple[LayerNode, ...]
    edges: tuple[tuple[str, str], ...]
    skip_edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple((s, d) for s, d in self.edges))
        object.__setattr__(self, "skip_edges", tuple((s, d) for s, d in self.skip_edges))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node ids")
        known = set(ids)
        for s, d in self.edges:
            if s not in known or d not in known:
                raise ValidationError(f"edge ({s!r}, {d!r}) references unknown node")
        edge_set = set(self.edges)
        for e in self.skip_edges:
            if e not in edge_set:
                raise ValidationError(f"skip edge {e!r} is not an edge")
        heads = [n for n in self.nodes if n.kind == "output_head"]
        if len(heads) != 1:
            raise ValidationError(f"graph must have exactly one output head, found {len(heads)}")
        self._toposort()  # rejects cycles

    def node(self, node_id: str) -> LayerNode:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def predecessors(self, node_id: str) -> list[str]:
        return [s for s, d in self.edges if d == node_id]

    def _toposort(self) -> list[str]:
        indeg = {n.id: 0 for n in self.nodes}
        for _, d in self.edges:
            indeg[d] += 1
        ready = [i for i, v in indeg.items() if v == 0]
        order: list[str] = []
        while ready:
            cur = ready.pop()
            order.append(cur)
            for s, d in self.edges:
                if s == cur:
                    indeg[d] -= 1
                    if indeg[d] == 0:
                        ready.append(d)
        if len(order) != len(self.nodes):
            raise ValidationError("graph contains a cycle")
        return order


@dataclass(frozen=True)
class Violation:
    rule: str
    nodes: tuple[str, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> tuple[str, ...]:
        return tuple(v.rule for v in self.violations)


Shape = tuple[int, int, int]


def _infer(
    graph: ArchGraph, input_shape: Shape, collect: list[Violation] | None
) -> dict[str, Shape]:
    """Shape at every node. With collect=None problems raise; otherwise add
    R3/R4 violations and continue with a best-effort shape."""

    def problem(rule: str, nodes: tuple[str, ...], msg: str, exc: type[Exception]) -> None:
        if collect is None:
            raise exc(msg)
        collect.append(Violation(rule, nodes, msg))

    h, w, c = input_shape
    if h < 1 or w < 1 or c < 1:
        raise ValidationError(f"bad input shape {input_shape}")
    order = graph._toposort()
    sources = [i for i in order if not graph.predecessors(i)]
    if len(sources) != 1:
        raise ValidationError(f"graph must have exactly one source node, found {sources}")
    shapes: dict[str, Shape] = {}
    for node_id in order:
        node = graph.node(node_id)
        pred_shapes = [shapes[p] for p in graph.predecessors(node_id)]
        if not pred_shapes:
            pred_shapes = [input_shape]
        if node.kind in ("conv", "bottleneck_conv", "maxpool", "upsample", "output_head"):
            if len(pred_shapes) != 1:
                raise ValidationError(f"node {node_id!r}: {node.kind} takes exactly one input")
            ph, pw, pc = pred_shapes[0]
            if node.kind == "maxpool":
                if ph % 2 or pw % 2:
                    raise ValidationError(
                        f"node {node_id!r}: spatial {ph}x{pw} not divisible by 2; input "
                        f"dimensions must be divisible by 2^(number of pooling levels)"
                    )
                shapes[node_id] = (ph // 2, pw // 2, pc)
            elif node.kind == "upsample":
                shapes[node_id] = (ph * 2, pw * 2, pc)
            elif node.kind == "output_head":
                shapes[node_id] = (ph, pw, 1)
            else:
                shapes[node_id] = (ph, pw, int(node.channels_out))
        elif node.kind == "add":
            if len(pred_shapes) < 2:
                raise ValidationError(f"node {node_id!r}: add needs at least two operands")
            if len(set(pred_shapes)) != 1:
                problem(
                    "R3",
                    (node_id, *graph.predecessors(node_id)),
                    f"add node {node_id!r} has mismatched operand shapes {pred_shapes}; "
                    f"a bottleneck conv must equalize channels",
                    DimensionError,
                )
            shapes[node_id] = pred_shapes[0]
        else:  # concat
            if len(pred_shapes) < 2:
                raise ValidationError(f"node {node_id!r}: concat needs at least two operands")
            spatials = {(s[0], s[1]) for s in pred_shapes}
            if len(spatials) != 1:
                problem(
                    "R4",
                    (node_id, *graph.predecessors(node_id)),
                    f"concat node {node_id!r} operands disagree on spatial size {sorted(spatials)}",
                    DimensionError,
                )
            s0 = pred_shapes[0]
            shapes[node_id] = (s0[0], s0[1], sum(s[2] for s in pred_shapes))
    return shapes


def infer_shapes(graph: ArchGraph, input_shape: Shape) -> dict[str, Shape]:
    """Deterministic (h, w, c) at every node; raises on any inconsistency."""
    return _infer(graph, input_shape, collect=None)


def validate_unet_rules(graph: ArchGraph, input_shape: Shape = (192, 256, 3)) -> ValidationReport:
    violations: list[Violation] = []
    shapes = _infer(graph, input_shape, collect=violations)

    n_pool = sum(1 for n in graph.nodes if n.kind == "maxpool")
    decoder_ups = [n for n in graph.nodes if n.kind == "upsample" and n.stage != "pyramid"]
    if n_pool != len(decoder_ups):
        violations.append(
            Violation(
                "R1",
                tuple(n.id for n in decoder_ups),
                f"{n_pool} maxpool levels but {len(decoder_ups)} decoding upsample levels",
            )
        )

    for s, d in graph.skip_edges:
        if graph.node(d).kind != "add":
            violations.append(
                Violation("R2", (s, d), f"skip connection into {d!r} merges via "
                          f"{graph.node(d).kind!r}, expected an add node")
            )

    _check_pyramid(graph, shapes, violations)

    head = next(n for n in graph.nodes if n.kind == "output_head")
    if shapes[head.id][2] != 1:
        violations.append(Violation("R5", (head.id,), "output head must emit one channel"))

    return ValidationReport(tuple(violations))


def _check_pyramid(
    graph: ArchGraph, shapes: dict[str, Shape], violations: list[Violation]
) -> None:
    gathers = [n for n in graph.nodes if n.kind == "concat" and n.stage == "pyramid"]
    if len(gathers) != 1:
        violations.append(
            Violation(
                "R4",
                tuple(n.id for n in gathers),
                f"expected exactly one pyramid gathering concat, found {len(gathers)}",
            )
        )
        return
    gather = gathers[0]
    decoder_levels = {
        n.level for n in graph.nodes if n.stage == "decoder" and n.level is not None
    }
    gathered: list[int] = []
    operand_spatials: set[tuple[int, int]] = set()
    for src in graph.predecessors(gather.id):
        cur = src
        while True:
            node = graph.node(cur)
            if node.kind == "upsample" and node.stage == "pyramid":
                preds = graph.predecessors(cur)
                if len(preds) != 1:
                    break
                cur = preds[0]
                continue
            break
        endpoint = graph.node(cur)
        if endpoint.stage != "decoder" or endpoint.level is None:
            violations.append(
                Violation(
                    "R4",
                    (gather.id, src),
                    f"pyramid operand {src!r} does not trace back to a decoder level",
                )
            )
        else:
            gathered.append(endpoint.level)
        operand_spatials.add(shapes[src][:2])
    if decoder_levels and sorted(gathered) != sorted(decoder_levels):
        violations.append(
            Violation(
                "R4",
                (gather.id,),
                f"pyramid gathers decoder levels {sorted(gathered)}, expected one feature "
                f"per level {sorted(decoder_levels)}",
            )
        )
    if len(operand_spatials) > 1:
        violations.append(
            Violation(
                "R4",
                (gather.id,),
                f"pyramid operands must all reach the finest level, got {sorted(operand_spatials)}",
            )
        )


def builtin_graph(base: str) -> ArchGraph:
    """Level-summary wiring of one named pre-trained encoder."""
    if base not in _ENCODER_CHANNELS:
        raise ValidationError(f"unknown base encoder {base!r}; choose from {BUILTIN_BASES}")
    enc = (_STEM_CHANNELS,) + _ENCODER_CHANNELS[base]  # index = level 0..5
    dec = _DECODER_CHANNELS
    nodes: list[LayerNode] = []
    edges: list[tuple[str, str]] = []
    skips: list[tuple[str, str]] = []

    nodes.append(LayerNode("enc_conv0", "conv", enc[0], stage="encoder", level=0))
    prev = "enc_conv0"
    for k in range(1, 6):
        nodes.append(LayerNode(f"pool{k}", "maxpool", spatial_factor=2, stage="encoder", level=k))
        nodes.append(LayerNode(f"enc_conv{k}", "conv", enc[k], stage="encoder", level=k))
        edges += [(prev, f"pool{k}"), (f"pool{k}", f"enc_conv{k}")]
        prev = f"enc_conv{k}"

    for k in range(4, -1, -1):
        nodes.append(LayerNode(f"up{k}", "upsample", spatial_factor=2, stage="decoder", level=k))
        nodes.append(LayerNode(f"dec_conv{k}", "conv", dec[k], stage="decoder", level=k))
        nodes.append(
            LayerNode(f"skip_bottleneck{k}", "bottleneck_conv", dec[k], stage="decoder", level=k)
        )
        nodes.append(LayerNode(f"add{k}", "add", stage="decoder", level=k))
        edges += [
            (prev, f"up{k}"),
            (f"up{k}", f"dec_conv{k}"),
            (f"enc_conv{k}", f"skip_bottleneck{k}"),
            (f"dec_conv{k}", f"add{k}"),
            (f"skip_bottleneck{k}", f"add{k}"),
        ]
        skips.append((f"skip_bottleneck{k}", f"add{k}"))
        prev = f"add{k}"

    nodes.append(LayerNode("pyramid_gather", "concat", stage="pyramid"))
    for k in range(4, -1, -1):
        src = f"add{k}"
        for j in range(k):
            up_id = f"pyramid_up{k}_{j}"
            nodes.append(LayerNode(up_id, "upsample", spatial_factor=2, stage="pyramid", level=k))
            edges.append((src, up_id))
            src = up_id
        edges.append((src, "pyramid_gather"))

    nodes.append(LayerNode("pyramid_conv", "conv", _PYRAMID_HEAD_CHANNELS, stage="head"))
    nodes.append(LayerNode("head", "output_head", channels_out=1, stage="head"))
    edges += [("pyramid_gather", "pyramid_conv"), ("pyramid_conv", "head")]

    return ArchGraph(tuple(nodes), tuple(edges), tuple(skips))


def graph_to_json(graph: ArchGraph) -> dict:
    return {
        "nodes": [
            {
                k: v
                for k, v in {
                    "id": n.id,
                    "kind": n.kind,
                    "channels_out": n.channels_out,
                    "spatial_factor": n.spatial_factor,
                    "stage": n.stage,
                    "level": n.level,
                }.items()
                if v is not None
            }
            for n in graph.nodes
        ],
        "edges": [list(e) for e in graph.edges],
        "skip_edges": [list(e) for e in graph.skip_edges],
    }


def graph_from_json(obj: dict) -> ArchGraph:
    try:
        nodes = tuple(
            LayerNode(
                id=n["id"],
                kind=n["kind"],
                channels_out=n.get("channels_out"),
                spatial_factor=n.get("spatial_factor", 1),
                stage=n.get("stage"),
                level=n.get("level"),
            )
            for n in obj["nodes"]
        )
        edges = tuple((s, d) for s, d in obj["edges"])
        skips = tuple((s, d) for s, d in obj.get("skip_edges", []))
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed graph description: {e}") from e
    return ArchGraph(nodes, edges, skips)


def load_graph(path: str | Path) -> ArchGraph:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"graph file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"graph file is not valid JSON: {e}") from e
    return graph_from_json(obj)
