from __future__ import annotations

import json

import pytest

from dermseg.archspec import (
    ArchGraph,
    BUILTIN_BASES,
    LayerNode,
    builtin_graph,
    graph_from_json,
    graph_to_json,
    infer_shapes,
    load_graph,
    validate_unet_rules,
)
from dermseg.errors import DataError, DimensionError, ValidationError


def toy_two_level(with_bottleneck: bool) -> ArchGraph:
    nodes = [
        LayerNode("c0", "conv", 8, stage="encoder", level=0),
        LayerNode("p1", "maxpool", spatial_factor=2, stage="encoder", level=1),
        LayerNode("c1", "conv", 16, stage="encoder", level=1),
        LayerNode("u0", "upsample", spatial_factor=2, stage="decoder", level=0),
        LayerNode("d0", "conv", 16, stage="decoder", level=0),
        LayerNode("a0", "add", stage="decoder", level=0),
        LayerNode("gather", "concat", stage="pyramid"),
        LayerNode("head", "output_head", channels_out=1, stage="head"),
    ]
    edges = [
        ("c0", "p1"),
        ("p1", "c1"),
        ("c1", "u0"),
        ("u0", "d0"),
        ("d0", "a0"),
        ("gather", "head"),
        ("a0", "gather"),
    ]
    if with_bottleneck:
        nodes.append(LayerNode("b0", "bottleneck_conv", 16, stage="decoder", level=0))
        edges += [("c0", "b0"), ("b0", "a0")]
        skips = [("b0", "a0")]
    else:
        edges += [("c0", "a0")]
        skips = [("c0", "a0")]
    # a second pyramid operand so the gather is a real concat
    nodes.append(LayerNode("d0b", "bottleneck_conv", 16, stage="decoder", level=0))
    edges += [("a0", "d0b"), ("d0b", "gather")]
    return ArchGraph(tuple(nodes), tuple(edges), tuple(skips))


def mutate(graph: ArchGraph, fn) -> ArchGraph:
    obj = graph_to_json(graph)
    fn(obj)
    return graph_from_json(obj)


def drop_decoder_upsample(obj: dict) -> None:
    obj["nodes"] = [n for n in obj["nodes"] if n["id"] != "up4"]
    edges = [e for e in obj["edges"] if "up4" not in e]
    edges.append(["enc_conv5", "dec_conv4"])
    obj["edges"] = edges


def remove_bottleneck(obj: dict) -> None:
    obj["nodes"] = [n for n in obj["nodes"] if n["id"] != "skip_bottleneck4"]
    obj["edges"] = [e for e in obj["edges"] if "skip_bottleneck4" not in e] + [
        ["enc_conv4", "add4"]
    ]
    obj["skip_edges"] = [e for e in obj["skip_edges"] if e[0] != "skip_bottleneck4"] + [
        ["enc_conv4", "add4"]
    ]


def merge_as_concat(obj: dict) -> None:
    for n in obj["nodes"]:
        if n["id"] == "add4":
            n["kind"] = "concat"


class TestInferShapes:
    def test_deepest_level_spatial(self):
        g = builtin_graph("resnet152")
        shapes = infer_shapes(g, (192, 256, 3))
        assert shapes["enc_conv5"][:2] == (6, 8)  # 192/32, 256/32
        assert shapes["head"] == (192, 256, 1)

    def test_indivisible_input_rejected(self):
        g = builtin_graph("resnet152")
        with pytest.raises(ValidationError, match="divisible"):
            infer_shapes(g, (100, 100, 3))

    def test_toy_graph_without_bottleneck_fails_strict_inference(self):
        g = toy_two_level(with_bottleneck=False)
        with pytest.raises(DimensionError, match="bottleneck"):
            infer_shapes(g, (8, 8, 3))

    def test_toy_graph_with_bottleneck_passes(self):
        g = toy_two_level(with_bottleneck=True)
        shapes = infer_shapes(g, (8, 8, 3))
        assert shapes["a0"] == (8, 8, 16)
        assert shapes["head"] == (8, 8, 1)

    def test_concat_sums_channels(self):
        g = toy_two_level(with_bottleneck=True)
        shapes = infer_shapes(g, (8, 8, 3))
        assert shapes["gather"][2] == 32


class TestValidateRules:
    @pytest.mark.parametrize("base", BUILTIN_BASES)
    def test_builtin_graphs_validate_clean(self, base):
        report = validate_unet_rules(builtin_graph(base))
        assert report.ok, report.violations

    @pytest.mark.parametrize("base", BUILTIN_BASES)
    def test_builtins_have_five_encoder_levels(self, base):
        g = builtin_graph(base)
        assert sum(1 for n in g.nodes if n.kind == "maxpool") == 5

    def test_output_spatial_equals_input_spatial_when_clean(self):
        for base in BUILTIN_BASES:
            g = builtin_graph(base)
            for shape in ((192, 256, 3), (384, 576, 3), (64, 64, 3)):
                assert validate_unet_rules(g, shape).ok
                shapes = infer_shapes(g, shape)
                assert shapes["head"][:2] == shape[:2]

    def test_dropped_upsample_flags_r1(self):
        g = mutate(builtin_graph("xception"), drop_decoder_upsample)
        report = validate_unet_rules(g)
        assert "R1" in report.rules()

    def test_removed_bottleneck_flags_r3(self):
        g = mutate(builtin_graph("densenet169"), remove_bottleneck)
        report = validate_unet_rules(g)
        r3 = [v for v in report.violations if v.rule == "R3"]
        assert r3, report.violations
        assert any("add4" in v.nodes and "enc_conv4" in v.nodes for v in r3)

    def test_concat_merge_flags_r2(self):
        g = mutate(builtin_graph("inception_resnet_v2"), merge_as_concat)
        report = validate_unet_rules(g)
        assert "R2" in report.rules()

    def test_missing_pyramid_level_flags_r4(self):
        def cut_pyramid_operand(obj):
            obj["edges"] = [e for e in obj["edges"] if e != ["add0", "pyramid_gather"]]

        g = mutate(builtin_graph("resnet152"), cut_pyramid_operand)
        report = validate_unet_rules(g)
        assert "R4" in report.rules()

    def test_violations_stable_under_relabeling(self):
        broken = mutate(builtin_graph("resnet152"), remove_bottleneck)

        def relabel(obj):
            table = {n["id"]: f"n_{i}" for i, n in enumerate(obj["nodes"])}
            for n in obj["nodes"]:
                n["id"] = table[n["id"]]
            obj["edges"] = [[table[s], table[d]] for s, d in obj["edges"]]
            obj["skip_edges"] = [[table[s], table[d]] for s, d in obj["skip_edges"]]

        relabeled = mutate(broken, relabel)
        a = sorted(v.rule for v in validate_unet_rules(broken).violations)
        b = sorted(v.rule for v in validate_unet_rules(relabeled).violations)
        assert a == b


class TestBuiltinsAndGraphIO:
    def test_unknown_base_rejected(self):
        with pytest.raises(ValidationError, match="unknown base"):
            builtin_graph("vgg16")

    def test_json_round_trip(self, tmp_path):
        g = builtin_graph("xception")
        path = tmp_path / "g.json"
        path.write_text(json.dumps(graph_to_json(g)))
        again = load_graph(path)
        assert graph_to_json(again) == graph_to_json(g)
        assert validate_unet_rules(again).ok

    def test_malformed_graph_file(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{\"nodes\": [{\"kind\": \"conv\"}]}")
        with pytest.raises(DataError):
            load_graph(p)

    def test_cycle_rejected(self):
        nodes = (
            LayerNode("a", "conv", 4),
            LayerNode("b", "conv", 4),
            LayerNode("h", "output_head", 1),
        )
        with pytest.raises(ValidationError, match="cycle"):
            ArchGraph(nodes, (("a", "b"), ("b", "a"), ("b", "h")))

    def test_two_heads_rejected(self):
        nodes = (
            LayerNode("a", "conv", 4),
            LayerNode("h1", "output_head", 1),
            LayerNode("h2", "output_head", 1),
        )
        with pytest.raises(ValidationError, match="output head"):
            ArchGraph(nodes, (("a", "h1"), ("a", "h2")))

    def test_kind_invariants(self):
        with pytest.raises(ValidationError):
            LayerNode("x", "maxpool", spatial_factor=3)
        with pytest.raises(ValidationError):
            LayerNode("x", "output_head", channels_out=2)
        with pytest.raises(ValidationError):
            LayerNode("x", "conv")  # conv needs channels_out
