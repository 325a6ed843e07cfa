import json

import numpy as np
import pytest

from dyshape import ir, patching


MINIMAL = json.dumps({
    "name": "mini",
    "inputs": [{"id": "x", "dtype": "f32", "shape": [1, 3, 4, 4]}],
    "initializers": [],
    "nodes": [{"op": "Relu", "inputs": ["x"], "outputs": ["y"]}],
    "outputs": ["y"],
})


def test_parse_minimal():
    g = ir.parse_graph(MINIMAL)
    assert g.name == "mini"
    assert len(g.nodes) == 1 and len(g.inputs) == 1
    assert g.outputs == ["y"]
    assert ir.validate(g) == []


def test_parse_arity_mismatch():
    bad = json.loads(MINIMAL)
    bad["nodes"] = [{"op": "Conv", "inputs": ["x"], "outputs": ["y"]}]
    with pytest.raises(ir.GraphSyntaxError, match="Conv expects 2"):
        ir.parse_graph(json.dumps(bad))


def test_parse_unknown_op():
    bad = json.loads(MINIMAL)
    bad["nodes"][0]["op"] = "Frobnicate"
    with pytest.raises(ir.GraphSyntaxError, match="unknown op"):
        ir.parse_graph(json.dumps(bad))


def test_parse_duplicate_id():
    bad = json.loads(MINIMAL)
    bad["nodes"][0]["outputs"] = ["x"]
    with pytest.raises(ir.GraphSyntaxError, match="duplicate tensor id"):
        ir.parse_graph(json.dumps(bad))


def test_parse_syntax_error_position():
    with pytest.raises(ir.GraphSyntaxError, match=r"line \d+ column \d+"):
        ir.parse_graph("{ not json")


def _chain():
    return ir.build_graph(
        "chain",
        [ir.TensorDef("x", "f32", (2, 2), "input")],
        [],
        [ir.Node("Relu", ("x",), ("a",), {}, {}),
         ir.Node("Sigmoid", ("a",), ("b",), {}, {}),
         ir.Node("Round", ("b",), ("c",), {}, {})],
        ["c"])


def test_validate_clean_chain():
    assert ir.validate(_chain()) == []


def test_validate_cycle():
    g = ir.build_graph(
        "cyc",
        [ir.TensorDef("x", "f32", (2,), "input")],
        [],
        [ir.Node("Add", ("x", "b"), ("a",), {}, {}),
         ir.Node("Relu", ("a",), ("b",), {}, {})],
        ["b"])
    msgs = ir.validate(g)
    assert any("cycle" in m for m in msgs)


def test_validate_double_producer():
    g = ir.build_graph(
        "dup",
        [ir.TensorDef("x", "f32", (2,), "input")],
        [],
        [ir.Node("Relu", ("x",), ("t0",), {}, {}),
         ir.Node("Sigmoid", ("x",), ("t0",), {}, {})],
        ["t0"])
    msgs = ir.validate(g)
    assert any("t0" in m and "again" in m for m in msgs)


def test_validate_missing_output_and_input():
    g = ir.build_graph(
        "miss",
        [ir.TensorDef("x", "f32", (2,), "input")],
        [],
        [ir.Node("Relu", ("ghost",), ("a",), {}, {})],
        ["nowhere"])
    msgs = ir.validate(g)
    assert any("ghost" in m for m in msgs)
    assert any("nowhere" in m for m in msgs)


def test_validate_initializer_count():
    g = ir.build_graph(
        "init",
        [],
        [ir.TensorDef("w", "f32", (2, 2), "initializer",
                      np.zeros(3, np.float32))],
        [ir.Node("Relu", ("w",), ("a",), {}, {})],
        ["a"])
    msgs = ir.validate(g)
    assert any("3 elements" in m for m in msgs)


def test_toposort_chain_and_diamond():
    assert ir.toposort_dfs(_chain()) == [0, 1, 2]
    g = ir.build_graph(
        "diamond",
        [ir.TensorDef("x", "f32", (2, 2), "input")],
        [],
        [ir.Node("Relu", ("x",), ("a",), {}, {}),      # A
         ir.Node("Sigmoid", ("a",), ("b",), {}, {}),   # B
         ir.Node("Round", ("a",), ("c",), {}, {}),     # C
         ir.Node("Add", ("b", "c"), ("d",), {}, {})],  # D consumes B first
        ["d"])
    assert ir.toposort_dfs(g) == [0, 1, 2, 3]
    # Swapping D's declared input order flips the B/C visit order.
    g.nodes[3] = ir.Node("Add", ("c", "b"), ("d",), {}, {}, index=3)
    assert ir.toposort_dfs(g) == [0, 2, 1, 3]


def test_toposort_includes_unreachable_nodes():
    g = ir.build_graph(
        "dead",
        [ir.TensorDef("x", "f32", (2,), "input")],
        [],
        [ir.Node("Relu", ("x",), ("a",), {}, {}),
         ir.Node("Sigmoid", ("x",), ("dead1",), {}, {})],
        ["a"])
    order = ir.toposort_dfs(g)
    assert sorted(order) == [0, 1]


def test_round_trip_stability_routing_graph():
    cfg = patching.SplitConfig()
    g = patching.build_routing_graph(cfg, [(2, 16)] * 3, seed=3)
    s1 = ir.serialize_graph(g)
    g2 = ir.parse_graph(s1)
    s2 = ir.serialize_graph(g2)
    assert s1 == s2
    # Determinism of traversal: Switch before all path nodes, Combine last.
    order = ir.toposort_dfs(g2)
    ops_in_order = [g2.nodes[i].op_kind for i in order]
    assert ops_in_order[0] == "Switch"
    assert ops_in_order[-1] == "Combine"


def test_captures_order_dependencies():
    inner_out = "cap_out"
    then_g = ir.build_graph(
        "then", [], [],
        [ir.Node("Relu", ("hidden",), (inner_out,), {}, {})], [inner_out])
    else_g = ir.build_graph(
        "else", [], [],
        [ir.Node("Sigmoid", ("hidden",), ("cap_out2",), {}, {})], ["cap_out2"])
    g = ir.build_graph(
        "cap",
        [ir.TensorDef("x", "f32", (2,), "input"),
         ir.TensorDef("c", "bool", (), "input")],
        [],
        [ir.Node("If", ("c",), ("o",), {},
                 {"then_branch": then_g, "else_branch": else_g}),
         ir.Node("Relu", ("x",), ("hidden",), {}, {})],
        ["o"])
    # The If captures `hidden`, so its producer must come first.
    assert ir.validate(g) == []
    order = ir.toposort_dfs(g)
    assert order.index(1) < order.index(0)
    assert ir.node_captures(g.nodes[0]) == ("hidden",)


def test_validate_control_flow_arity():
    body = ir.build_graph(
        "body",
        [ir.TensorDef("i", "i64", (), "input")],  # missing the carried input
        [],
        [ir.Node("Relu", ("seed",), ("nxt",), {}, {})],
        ["nxt"])
    g = ir.build_graph(
        "loop",
        [ir.TensorDef("seed", "f32", (2,), "input")],
        [ir.TensorDef("trip", "i64", (), "initializer",
                      np.array(2, np.int64))],
        [ir.Node("Loop", ("trip", "seed"), ("out",), {}, {"body": body})],
        ["out"])
    msgs = ir.validate(g)
    assert any("body takes 1 inputs" in m for m in msgs)

    then_g = ir.build_graph("t", [], [],
                            [ir.Node("Relu", ("x",), ("a",), {}, {})], ["a"])
    else_g = ir.build_graph("e", [], [],
                            [ir.Node("Relu", ("x",), ("b",), {}, {})], ["b"])
    g2 = ir.build_graph(
        "if",
        [ir.TensorDef("x", "f32", (2,), "input"),
         ir.TensorDef("c", "bool", (), "input")],
        [],
        [ir.Node("If", ("c",), ("o1", "o2"), {},
                 {"then_branch": then_g, "else_branch": else_g})],
        ["o1"])
    msgs2 = ir.validate(g2)
    assert any("yields 1 outputs, node declares 2" in m for m in msgs2)


def test_valid_graphs_have_dependency_respecting_toposort():
    from randgraphs import random_graph
    for seed in range(10):
        g, _, _ = random_graph(seed)
        assert ir.validate(g) == []
        order = ir.toposort_dfs(g)
        assert sorted(order) == list(range(len(g.nodes)))
        pos = {idx: k for k, idx in enumerate(order)}
        prod = ir.producer_map(g)
        for node in g.nodes:
            for tid in ir.node_input_ids(node):
                if tid in prod:
                    assert pos[prod[tid]] < pos[node.index]


def test_sidecar_initializer(tmp_path):
    from dyshape import interp
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    side = tmp_path / "weights.bin"
    with open(side, "wb") as f:
        f.write(b"junk")  # nonzero offset
        off = f.tell()
        interp.write_tensor_stream(f, arr)
    obj = {
        "name": "side",
        "inputs": [],
        "initializers": [{"id": "w", "dtype": "f32", "shape": [2, 3],
                          "data": {"file": "weights.bin", "byte_offset": off}}],
        "nodes": [{"op": "Relu", "inputs": ["w"], "outputs": ["y"]}],
        "outputs": ["y"],
    }
    path = tmp_path / "g.json"
    path.write_text(json.dumps(obj))
    g = ir.load_graph(str(path))
    assert np.array_equal(g.initializers[0].data, arr)
