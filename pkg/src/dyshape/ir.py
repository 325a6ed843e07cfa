"""Computation-graph IR: tensors, nodes, graphs, validation, traversal, text I/O.

Graphs are SSA: every tensor id is produced by exactly one node or declared
as an input/initializer, and the dependency relation is acyclic.  Nested
sub-graphs (If branches, Loop bodies, fused-region bodies) may reference
enclosing tensors by id ("captures"); captured tensors are read-only and
ids are unique across the whole nesting tree.

The text form is JSON with a fixed key order, so a parse/serialize round
trip is byte-stable and graph files diff cleanly.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import ops

DTYPE_SIZE = {"f32": 4, "i64": 8, "bool": 1}
NP_DTYPE = {"f32": np.float32, "i64": np.int64, "bool": np.bool_}


class GraphError(Exception):
    pass


class GraphSyntaxError(GraphError):
    pass


class GraphCycleError(GraphError):
    pass


@dataclass
class TensorDef:
    """Declared tensor: graph input or initializer.

    `shape` entries are non-negative ints, or bare symbol names for the
    dynamic dimensions of graph inputs.  Initializers carry concrete data.
    """

    id: str
    dtype: str
    shape: tuple
    role: str = "input"  # input | initializer
    data: Optional[np.ndarray] = None


@dataclass
class Node:
    op_kind: str
    inputs: tuple
    outputs: tuple
    attrs: dict = field(default_factory=dict)
    subgraphs: dict = field(default_factory=dict)
    index: int = -1


@dataclass
class Graph:
    name: str
    inputs: list
    initializers: list
    nodes: list
    outputs: list

    def tensor_def(self, tid: str) -> Optional[TensorDef]:
        for td in self.inputs:
            if td.id == tid:
                return td
        for td in self.initializers:
            if td.id == tid:
                return td
        return None

    def symbols(self) -> list[str]:
        """Symbol names declared in input shapes, in declaration order."""
        seen: list[str] = []
        for td in self.inputs:
            for d in td.shape:
                if isinstance(d, str) and d not in seen:
                    seen.append(d)
        return seen


def producer_map(g: Graph) -> dict[str, int]:
    """Tensor id -> index of the node producing it (this scope only)."""
    out: dict[str, int] = {}
    for node in g.nodes:
        for tid in node.outputs:
            out[tid] = node.index
    return out


def consumer_map(g: Graph) -> dict[str, list[int]]:
    """Tensor id -> indices of nodes consuming it (captures included)."""
    out: dict[str, list[int]] = {}
    for node in g.nodes:
        for tid in node_input_ids(node):
            out.setdefault(tid, []).append(node.index)
    return out


def node_captures(node: Node) -> tuple[str, ...]:
    """Outer tensor ids referenced inside the node's sub-graphs, in first-use order."""
    captured: list[str] = []

    def scan(g: Graph, defined: set[str]) -> None:
        local = set(defined)
        for td in list(g.inputs) + list(g.initializers):
            local.add(td.id)
        for n in g.nodes:
            for tid in n.inputs:
                if tid not in local and tid not in captured:
                    captured.append(tid)
            inner_defined = set(local)
            for _, sub in sorted(n.subgraphs.items()):
                scan(sub, inner_defined)
            for tid in n.outputs:
                local.add(tid)
        for tid in g.outputs:
            if tid not in local and tid not in captured:
                captured.append(tid)

    for _, sub in sorted(node.subgraphs.items()):
        scan(sub, set())
    return tuple(captured)


def node_input_ids(node: Node, with_captures: bool = True) -> tuple[str, ...]:
    if not with_captures or not node.subgraphs:
        return tuple(node.inputs)
    extra = tuple(t for t in node_captures(node) if t not in node.inputs)
    return tuple(node.inputs) + extra


def all_tensor_ids(g: Graph) -> list[str]:
    """Every tensor id in the graph including nested sub-graphs, in
    declaration/production order."""
    out: list[str] = []

    def walk(graph: Graph) -> None:
        for td in list(graph.inputs) + list(graph.initializers):
            out.append(td.id)
        for node in graph.nodes:
            for _, sub in sorted(node.subgraphs.items()):
                walk(sub)
            out.extend(node.outputs)

    walk(g)
    return out


def iter_graphs(g: Graph) -> Iterator[Graph]:
    """The graph itself followed by every nested sub-graph, depth-first."""
    yield g
    for node in g.nodes:
        for _, sub in sorted(node.subgraphs.items()):
            yield from iter_graphs(sub)


# ---------------------------------------------------------------------------
# Traversal


def toposort_dfs(g: Graph) -> list[int]:
    """Deterministic topological order of node indices.

    Depth-first from the graph outputs, visiting producers in declared
    input order (captures after explicit inputs), emitting each node after
    its producers.  Nodes unreachable from the outputs are appended by the
    same walk started from each in index order.
    """
    prod = producer_map(g)
    order: list[int] = []
    state: dict[int, int] = {}  # 0 = on stack, 1 = done
    deps_cache: dict[int, list[int]] = {}

    def deps_of(idx: int) -> list[int]:
        if idx not in deps_cache:
            deps_cache[idx] = [
                prod[t] for t in node_input_ids(g.nodes[idx]) if t in prod
            ]
        return deps_cache[idx]

    def visit(root: int) -> None:
        stack: list[tuple[int, int]] = [(root, 0)]
        while stack:
            idx, child = stack.pop()
            if child == 0:
                if state.get(idx) == 1:
                    continue
                if state.get(idx) == 0:
                    raise GraphCycleError(
                        f"graph {g.name!r}: cycle involving node {idx}")
                state[idx] = 0
            deps = deps_of(idx)
            advanced = False
            for k in range(child, len(deps)):
                dep = deps[k]
                if state.get(dep) == 1:
                    continue
                if state.get(dep) == 0:
                    raise GraphCycleError(
                        f"graph {g.name!r}: cycle involving nodes {dep} and {idx}")
                stack.append((idx, k + 1))
                stack.append((dep, 0))
                advanced = True
                break
            if not advanced:
                state[idx] = 1
                order.append(idx)

    for tid in g.outputs:
        if tid in prod and state.get(prod[tid]) != 1:
            visit(prod[tid])
    for idx in range(len(g.nodes)):
        if state.get(idx) != 1:
            visit(idx)
    return order


# ---------------------------------------------------------------------------
# Validation


def validate(g: Graph) -> list[str]:
    """All invariant violations, empty when the graph is well formed."""
    violations: list[str] = []
    seen: dict[str, str] = {}

    def declare(tid: str, where: str) -> None:
        if tid in seen:
            violations.append(
                f"tensor {tid!r}: defined by {seen[tid]} and again by {where}")
        else:
            seen[tid] = where

    def check(graph: Graph, visible: set[str], path: str) -> None:
        local: set[str] = set()
        for td in list(graph.inputs) + list(graph.initializers):
            declare(td.id, f"{path}{td.role} {td.id!r}")
            local.add(td.id)
            if td.dtype not in DTYPE_SIZE:
                violations.append(f"tensor {td.id!r}: unknown dtype {td.dtype!r}")
            for d in td.shape:
                if isinstance(d, int):
                    if d < 0:
                        violations.append(f"tensor {td.id!r}: negative dimension {d}")
                elif not isinstance(d, str):
                    violations.append(f"tensor {td.id!r}: bad shape entry {d!r}")
                elif td.role == "initializer":
                    violations.append(
                        f"initializer {td.id!r}: symbolic dimension {d!r} not allowed")
            if td.role == "initializer":
                if td.data is None:
                    violations.append(f"initializer {td.id!r}: missing data")
                elif all(isinstance(d, int) for d in td.shape):
                    want = int(np.prod(td.shape, dtype=np.int64)) if td.shape else 1
                    if td.data.size != want:
                        violations.append(
                            f"initializer {td.id!r}: data has {td.data.size} elements, "
                            f"shape implies {want}")
        produced: set[str] = set()
        for node in graph.nodes:
            where = f"{path}node {node.index} ({node.op_kind})"
            try:
                sig = ops.signature(node.op_kind)
            except ops.UnsupportedOperatorError:
                violations.append(f"{where}: unknown operator")
                for tid in node.outputs:
                    declare(tid, where)
                    produced.add(tid)
                continue
            nin, nout = len(node.inputs), len(node.outputs)
            if nin < sig.min_inputs or (sig.max_inputs is not None and nin > sig.max_inputs):
                hi = "inf" if sig.max_inputs is None else sig.max_inputs
                violations.append(
                    f"{where}: expects {sig.min_inputs}..{hi} inputs, got {nin}")
            if nout < sig.min_outputs or (sig.max_outputs is not None and nout > sig.max_outputs):
                hi = "inf" if sig.max_outputs is None else sig.max_outputs
                violations.append(
                    f"{where}: expects {sig.min_outputs}..{hi} outputs, got {nout}")
            for name in sig.subgraphs:
                if name not in node.subgraphs:
                    violations.append(f"{where}: missing sub-graph {name!r}")
            for name, spec in sig.attrs.items():
                if spec.required and name not in node.attrs:
                    violations.append(f"{where}: missing required attribute {name!r}")
            if node.op_kind == "If":
                for bname in ("then_branch", "else_branch"):
                    sub = node.subgraphs.get(bname)
                    if sub is not None and len(sub.outputs) < len(node.outputs):
                        violations.append(
                            f"{where}: branch {bname!r} yields {len(sub.outputs)} "
                            f"outputs, node declares {len(node.outputs)}")
            if node.op_kind == "Loop":
                body = node.subgraphs.get("body")
                if body is not None:
                    if len(body.inputs) != len(node.inputs):
                        violations.append(
                            f"{where}: body takes {len(body.inputs)} inputs, "
                            f"expected iteration counter plus "
                            f"{len(node.inputs) - 1} carried")
                    if len(body.outputs) != len(node.inputs) - 1:
                        violations.append(
                            f"{where}: body yields {len(body.outputs)} carried "
                            f"values, expected {len(node.inputs) - 1}")
                    if len(node.outputs) > max(0, len(node.inputs) - 1):
                        violations.append(
                            f"{where}: declares more outputs than carried values")
            if node.op_kind == "FusedRegion":
                body = node.subgraphs.get("body")
                if body is not None and len(body.outputs) != len(node.outputs):
                    violations.append(
                        f"{where}: body yields {len(body.outputs)} outputs, "
                        f"node declares {len(node.outputs)}")
            for tid in node.outputs:
                declare(tid, where)
                produced.add(tid)
        visible_here = visible | local | produced
        for node in graph.nodes:
            where = f"{path}node {node.index} ({node.op_kind})"
            for tid in node.inputs:
                if tid not in visible_here:
                    violations.append(f"{where}: input {tid!r} is not defined")
            for _, sub in sorted(node.subgraphs.items()):
                check(sub, visible_here, f"{path}{node.op_kind}[{node.index}]/")
        for tid in graph.outputs:
            if tid not in visible_here:
                violations.append(f"{path}graph output {tid!r} does not exist")
        # Acyclicity of this scope's dependency relation.
        try:
            toposort_dfs(graph)
        except GraphCycleError as e:
            violations.append(str(e))

    check(g, set(), "")
    return violations


# ---------------------------------------------------------------------------
# Text format


def _shape_to_obj(shape) -> list:
    return [d if isinstance(d, int) else str(d) for d in shape]


def _data_to_obj(td: TensorDef) -> list:
    flat = td.data.ravel()
    if td.dtype == "f32":
        return [float(x) for x in flat]
    return [int(x) for x in flat]


def _graph_to_obj(g: Graph) -> dict:
    obj: dict = {"name": g.name}
    obj["inputs"] = [
        {"id": td.id, "dtype": td.dtype, "shape": _shape_to_obj(td.shape)}
        for td in g.inputs
    ]
    obj["initializers"] = [
        {"id": td.id, "dtype": td.dtype, "shape": _shape_to_obj(td.shape),
         "data": _data_to_obj(td)}
        for td in g.initializers
    ]
    nodes = []
    for node in g.nodes:
        nobj: dict = {
            "op": node.op_kind,
            "inputs": list(node.inputs),
            "outputs": list(node.outputs),
        }
        if node.attrs:
            nobj["attrs"] = {k: node.attrs[k] for k in sorted(node.attrs)}
        if node.subgraphs:
            nobj["subgraphs"] = {
                k: _graph_to_obj(node.subgraphs[k]) for k in sorted(node.subgraphs)
            }
        nodes.append(nobj)
    obj["nodes"] = nodes
    obj["outputs"] = list(g.outputs)
    return obj


def serialize_graph(g: Graph) -> str:
    return json.dumps(_graph_to_obj(g), indent=2, ensure_ascii=False) + "\n"


def graph_sha256(g: Graph) -> str:
    return hashlib.sha256(serialize_graph(g).encode("utf-8")).hexdigest()


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise GraphSyntaxError(msg)


def _tensor_from_obj(obj: dict, role: str, where: str, base_dir) -> TensorDef:
    _expect(isinstance(obj, dict), f"{where}: expected an object")
    for key in ("id", "dtype", "shape"):
        _expect(key in obj, f"{where}: missing key {key!r}")
    tid = obj["id"]
    _expect(isinstance(tid, str) and tid, f"{where}: id must be a non-empty string")
    dtype = obj["dtype"]
    _expect(dtype in DTYPE_SIZE, f"{where}: unknown dtype {dtype!r}")
    shape = []
    for d in obj["shape"]:
        if isinstance(d, bool) or not isinstance(d, (int, str)):
            raise GraphSyntaxError(f"{where}: bad shape entry {d!r}")
        shape.append(d)
    data = None
    if role == "initializer":
        _expect("data" in obj, f"{where}: initializer needs data")
        raw = obj["data"]
        np_dt = NP_DTYPE[dtype]
        if isinstance(raw, dict):
            _expect("file" in raw, f"{where}: sidecar data needs a file")
            from . import interp  # local import to avoid a cycle

            path = raw["file"]
            if base_dir is not None:
                path = os.path.join(base_dir, path)
            with open(path, "rb") as f:
                f.seek(int(raw.get("byte_offset", 0)))
                arr = interp.read_tensor_stream(f)
            data = arr.astype(np_dt, copy=False).reshape([int(d) for d in shape])
        else:
            _expect(isinstance(raw, list), f"{where}: data must be a list or sidecar ref")
            data = np.array(raw, dtype=np_dt).reshape([int(d) for d in shape])
    return TensorDef(id=tid, dtype=dtype, shape=tuple(shape), role=role, data=data)


def _graph_from_obj(obj: dict, where: str, base_dir) -> Graph:
    _expect(isinstance(obj, dict), f"{where}: graph must be an object")
    for key in ("name", "inputs", "nodes", "outputs"):
        _expect(key in obj, f"{where}: missing key {key!r}")
    name = obj["name"]
    _expect(isinstance(name, str), f"{where}: name must be a string")
    seen: set[str] = set()

    def claim(tid: str, spot: str) -> None:
        if tid in seen:
            raise GraphSyntaxError(f"{spot}: duplicate tensor id {tid!r}")
        seen.add(tid)

    inputs = []
    for i, t in enumerate(obj["inputs"]):
        td = _tensor_from_obj(t, "input", f"{where}.inputs[{i}]", base_dir)
        claim(td.id, f"{where}.inputs[{i}]")
        inputs.append(td)
    initializers = []
    for i, t in enumerate(obj.get("initializers", [])):
        td = _tensor_from_obj(t, "initializer", f"{where}.initializers[{i}]", base_dir)
        claim(td.id, f"{where}.initializers[{i}]")
        initializers.append(td)
    nodes = []
    for i, n in enumerate(obj["nodes"]):
        spot = f"{where}.nodes[{i}]"
        _expect(isinstance(n, dict), f"{spot}: node must be an object")
        for key in ("op", "inputs", "outputs"):
            _expect(key in n, f"{spot}: missing key {key!r}")
        op = n["op"]
        try:
            sig = ops.signature(op)
        except ops.UnsupportedOperatorError:
            raise GraphSyntaxError(f"{spot}: unknown op {op!r}") from None
        ins = n["inputs"]
        outs = n["outputs"]
        _expect(isinstance(ins, list) and all(isinstance(t, str) for t in ins),
                f"{spot}: inputs must be a list of tensor ids")
        _expect(isinstance(outs, list) and all(isinstance(t, str) for t in outs),
                f"{spot}: outputs must be a list of tensor ids")
        if len(ins) < sig.min_inputs or (sig.max_inputs is not None and len(ins) > sig.max_inputs):
            hi = "inf" if sig.max_inputs is None else sig.max_inputs
            raise GraphSyntaxError(
                f"{spot}: {op} expects {sig.min_inputs}..{hi} inputs, got {len(ins)}")
        if len(outs) < sig.min_outputs or (sig.max_outputs is not None and len(outs) > sig.max_outputs):
            hi = "inf" if sig.max_outputs is None else sig.max_outputs
            raise GraphSyntaxError(
                f"{spot}: {op} expects {sig.min_outputs}..{hi} outputs, got {len(outs)}")
        for tid in outs:
            claim(tid, spot)
        attrs = n.get("attrs", {})
        _expect(isinstance(attrs, dict), f"{spot}: attrs must be an object")
        for k, v in attrs.items():
            ok = isinstance(v, (int, float, str)) and not isinstance(v, bool)
            ok = ok or (isinstance(v, list) and all(
                isinstance(x, int) and not isinstance(x, bool) for x in v))
            _expect(ok, f"{spot}: attribute {k!r} has unsupported value {v!r}")
        subgraphs = {}
        for sname, sobj in n.get("subgraphs", {}).items():
            subgraphs[sname] = _graph_from_obj(sobj, f"{spot}.subgraphs[{sname}]", base_dir)
        nodes.append(Node(op_kind=op, inputs=tuple(ins), outputs=tuple(outs),
                          attrs=attrs, subgraphs=subgraphs, index=i))
    outputs = obj["outputs"]
    _expect(isinstance(outputs, list) and all(isinstance(t, str) for t in outputs),
            f"{where}: outputs must be a list of tensor ids")
    return Graph(name=name, inputs=inputs, initializers=initializers,
                 nodes=nodes, outputs=list(outputs))


def parse_graph(text: str, base_dir: Optional[str] = None) -> Graph:
    """Parse the JSON graph format; raises GraphSyntaxError with a position
    or path on malformed input."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphSyntaxError(
            f"line {e.lineno} column {e.colno}: {e.msg}") from None
    return _graph_from_obj(obj, "$", base_dir)


def load_graph(path: str) -> Graph:
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    return parse_graph(text, base_dir=os.path.dirname(os.path.abspath(path)))


def save_graph(g: Graph, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_graph(g))


def build_graph(name: str, inputs, initializers, nodes, outputs) -> Graph:
    """Programmatic constructor that assigns node indices."""
    for i, node in enumerate(nodes):
        node.index = i
    return Graph(name=name, inputs=list(inputs), initializers=list(initializers),
                 nodes=list(nodes), outputs=list(outputs))
