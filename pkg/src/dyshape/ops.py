"""Operator registry: dynamism classes, call signatures, dtype rules.

Every supported operator belongs to exactly one dynamism class describing
how its output shape/value can be predicted:

* SHAPE_DETERMINES_ALL    -- output shape *and* value follow from input shapes
* SHAPE_DETERMINES_SHAPE  -- output shape follows from input shapes; output
                             values depend on input values
* VALUE_DETERMINES_SHAPE  -- output shape additionally needs (part of) the
                             input values
* RUNTIME_DETERMINED      -- output shape/value only known by executing
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class DynClass(Enum):
    SHAPE_DETERMINES_ALL = "shape-determines-output"
    SHAPE_DETERMINES_SHAPE = "shape-determines-shape"
    VALUE_DETERMINES_SHAPE = "value-determines-shape"
    RUNTIME_DETERMINED = "runtime-determined"


class UnsupportedOperatorError(KeyError):
    pass


@dataclass(frozen=True)
class AttrSpec:
    kind: str  # "int" | "ints" | "float" | "str"
    required: bool = False
    default: object = None


@dataclass(frozen=True)
class OpSignature:
    op_kind: str
    dyn_class: DynClass
    min_inputs: int
    max_inputs: Optional[int]  # None = unbounded
    min_outputs: int = 1
    max_outputs: Optional[int] = 1
    attrs: dict = field(default_factory=dict)
    subgraphs: tuple = ()
    # dtype rule: "same" (first input), "i64", "attr:to", "attr:dtype", "subgraph"
    dtype_rule: str = "same"


_A = DynClass.SHAPE_DETERMINES_ALL
_S = DynClass.SHAPE_DETERMINES_SHAPE
_V = DynClass.VALUE_DETERMINES_SHAPE
_X = DynClass.RUNTIME_DETERMINED


_SAME = "same-as-min"


def _sig(op, cls, nin, nout=1, max_in=_SAME, max_out=_SAME, attrs=None,
         subgraphs=(), dtype_rule="same"):
    # max_in/max_out: omitted = fixed arity, None = unbounded.
    return OpSignature(
        op_kind=op,
        dyn_class=cls,
        min_inputs=nin,
        max_inputs=nin if max_in is _SAME else max_in,
        min_outputs=nout,
        max_outputs=nout if max_out is _SAME else max_out,
        attrs=attrs or {},
        subgraphs=subgraphs,
        dtype_rule=dtype_rule,
    )


_POOL_ATTRS = {
    "kernel_shape": AttrSpec("ints", required=True),
    "strides": AttrSpec("ints", default=[1, 1]),
    "pads": AttrSpec("ints", default=[0, 0, 0, 0]),
}

OP_TABLE: dict[str, OpSignature] = {
    s.op_kind: s
    for s in [
        # Output shape and value follow from input shapes alone.
        _sig("Shape", _A, 1, dtype_rule="i64"),
        _sig("ConstantOfShape", _A, 1,
             attrs={"value": AttrSpec("float", default=0.0),
                    "dtype": AttrSpec("str", default="f32")},
             dtype_rule="attr:dtype"),
        _sig("Eyelike", _A, 1, attrs={"k": AttrSpec("int", default=0)}),
        # Output shape follows from input shapes.
        _sig("Add", _S, 2),
        _sig("Mul", _S, 2),
        _sig("AveragePool", _S, 1, attrs=dict(_POOL_ATTRS)),
        _sig("Cast", _S, 1, attrs={"to": AttrSpec("str", required=True)},
             dtype_rule="attr:to"),
        _sig("Concat", _S, 2, max_in=None,
             attrs={"axis": AttrSpec("int", required=True)}),
        _sig("Conv", _S, 2, max_in=3,
             attrs={"strides": AttrSpec("ints", default=[1, 1]),
                    "pads": AttrSpec("ints", default=[0, 0, 0, 0])}),
        _sig("Gather", _S, 2, attrs={"axis": AttrSpec("int", default=0)}),
        _sig("MatMul", _S, 2),
        _sig("MaxPool", _S, 1, attrs=dict(_POOL_ATTRS)),
        _sig("ReduceSum", _S, 1,
             attrs={"axes": AttrSpec("ints", default=None),
                    "keepdims": AttrSpec("int", default=1)}),
        _sig("Relu", _S, 1),
        _sig("Round", _S, 1),
        _sig("Sigmoid", _S, 1),
        _sig("Softmax", _S, 1, attrs={"axis": AttrSpec("int", default=-1)}),
        _sig("DepthToSpace", _S, 1,
             attrs={"blocksize": AttrSpec("int", required=True),
                    "mode": AttrSpec("str", default="DCR")}),
        _sig("FusedRegion", _S, 1, max_in=None, subgraphs=("body",),
             dtype_rule="subgraph"),
        # Output shape needs input values.
        _sig("Expand", _V, 2),
        _sig("Range", _V, 3),
        _sig("Reshape", _V, 2),
        _sig("Resize", _V, 2, attrs={"mode": AttrSpec("str", default="nearest")}),
        _sig("Slice", _V, 3, max_in=5),
        _sig("Upsample", _V, 2, attrs={"mode": AttrSpec("str", default="nearest")}),
        # Output determined only by execution.
        _sig("If", _X, 1, nout=1, max_out=None,
             subgraphs=("then_branch", "else_branch"), dtype_rule="subgraph"),
        _sig("Loop", _X, 2, max_in=None, nout=1, max_out=None,
             subgraphs=("body",), dtype_rule="subgraph"),
        _sig("Nonzero", _X, 1, dtype_rule="i64"),
        _sig("Switch", _X, 2, nout=1, max_out=None),
        _sig("Combine", _X, 1, max_in=None),
    ]
}

ELEMENTWISE_EPILOGUE = frozenset({"Add", "Mul", "Relu", "Sigmoid", "Round", "Cast"})
FUSION_ANCHORS = frozenset({"Conv", "MatMul"})
CONTROL_FLOW = frozenset({"If", "Loop", "Switch", "Combine"})


def signature(op_kind: str) -> OpSignature:
    try:
        return OP_TABLE[op_kind]
    except KeyError:
        raise UnsupportedOperatorError(f"unsupported operator {op_kind!r}") from None


def classify(op_kind: str) -> DynClass:
    """Dynamism class of a supported operator; raises on unknown ones."""
    return signature(op_kind).dyn_class


def get_attr(node, name: str):
    """Attribute value with signature defaults applied and kind checked."""
    sig = signature(node.op_kind)
    spec = sig.attrs.get(name)
    if spec is None:
        raise KeyError(f"{node.op_kind} has no attribute {name!r}")
    if name not in node.attrs:
        if spec.required:
            raise ValueError(f"{node.op_kind} requires attribute {name!r}")
        return spec.default
    v = node.attrs[name]
    if spec.kind == "int" and not isinstance(v, int):
        raise ValueError(f"attribute {name!r} of {node.op_kind} must be int")
    if spec.kind == "ints" and not (isinstance(v, list) and all(isinstance(x, int) for x in v)):
        raise ValueError(f"attribute {name!r} of {node.op_kind} must be a list of ints")
    if spec.kind == "float" and not isinstance(v, (int, float)):
        raise ValueError(f"attribute {name!r} of {node.op_kind} must be a number")
    if spec.kind == "str" and not isinstance(v, str):
        raise ValueError(f"attribute {name!r} of {node.op_kind} must be a string")
    return v


class DTypeError(ValueError):
    pass


def infer_dtypes(graph) -> dict[str, str]:
    """Element types for every tensor id, including nested sub-graphs.

    Intermediate dtypes are derived from the signature table; declared
    inputs/initializers (including sub-graph inputs) keep their declared
    dtype.
    """
    from . import ir  # local import: ir depends on this module's table

    out: dict[str, str] = {}

    def visit(g, visible: dict[str, str]) -> None:
        scope = dict(visible)
        for td in list(g.inputs) + list(g.initializers):
            scope[td.id] = td.dtype
            out[td.id] = td.dtype
        for idx in ir.toposort_dfs(g):
            node = g.nodes[idx]
            for _, sub in sorted(node.subgraphs.items()):
                visit(sub, scope)
            sig = signature(node.op_kind)
            rule = sig.dtype_rule
            if rule == "i64":
                dts = ["i64"] * len(node.outputs)
            elif rule.startswith("attr:"):
                dt = get_attr(node, rule.split(":", 1)[1])
                if dt not in ("f32", "i64", "bool"):
                    raise DTypeError(
                        f"node {node.index} ({node.op_kind}): bad dtype {dt!r}")
                dts = [dt] * len(node.outputs)
            elif rule == "subgraph":
                sub = node.subgraphs["then_branch" if node.op_kind == "If" else "body"]
                body_dts = [out[t] for t in sub.outputs]
                dts = body_dts[: len(node.outputs)]
            else:
                base = next((scope[t] for t in node.inputs if t in scope), None)
                if base is None:
                    raise DTypeError(
                        f"node {node.index} ({node.op_kind}): unknown input dtype")
                dts = [base] * len(node.outputs)
            for tid, dt in zip(node.outputs, dts):
                scope[tid] = dt
                out[tid] = dt

    visit(graph, {})
    return out
