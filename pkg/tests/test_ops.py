import pytest

from dyshape import ir, ops
from dyshape.ops import DynClass


def test_classification_representatives():
    assert ops.classify("Shape") == DynClass.SHAPE_DETERMINES_ALL
    assert ops.classify("Conv") == DynClass.SHAPE_DETERMINES_SHAPE
    assert ops.classify("Reshape") == DynClass.VALUE_DETERMINES_SHAPE
    assert ops.classify("If") == DynClass.RUNTIME_DETERMINED
    assert ops.classify("Switch") == DynClass.RUNTIME_DETERMINED
    assert ops.classify("Combine") == DynClass.RUNTIME_DETERMINED


def test_unsupported_operators_error():
    for name in ["NMS", "TopK", "OneHot", "GroupNormalization", "MaxUnpool",
                 "NoSuchOp"]:
        with pytest.raises(ops.UnsupportedOperatorError):
            ops.classify(name)


def test_classification_total_and_unique():
    for name, sig in ops.OP_TABLE.items():
        assert isinstance(sig.dyn_class, DynClass)
        assert ops.classify(name) is sig.dyn_class


def test_get_attr_defaults_and_required():
    node = ir.Node("Conv", ("x", "w"), ("y",), {}, {})
    assert ops.get_attr(node, "strides") == [1, 1]
    node2 = ir.Node("Concat", ("a", "b"), ("c",), {}, {})
    with pytest.raises(ValueError):
        ops.get_attr(node2, "axis")
    node3 = ir.Node("Concat", ("a", "b"), ("c",), {"axis": "zero"}, {})
    with pytest.raises(ValueError):
        ops.get_attr(node3, "axis")


def test_infer_dtypes():
    g = ir.build_graph(
        "d",
        [ir.TensorDef("x", "f32", (2, 2), "input")],
        [],
        [ir.Node("Shape", ("x",), ("s",), {}, {}),
         ir.Node("Cast", ("x",), ("xi",), {"to": "i64"}, {}),
         ir.Node("Relu", ("x",), ("r",), {}, {})],
        ["s", "xi", "r"])
    dt = ops.infer_dtypes(g)
    assert dt == {"x": "f32", "s": "i64", "xi": "i64", "r": "f32"}
