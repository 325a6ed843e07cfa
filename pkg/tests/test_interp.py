import io

import numpy as np
import pytest

from dyshape import interp, ir
from dyshape.interp import ExecError, TensorFileError, execute


def _single(op, in_defs, out, attrs=None, inits=None, subgraphs=None):
    return ir.build_graph(
        "t", in_defs, inits or [],
        [ir.Node(op, tuple(td.id for td in in_defs + (inits or [])),
                 (out,), attrs or {}, subgraphs or {})],
        [out])


def test_relu():
    g = _single("Relu", [ir.TensorDef("x", "f32", (3,), "input")], "y")
    out, _ = execute(g, {"x": np.array([-1.0, 0.0, 2.0], np.float32)})
    assert np.array_equal(out["y"], np.array([0.0, 0.0, 2.0], np.float32))


def test_conv_against_loop_reference():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 2, 2)).astype(np.float32)
    b = rng.standard_normal((3,)).astype(np.float32)
    strides, pads = [2, 1], [1, 0, 0, 1]
    got = interp.conv2d(x, w, b, strides, pads, "ref")

    pt, pl, pb, pr = pads
    xp = np.zeros((1, 2, 5 + pt + pb, 5 + pl + pr), np.float32)
    xp[:, :, pt:pt + 5, pl:pl + 5] = x
    oh = (5 + pt + pb - 2) // strides[0] + 1
    ow = (5 + pl + pr - 2) // strides[1] + 1
    want = np.zeros((1, 3, oh, ow), np.float32)
    for m in range(3):
        for y in range(oh):
            for xx in range(ow):
                acc = 0.0
                for c in range(2):
                    for ky in range(2):
                        for kx in range(2):
                            acc += (xp[0, c, y * strides[0] + ky,
                                       xx * strides[1] + kx]
                                    * w[m, c, ky, kx])
                want[0, m, y, xx] = acc + b[m]
    assert got.shape == want.shape
    assert np.allclose(got, want, rtol=1e-5, atol=1e-6)


def test_pools_against_loop_reference():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 1, 4, 6)).astype(np.float32)
    for op in ("MaxPool", "AveragePool"):
        g = _single(op, [ir.TensorDef("x", "f32", (1, 1, 4, 6), "input")], "y",
                    {"kernel_shape": [2, 3], "strides": [2, 3],
                     "pads": [0, 0, 0, 0]})
        out, _ = execute(g, {"x": x})
        want = np.zeros((1, 1, 2, 2), np.float32)
        for i in range(2):
            for j in range(2):
                win = x[0, 0, i * 2:i * 2 + 2, j * 3:j * 3 + 3]
                want[0, 0, i, j] = win.max() if op == "MaxPool" else win.mean()
        assert np.allclose(out["y"], want, rtol=1e-6)


def test_avgpool_pad_exclusion():
    x = np.ones((1, 1, 2, 2), np.float32)
    g = _single("AveragePool", [ir.TensorDef("x", "f32", (1, 1, 2, 2), "input")],
                "y", {"kernel_shape": [2, 2], "strides": [1, 1],
                      "pads": [1, 1, 1, 1]})
    out, _ = execute(g, {"x": x})
    # Corners see one valid cell; divisor excludes padding.
    assert out["y"][0, 0, 0, 0] == pytest.approx(1.0)
    assert out["y"].shape == (1, 1, 3, 3)


def test_depth_to_space_and_inverse():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 12, 8, 8)).astype(np.float32)
    g = _single("DepthToSpace", [ir.TensorDef("x", "f32", (1, 12, 8, 8), "input")],
                "y", {"blocksize": 2})
    out, _ = execute(g, {"x": x})
    assert out["y"].shape == (1, 3, 16, 16)
    # Inverse index map (space-to-depth, DCR) reproduces the input exactly.
    y = out["y"]
    back = y.reshape(1, 3, 8, 2, 8, 2).transpose(0, 3, 5, 1, 2, 4).reshape(1, 12, 8, 8)
    assert np.array_equal(back, x)


def test_crd_mode_matches_pixel_shuffle_layout():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 2, 2)
    g = _single("DepthToSpace", [ir.TensorDef("x", "f32", (1, 4, 2, 2), "input")],
                "y", {"blocksize": 2, "mode": "CRD"})
    out, _ = execute(g, {"x": x})
    want = x.reshape(1, 1, 2, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(1, 1, 4, 4)
    assert np.array_equal(out["y"], want)


def test_elementwise_broadcast_and_math():
    x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    for op, fn in (("Add", np.add), ("Mul", np.multiply)):
        g = ir.build_graph(
            "e", [ir.TensorDef("x", "f32", (2, 2), "input")],
            [ir.TensorDef("c", "f32", (2,), "initializer",
                          np.array([10.0, 20.0], np.float32))],
            [ir.Node(op, ("x", "c"), ("y",), {}, {})], ["y"])
        out, _ = execute(g, {"x": x})
        assert np.array_equal(out["y"], fn(x, np.array([10.0, 20.0], np.float32)))


def test_softmax_normalizes():
    x = np.random.default_rng(3).standard_normal((2, 5)).astype(np.float32)
    g = _single("Softmax", [ir.TensorDef("x", "f32", (2, 5), "input")], "y",
                {"axis": -1})
    out, _ = execute(g, {"x": x})
    assert np.allclose(out["y"].sum(axis=-1), 1.0, atol=1e-6)


def test_shape_gather_reduce():
    x = np.zeros((2, 3, 4), np.float32)
    g = ir.build_graph(
        "s", [ir.TensorDef("x", "f32", (2, 3, 4), "input")],
        [ir.TensorDef("i", "i64", (2,), "initializer", np.array([2, 0], np.int64))],
        [ir.Node("Shape", ("x",), ("sh",), {}, {}),
         ir.Node("Gather", ("sh", "i"), ("g",), {"axis": 0}, {}),
         ir.Node("ReduceSum", ("g",), ("r",), {"axes": [0], "keepdims": 0}, {})],
        ["sh", "g", "r"])
    out, _ = execute(g, {"x": x})
    assert np.array_equal(out["sh"], np.array([2, 3, 4], np.int64))
    assert np.array_equal(out["g"], np.array([4, 2], np.int64))
    assert out["r"] == 6


def test_reshape_zero_and_minus_one():
    x = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    g = ir.build_graph(
        "r", [ir.TensorDef("x", "f32", (2, 3, 4), "input")],
        [ir.TensorDef("t", "i64", (2,), "initializer",
                      np.array([0, -1], np.int64))],
        [ir.Node("Reshape", ("x", "t"), ("y",), {}, {})], ["y"])
    out, _ = execute(g, {"x": x})
    assert out["y"].shape == (2, 12)
    assert np.array_equal(out["y"].ravel(), x.ravel())


def test_slice_matches_numpy():
    x = np.arange(40, dtype=np.float32).reshape(5, 8)
    g = ir.build_graph(
        "sl", [ir.TensorDef("x", "f32", (5, 8), "input")],
        [ir.TensorDef("s", "i64", (2,), "initializer", np.array([1, -6], np.int64)),
         ir.TensorDef("e", "i64", (2,), "initializer",
                      np.array([2**63 - 1, 7], np.int64)),
         ir.TensorDef("a", "i64", (2,), "initializer", np.array([0, 1], np.int64)),
         ir.TensorDef("st", "i64", (2,), "initializer", np.array([2, 2], np.int64))],
        [ir.Node("Slice", ("x", "s", "e", "a", "st"), ("y",), {}, {})], ["y"])
    out, _ = execute(g, {"x": x})
    assert np.array_equal(out["y"], x[1::2, -6:7:2])


def test_range_expand_constantofshape_eyelike():
    g = ir.build_graph(
        "m", [],
        [ir.TensorDef("s", "i64", (), "initializer", np.array(2, np.int64)),
         ir.TensorDef("l", "i64", (), "initializer", np.array(9, np.int64)),
         ir.TensorDef("d", "i64", (), "initializer", np.array(3, np.int64)),
         ir.TensorDef("base", "f32", (1, 3), "initializer",
                      np.array([[1.0, 2.0, 3.0]], np.float32)),
         ir.TensorDef("tgt", "i64", (2,), "initializer",
                      np.array([4, 3], np.int64)),
         ir.TensorDef("cs", "i64", (2,), "initializer",
                      np.array([2, 2], np.int64)),
         ir.TensorDef("eye_in", "f32", (3, 4), "initializer",
                      np.zeros((3, 4), np.float32))],
        [ir.Node("Range", ("s", "l", "d"), ("rg",), {}, {}),
         ir.Node("Expand", ("base", "tgt"), ("ex",), {}, {}),
         ir.Node("ConstantOfShape", ("cs",), ("co",),
                 {"value": 1.5, "dtype": "f32"}, {}),
         ir.Node("Eyelike", ("eye_in",), ("ey",), {"k": 1}, {})],
        ["rg", "ex", "co", "ey"])
    out, _ = execute(g, {})
    assert np.array_equal(out["rg"], np.array([2, 5, 8], np.int64))
    assert out["ex"].shape == (4, 3)
    assert np.array_equal(out["ex"][2], np.array([1.0, 2.0, 3.0], np.float32))
    assert np.array_equal(out["co"], np.full((2, 2), 1.5, np.float32))
    assert np.array_equal(out["ey"], np.eye(3, 4, k=1, dtype=np.float32))


def test_if_and_loop():
    then_g = ir.build_graph("t", [], [],
                            [ir.Node("Relu", ("x",), ("tv",), {}, {})], ["tv"])
    else_g = ir.build_graph("e", [], [],
                            [ir.Node("Round", ("x",), ("ev",), {}, {})], ["ev"])
    g = ir.build_graph(
        "if", [ir.TensorDef("x", "f32", (3,), "input"),
               ir.TensorDef("c", "bool", (), "input")],
        [],
        [ir.Node("If", ("c",), ("o",), {},
                 {"then_branch": then_g, "else_branch": else_g})],
        ["o"])
    x = np.array([-1.4, 0.6, 2.0], np.float32)
    out, tr = execute(g, {"x": x, "c": np.array(True)})
    assert np.array_equal(out["o"], np.maximum(x, 0))
    assert tr.branch_decisions["0"] == {"kind": "if", "cond": True}
    out2, _ = execute(g, {"x": x, "c": np.array(False)})
    assert np.array_equal(out2["o"], np.rint(x))

    body = ir.build_graph(
        "body",
        [ir.TensorDef("i", "i64", (), "input"),
         ir.TensorDef("acc", "f32", (3,), "input")],
        [],
        [ir.Node("Add", ("acc", "x"), ("nxt",), {}, {})],
        ["nxt"])
    lg = ir.build_graph(
        "loop",
        [ir.TensorDef("x", "f32", (3,), "input")],
        [ir.TensorDef("trip", "i64", (), "initializer", np.array(4, np.int64))],
        [ir.Node("Loop", ("trip", "x"), ("out",), {}, {"body": body})],
        ["out"])
    out3, tr3 = execute(lg, {"x": x})
    assert np.allclose(out3["out"], x * 5)  # x + 4 additions
    assert tr3.branch_decisions["0"]["trip"] == 4

    lg.initializers[0].data = np.array(0, np.int64)
    out4, _ = execute(lg, {"x": x})
    assert np.array_equal(out4["out"], x)  # zero trips: carried stays initial


def test_switch_routes_and_skips():
    g = ir.build_graph(
        "sw",
        [ir.TensorDef("x", "f32", (2, 2), "input"),
         ir.TensorDef("sel", "i64", (), "input")],
        [],
        [ir.Node("Switch", ("x", "sel"), ("a", "b", "c"), {}, {}),
         ir.Node("Relu", ("a",), ("ra",), {}, {}),
         ir.Node("Sigmoid", ("b",), ("sb",), {}, {}),
         ir.Node("Round", ("c",), ("rc",), {}, {}),
         ir.Node("Combine", ("ra", "sb", "rc"), ("out",), {}, {})],
        ["out"])
    x = np.array([[0.2, -0.7], [1.4, 0.0]], np.float32)
    out, tr = execute(g, {"x": x, "sel": np.array(1, np.int64)})
    assert np.allclose(out["out"], 1 / (1 + np.exp(-x)))
    ops_run = [s.op for s in tr.steps]
    assert "Sigmoid" in ops_run and "Relu" not in ops_run and "Round" not in ops_run
    with pytest.raises(ExecError, match="out of range"):
        execute(g, {"x": x, "sel": np.array(5, np.int64)})


def test_errors_name_the_node():
    g = ir.build_graph(
        "err", [ir.TensorDef("a", "f32", (2, 3), "input"),
                ir.TensorDef("b", "f32", (4, 5), "input")],
        [],
        [ir.Node("MatMul", ("a", "b"), ("y",), {}, {})], ["y"])
    with pytest.raises(ExecError, match="node 0 .*MatMul"):
        execute(g, {"a": np.zeros((2, 3), np.float32),
                    "b": np.zeros((4, 5), np.float32)})
    with pytest.raises(ExecError, match="missing graph input"):
        execute(g, {"a": np.zeros((2, 3), np.float32)})
    with pytest.raises(ExecError, match="expected dtype"):
        execute(g, {"a": np.zeros((2, 3), np.float64),
                    "b": np.zeros((4, 5), np.float32)})


def test_naive_peak_is_total_allocated():
    g = ir.build_graph(
        "peak", [ir.TensorDef("x", "f32", (4, 4), "input")],
        [],
        [ir.Node("Relu", ("x",), ("a",), {}, {}),
         ir.Node("Sigmoid", ("a",), ("b",), {}, {}),
         ir.Node("Round", ("b",), ("c",), {}, {})],
        ["c"])
    _, tr = execute(g, {"x": np.ones((4, 4), np.float32)})
    assert tr.peak_activation_bytes == tr.total_allocated_bytes == 3 * 64
    assert tr.alloc_count == 3


def test_tensor_file_round_trip(tmp_path):
    arr = np.random.default_rng(4).standard_normal((2, 3)).astype(np.float32)
    path = tmp_path / "t.dyt"
    interp.write_tensor_file(str(path), arr)
    back = interp.read_tensor_file(str(path))
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)
    assert back.tobytes() == arr.tobytes()

    for a in (np.array(7, np.int64), np.array([True, False]),
              np.zeros((0, 3), np.float32)):
        interp.write_tensor_file(str(path), a)
        b = interp.read_tensor_file(str(path))
        assert b.dtype == a.dtype and b.shape == a.shape
        assert np.array_equal(a, b)


def test_tensor_file_scalar_layout(tmp_path):
    path = tmp_path / "s.dyt"
    interp.write_tensor_file(str(path), np.array(7, np.int64))
    raw = path.read_bytes()
    # magic(4) + dtype(1) + rank(1) + no dims + 8-byte payload
    assert len(raw) == 14
    assert raw[:4] == b"DYT1"
    assert raw[5] == 0  # rank


def test_tensor_file_bad_magic():
    buf = io.BytesIO(b"DYT2" + b"\x00" * 16)
    with pytest.raises(TensorFileError, match="bad magic"):
        interp.read_tensor_stream(buf)
    with pytest.raises(TensorFileError, match="truncated"):
        interp.read_tensor_stream(io.BytesIO(b"DYT1\x00"))


def test_resize_nearest_and_linear():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    g = ir.build_graph(
        "rz", [ir.TensorDef("x", "f32", (1, 1, 4, 4), "input")],
        [ir.TensorDef("s", "i64", (4,), "initializer",
                      np.array([1, 1, 2, 2], np.int64))],
        [ir.Node("Resize", ("x", "s"), ("y",), {"mode": "nearest"}, {})], ["y"])
    out, _ = execute(g, {"x": x})
    # Half-pixel: output (0,0) samples input (0.5, 0.5) -> rounds to (0, 0)
    # or (1, 1) consistently; value must come from the top-left 2x2 block.
    assert out["y"].shape == (1, 1, 2, 2)
    assert out["y"][0, 0, 0, 0] in (x[0, 0, 0, 0], x[0, 0, 0, 1],
                                    x[0, 0, 1, 0], x[0, 0, 1, 1])

    g2 = ir.build_graph(
        "rz2", [ir.TensorDef("x", "f32", (1, 1, 2, 2), "input")],
        [ir.TensorDef("s", "i64", (4,), "initializer",
                      np.array([1, 1, 4, 4], np.int64))],
        [ir.Node("Resize", ("x", "s"), ("y",), {"mode": "linear"}, {})], ["y"])
    x2 = np.array([[[[0.0, 1.0], [2.0, 3.0]]]], np.float32)
    out2, _ = execute(g2, {"x": x2})
    assert out2["y"].shape == (1, 1, 4, 4)
    # Center of the upscale interpolates between the corners.
    assert 0.0 <= out2["y"][0, 0, 1, 1] <= 3.0
    assert out2["y"][0, 0, 0, 0] == pytest.approx(0.0)
    assert out2["y"][0, 0, 3, 3] == pytest.approx(3.0)


def test_infer_bindings():
    g = ir.build_graph(
        "bind", [ir.TensorDef("x", "f32", (1, 3, "H", "W"), "input")],
        [], [ir.Node("Relu", ("x",), ("y",), {}, {})], ["y"])
    binds = interp.infer_bindings(g, {"x": np.zeros((1, 3, 6, 9), np.float32)})
    assert binds == {"H": 6, "W": 9}
    with pytest.raises(ExecError, match="declared 3"):
        interp.infer_bindings(g, {"x": np.zeros((1, 2, 6, 9), np.float32)})
