"""Reference executor with instrumented memory accounting.

Kernels are deliberately naive (correctness first) and deterministic:
identical inputs produce bit-identical outputs.  The trace counts bytes of
activation tensors only -- graph inputs and initializers are resident and
excluded.

Two execution modes differ in deallocation, which is the point of the
comparison the planner enables:

* without a plan, the executor runs in deterministic topological order and
  retains every top-level tensor until the end (reference-environment
  semantics; sub-graph locals are released at scope exit), so observed
  peak equals total allocated bytes on control-free graphs;
* with a plan, it runs in the planned order and releases each tensor after
  its last consumer, and additionally tracks the static-arena subset (the
  tensors the plan placed at offsets) whose observed peak must equal the
  planned peak.

Fused regions evaluate their member chain through a single output buffer:
the anchor kernel writes the buffer and elementwise epilogue steps mutate
it in place, so member intermediates are never materialized or counted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ir, ops

NP_DTYPE = {"f32": np.float32, "i64": np.int64, "bool": np.bool_}
DTYPE_CODE = {"f32": 0, "i64": 1, "bool": 2}
CODE_DTYPE = {v: k for k, v in DTYPE_CODE.items()}
TENSOR_MAGIC = b"DYT1"


class ExecError(RuntimeError):
    pass


class TensorFileError(ValueError):
    pass


def dtype_name(arr: np.ndarray) -> str:
    for name, dt in NP_DTYPE.items():
        if arr.dtype == dt:
            return name
    raise TensorFileError(f"unsupported array dtype {arr.dtype}")


def tensor_bytes(arr: np.ndarray) -> int:
    return arr.size * ir.DTYPE_SIZE[dtype_name(arr)]


# ---------------------------------------------------------------------------
# Binary tensor file format: magic, dtype code u8, rank u8, dims u64 LE,
# row-major payload.


def write_tensor_stream(f, arr: np.ndarray) -> None:
    name = dtype_name(arr)
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<BB", DTYPE_CODE[name], arr.ndim))
    for d in arr.shape:
        f.write(struct.pack("<Q", d))
    if name == "bool":
        f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())
    else:
        f.write(np.ascontiguousarray(arr).astype("<f4" if name == "f32" else "<i8").tobytes())


def read_tensor_stream(f) -> np.ndarray:
    magic = f.read(4)
    if magic != TENSOR_MAGIC:
        raise TensorFileError(f"bad magic {magic!r}")
    head = f.read(2)
    if len(head) != 2:
        raise TensorFileError("truncated header")
    code, rank = struct.unpack("<BB", head)
    if code not in CODE_DTYPE:
        raise TensorFileError(f"unknown dtype code {code}")
    name = CODE_DTYPE[code]
    dims = []
    for _ in range(rank):
        raw = f.read(8)
        if len(raw) != 8:
            raise TensorFileError("truncated dims")
        dims.append(struct.unpack("<Q", raw)[0])
    count = 1
    for d in dims:
        count *= d
    nbytes = count * ir.DTYPE_SIZE[name]
    payload = f.read(nbytes)
    if len(payload) != nbytes:
        raise TensorFileError("truncated payload")
    if name == "bool":
        arr = np.frombuffer(payload, dtype=np.uint8).astype(np.bool_)
    else:
        arr = np.frombuffer(payload, dtype="<f4" if name == "f32" else "<i8").astype(
            NP_DTYPE[name])
    return arr.reshape(dims)


def write_tensor_file(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor_stream(f, arr)


def read_tensor_file(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        return read_tensor_stream(f)


# ---------------------------------------------------------------------------
# Trace


@dataclass
class TraceStep:
    label: str
    op: str
    out_dims: list
    bytes_allocated: int
    bytes_freed: int


@dataclass
class ExecTrace:
    steps: list = field(default_factory=list)
    peak_activation_bytes: int = 0
    alloc_count: int = 0
    total_allocated_bytes: int = 0
    branch_decisions: dict = field(default_factory=dict)
    arena_peak_bytes: Optional[int] = None
    tensor_dims: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        return {
            "peak_activation_bytes": self.peak_activation_bytes,
            "alloc_count": self.alloc_count,
            "total_allocated_bytes": self.total_allocated_bytes,
            "arena_peak_bytes": self.arena_peak_bytes,
            "branch_decisions": self.branch_decisions,
            "steps": [
                {"label": s.label, "op": s.op, "out_dims": s.out_dims,
                 "bytes_allocated": s.bytes_allocated, "bytes_freed": s.bytes_freed}
                for s in self.steps
            ],
        }


class _Accounting:
    def __init__(self, arena_ids: Optional[set]):
        self.live = 0
        self.peak = 0
        self.arena_ids = arena_ids
        self.arena_live = 0
        self.arena_peak = 0
        self.sizes: dict[str, int] = {}
        self.allocs = 0
        self.total = 0

    def alloc(self, tid: str, nbytes: int) -> None:
        if tid in self.sizes:  # rebinding (loop bodies): release the old entry
            self.free(tid)
        self.sizes[tid] = nbytes
        self.live += nbytes
        self.peak = max(self.peak, self.live)
        self.allocs += 1
        self.total += nbytes
        if self.arena_ids is not None and tid in self.arena_ids:
            self.arena_live += nbytes
            self.arena_peak = max(self.arena_peak, self.arena_live)

    def free(self, tid: str) -> int:
        nbytes = self.sizes.pop(tid, 0)
        self.live -= nbytes
        if self.arena_ids is not None and tid in self.arena_ids:
            self.arena_live -= nbytes
        return nbytes


class _Env:
    """Lexically scoped tensor environment."""

    def __init__(self, parent: Optional["_Env"] = None):
        self.parent = parent
        self.values: dict[str, np.ndarray] = {}
        self.absent: set[str] = set()

    def lookup(self, tid: str):
        env = self
        while env is not None:
            if tid in env.absent:
                return None, True
            if tid in env.values:
                return env.values[tid], False
            env = env.parent
        raise ExecError(f"tensor {tid!r} is not available")

    def bind(self, tid: str, arr: np.ndarray) -> None:
        self.values[tid] = arr

    def mark_absent(self, tid: str) -> None:
        self.absent.add(tid)


def execute(g: ir.Graph, inputs: dict, plan=None):
    """Run the graph on concrete inputs.

    `inputs` maps every graph input id to a numpy array of the declared
    dtype.  With a plan (see planner.build_plan) execution follows the
    planned order and frees tensors after their last use; without one it
    follows toposort order and retains everything.
    Returns (outputs dict, ExecTrace).
    """
    for td in g.inputs:
        if td.id not in inputs:
            raise ExecError(f"missing graph input {td.id!r}")
        arr = inputs[td.id]
        if arr.dtype != NP_DTYPE[td.dtype]:
            raise ExecError(
                f"graph input {td.id!r}: expected dtype {td.dtype}, got {arr.dtype}")

    arena_ids = None
    lifetimes = None
    order = ir.toposort_dfs(g)
    if plan is not None:
        if plan.graph_sha256 != ir.graph_sha256(g):
            raise ExecError("plan does not belong to this graph")
        implied = infer_bindings(g, inputs)
        for sym_name, val in plan.bindings.items():
            got = implied.get(sym_name)
            if got is not None and got != val:
                raise ExecError(
                    f"plan was made for {sym_name}={val}, inputs imply "
                    f"{sym_name}={got}")
        order = list(plan.order)
        lifetimes = dict(plan.lifetimes)
        arena_ids = set(plan.offsets)

    acct = _Accounting(arena_ids)
    trace = ExecTrace(arena_peak_bytes=None)
    env = _Env()
    for td in g.inputs:
        env.bind(td.id, inputs[td.id])
        trace.tensor_dims[td.id] = tuple(inputs[td.id].shape)
    for gr in ir.iter_graphs(g):
        for td in gr.initializers:
            env.bind(td.id, td.data.astype(NP_DTYPE[td.dtype], copy=False))

    runner = _Runner(g, acct, trace)
    output_set = set(g.outputs)
    last_use = None
    if lifetimes is not None:
        last_use = {}
        for tid, (start, end) in lifetimes.items():
            last_use.setdefault(end, []).append(tid)

    for step_pos, idx in enumerate(order):
        node = g.nodes[idx]
        runner.run_node(node, env, str(idx))
        if last_use is not None:
            for tid in last_use.get(step_pos, []):
                if tid not in output_set and tid in env.values:
                    freed = acct.free(tid)
                    del env.values[tid]
                    if freed and trace.steps:
                        trace.steps[-1].bytes_freed += freed

    outputs = {}
    for tid in g.outputs:
        arr, absent = env.lookup(tid)
        if absent:
            raise ExecError(f"graph output {tid!r} was not produced")
        outputs[tid] = arr
    trace.peak_activation_bytes = acct.peak
    trace.alloc_count = acct.allocs
    trace.total_allocated_bytes = acct.total
    trace.arena_peak_bytes = acct.arena_peak if plan is not None else None
    return outputs, trace


class _Runner:
    def __init__(self, graph, acct, trace):
        self.graph = graph
        self.acct = acct
        self.trace = trace

    def run_node(self, node: ir.Node, env: _Env, label: str) -> None:
        if node.op_kind == "Combine":
            present = []
            for tid in node.inputs:
                arr, absent = env.lookup(tid)
                if not absent:
                    present.append(arr)
            if not present:
                # The whole junction sits on an unselected path.
                for out in node.outputs:
                    env.mark_absent(out)
                return
            if len(present) != 1:
                raise ExecError(
                    f"node {label} (Combine): expected exactly one populated "
                    f"input, got {len(present)}")
            outs = [present[0].copy()]
        else:
            ins = []
            skip = False
            for tid in ir.node_input_ids(node):
                arr, absent = env.lookup(tid)
                if absent:
                    skip = True
                    break
                if tid in node.inputs:
                    ins.append(arr)
            if skip:
                for out in node.outputs:
                    env.mark_absent(out)
                return
            ins = ins[: len(node.inputs)]
            outs = self.dispatch(node, ins, env, label)
        dims = []
        allocated = 0
        for tid, arr in zip(node.outputs, outs):
            if arr is None:
                env.mark_absent(tid)
                dims.append(None)
                continue
            env.bind(tid, arr)
            self.trace.tensor_dims[tid] = tuple(arr.shape)
            nbytes = tensor_bytes(arr)
            self.acct.alloc(tid, nbytes)
            allocated += nbytes
            dims.append(list(arr.shape))
        self.trace.steps.append(TraceStep(
            label=label, op=node.op_kind, out_dims=dims,
            bytes_allocated=allocated, bytes_freed=0))

    def run_subgraph(self, sub: ir.Graph, env: _Env, label: str,
                     binds: Optional[dict] = None) -> list:
        child = _Env(env)
        for td in sub.inputs:
            if binds is None or td.id not in binds:
                raise ExecError(f"sub-graph input {td.id!r} not bound")
            child.bind(td.id, binds[td.id])
        for idx in ir.toposort_dfs(sub):
            self.run_node(sub.nodes[idx], child, f"{label}/{idx}")
        outs = []
        for tid in sub.outputs:
            arr, absent = child.lookup(tid)
            if absent:
                raise ExecError(f"sub-graph output {tid!r} was not produced")
            outs.append(arr)
        # Scope exit: locals are transient.  Callers copy what they keep, so
        # every child-local accounting entry is released here; carried state
        # between loop iterations is accounted at the loop boundary instead.
        for tid in child.values:
            freed = self.acct.free(tid)
            if freed and self.trace.steps:
                self.trace.steps[-1].bytes_freed += freed
        return outs

    # -- dispatch -------------------------------------------------------------

    def dispatch(self, node: ir.Node, ins: list, env: _Env, label: str) -> list:
        op = node.op_kind
        fn = getattr(self, f"op_{op.lower()}", None)
        if fn is None:
            raise ExecError(f"node {label} ({op}): no kernel")
        try:
            return fn(node, ins, env, label)
        except ExecError:
            raise
        except (ValueError, IndexError, ZeroDivisionError) as e:
            raise ExecError(f"node {label} ({op}): {e}") from e

    # -- kernels ----------------------------------------------------------------

    def op_relu(self, node, ins, env, label):
        x = ins[0]
        return [np.maximum(x, np.zeros((), dtype=x.dtype))]

    def op_sigmoid(self, node, ins, env, label):
        x = ins[0].astype(np.float32, copy=False)
        with np.errstate(over="ignore"):  # exp saturates to inf -> sigmoid 0
            return [(1.0 / (1.0 + np.exp(-x))).astype(np.float32)]

    def op_round(self, node, ins, env, label):
        return [np.rint(ins[0]).astype(ins[0].dtype)]

    def op_cast(self, node, ins, env, label):
        to = ops.get_attr(node, "to")
        return [ins[0].astype(NP_DTYPE[to])]

    def op_add(self, node, ins, env, label):
        return [_binary(np.add, ins, label)]

    def op_mul(self, node, ins, env, label):
        return [_binary(np.multiply, ins, label)]

    def op_softmax(self, node, ins, env, label):
        x = ins[0].astype(np.float32, copy=False)
        axis = ops.get_attr(node, "axis")
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        return [(e / np.sum(e, axis=axis, keepdims=True)).astype(np.float32)]

    def op_conv(self, node, ins, env, label):
        x, w = ins[0], ins[1]
        b = ins[2] if len(ins) > 2 else None
        strides = ops.get_attr(node, "strides")
        pads = ops.get_attr(node, "pads")
        return [conv2d(x, w, b, strides, pads, label)]

    def op_matmul(self, node, ins, env, label):
        a, b = ins
        if a.ndim != 2 or b.ndim != 2:
            raise ExecError(f"node {label} (MatMul): expects rank-2 operands")
        if a.shape[1] != b.shape[0]:
            raise ExecError(
                f"node {label} (MatMul): inner dims {a.shape[1]} vs {b.shape[0]}")
        return [(a @ b).astype(a.dtype)]

    def op_maxpool(self, node, ins, env, label):
        return [_pool(node, ins[0], label, mode="max")]

    def op_averagepool(self, node, ins, env, label):
        return [_pool(node, ins[0], label, mode="avg")]

    def op_concat(self, node, ins, env, label):
        axis = ops.get_attr(node, "axis")
        return [np.concatenate(ins, axis=axis)]

    def op_gather(self, node, ins, env, label):
        data, idx = ins
        axis = ops.get_attr(node, "axis") % max(1, data.ndim)
        return [np.take(data, idx.astype(np.int64), axis=axis)]

    def op_reducesum(self, node, ins, env, label):
        x = ins[0]
        axes = ops.get_attr(node, "axes")
        keep = bool(ops.get_attr(node, "keepdims"))
        ax = tuple(range(x.ndim)) if axes is None else tuple(a % x.ndim for a in axes)
        return [np.sum(x, axis=ax, keepdims=keep, dtype=x.dtype)]

    def op_depthtospace(self, node, ins, env, label):
        x = ins[0]
        r = ops.get_attr(node, "blocksize")
        mode = ops.get_attr(node, "mode")
        if x.ndim != 4 or x.shape[1] % (r * r) != 0:
            raise ExecError(f"node {label} (DepthToSpace): bad input {x.shape}")
        n, c, h, w = x.shape
        if mode == "DCR":
            t = x.reshape(n, r, r, c // (r * r), h, w)
            t = t.transpose(0, 3, 4, 1, 5, 2)
        else:  # CRD
            t = x.reshape(n, c // (r * r), r, r, h, w)
            t = t.transpose(0, 1, 4, 2, 5, 3)
        return [np.ascontiguousarray(t.reshape(n, c // (r * r), h * r, w * r))]

    def op_shape(self, node, ins, env, label):
        return [np.array(ins[0].shape, dtype=np.int64)]

    def op_constantofshape(self, node, ins, env, label):
        dims = [int(v) for v in ins[0].ravel()]
        if any(d < 0 for d in dims):
            raise ExecError(f"node {label} (ConstantOfShape): negative extent {dims}")
        dtype = NP_DTYPE[ops.get_attr(node, "dtype")]
        return [np.full(dims, ops.get_attr(node, "value"), dtype=dtype)]

    def op_eyelike(self, node, ins, env, label):
        x = ins[0]
        if x.ndim != 2:
            raise ExecError(f"node {label} (Eyelike): expects rank-2 input")
        k = ops.get_attr(node, "k")
        return [np.eye(x.shape[0], x.shape[1], k=k, dtype=x.dtype)]

    def op_nonzero(self, node, ins, env, label):
        if ins[0].ndim == 0:
            raise ExecError(f"node {label} (Nonzero): rank-0 input not supported")
        return [np.stack(np.nonzero(ins[0])).astype(np.int64)]

    def op_reshape(self, node, ins, env, label):
        data, target = ins
        dims = [int(v) for v in target.ravel()]
        out_dims = []
        hole = None
        for i, d in enumerate(dims):
            if d == 0:
                if i >= data.ndim:
                    raise ExecError(f"node {label} (Reshape): 0 beyond input rank")
                out_dims.append(data.shape[i])
            elif d == -1:
                if hole is not None:
                    raise ExecError(f"node {label} (Reshape): multiple -1 entries")
                hole = i
                out_dims.append(1)
            else:
                out_dims.append(d)
        if hole is not None:
            rest = 1
            for d in out_dims:
                rest *= d
            rest //= out_dims[hole]
            if rest == 0 or data.size % rest != 0:
                raise ExecError(
                    f"node {label} (Reshape): cannot infer -1 for {data.shape} -> {dims}")
            out_dims[hole] = data.size // rest
        return [data.reshape(out_dims).copy()]

    def op_expand(self, node, ins, env, label):
        data, target = ins
        dims = tuple(int(v) for v in target.ravel())
        out_shape = np.broadcast_shapes(data.shape, dims)
        return [np.broadcast_to(data, out_shape).copy()]

    def op_range(self, node, ins, env, label):
        s, l, d = (v.ravel()[0] for v in ins)
        if d == 0:
            raise ExecError(f"node {label} (Range): zero delta")
        return [np.arange(s, l, d, dtype=ins[0].dtype)]

    def op_slice(self, node, ins, env, label):
        data = ins[0]
        starts = [int(v) for v in ins[1].ravel()]
        ends = [int(v) for v in ins[2].ravel()]
        axes = [int(v) % data.ndim for v in ins[3].ravel()] if len(ins) > 3 else \
            list(range(len(starts)))
        steps = [int(v) for v in ins[4].ravel()] if len(ins) > 4 else [1] * len(starts)
        slicer = [slice(None)] * data.ndim
        for s, e, a, st in zip(starts, ends, axes, steps):
            if st == 0:
                raise ExecError(f"node {label} (Slice): zero step")
            e = None if e >= 2**62 else e
            slicer[a] = slice(s, e, st)
        return [data[tuple(slicer)].copy()]

    def op_resize(self, node, ins, env, label):
        x, sizes = ins
        dims = [int(v) for v in sizes.ravel()]
        mode = ops.get_attr(node, "mode")
        return [_resize_nchw(x, dims, mode, label)]

    def op_upsample(self, node, ins, env, label):
        x, scales = ins
        factors = [int(v) for v in scales.ravel()]
        if len(factors) != x.ndim:
            raise ExecError(f"node {label} (Upsample): got {len(factors)} scales "
                            f"for rank {x.ndim}")
        dims = [d * f for d, f in zip(x.shape, factors)]
        mode = ops.get_attr(node, "mode")
        return [_resize_nchw(x, dims, mode, label)]

    # -- control flow ------------------------------------------------------------

    def op_if(self, node, ins, env, label):
        cond = bool(ins[0].ravel()[0])
        branch = "then_branch" if cond else "else_branch"
        self.trace.branch_decisions[label] = {"kind": "if", "cond": cond}
        outs = self.run_subgraph(node.subgraphs[branch], env, f"{label}.{branch}",
                                 binds={})
        return [o.copy() for o in outs[: len(node.outputs)]]

    def op_loop(self, node, ins, env, label):
        trip_arr = ins[0]
        if trip_arr.dtype != np.int64 or trip_arr.size != 1:
            raise ExecError(f"node {label} (Loop): trip count must be an i64 scalar")
        trip = int(trip_arr.ravel()[0])
        if trip < 0:
            raise ExecError(f"node {label} (Loop): negative trip count {trip}")
        self.trace.branch_decisions[label] = {"kind": "loop", "trip": trip}
        body = node.subgraphs["body"]
        state = list(ins[1:])
        for i in range(trip):
            binds = {body.inputs[0].id: np.array(i, dtype=np.int64)}
            for td, arr in zip(body.inputs[1:], state):
                binds[td.id] = arr
            state = self.run_subgraph(body, env, f"{label}.body[{i}]", binds)
        return [s.copy() for s in state[: len(node.outputs)]]

    def op_switch(self, node, ins, env, label):
        data, selector = ins
        if selector.dtype != np.int64:
            raise ExecError(f"node {label} (Switch): selector must be i64")
        sel = int(selector.ravel()[0])
        if not (0 <= sel < len(node.outputs)):
            raise ExecError(
                f"node {label} (Switch): selector {sel} out of range "
                f"0..{len(node.outputs) - 1}")
        self.trace.branch_decisions[label] = {"kind": "switch", "selector": sel}
        return [data.copy() if k == sel else None for k in range(len(node.outputs))]

    def op_fusedregion(self, node, ins, env, label):
        body = node.subgraphs["body"]
        child = _Env(env)
        buf = None
        chain_id = None
        for sub_node in body.nodes:
            arrs = []
            for tid in sub_node.inputs:
                if tid == chain_id:
                    arrs.append(buf)
                else:
                    arr, absent = child.lookup(tid)
                    if absent:
                        raise ExecError(f"node {label}: absent tensor inside region")
                    arrs.append(arr)
            buf = self._fused_step(sub_node, arrs, buf, chain_id, label)
            chain_id = sub_node.outputs[0]
            child.bind(chain_id, buf)
        return [buf]

    def _fused_step(self, sub_node, arrs, buf, chain_id, label):
        op = sub_node.op_kind
        uses_buf = buf is not None and chain_id in sub_node.inputs
        if op == "Conv":
            strides = ops.get_attr(sub_node, "strides")
            pads = ops.get_attr(sub_node, "pads")
            b = arrs[2] if len(arrs) > 2 else None
            return conv2d(arrs[0], arrs[1], b, strides, pads, label)
        if op == "MatMul":
            return (arrs[0] @ arrs[1]).astype(arrs[0].dtype)
        if op == "Relu":
            if uses_buf:
                np.maximum(buf, np.zeros((), dtype=buf.dtype), out=buf)
                return buf
            return np.maximum(arrs[0], np.zeros((), dtype=arrs[0].dtype))
        if op == "Sigmoid":
            with np.errstate(over="ignore"):
                if uses_buf and buf.dtype == np.float32:
                    np.negative(buf, out=buf)
                    np.exp(buf, out=buf)
                    buf += np.float32(1.0)
                    np.divide(np.float32(1.0), buf, out=buf)
                    return buf
                x = arrs[0].astype(np.float32, copy=False)
                return (1.0 / (1.0 + np.exp(-x))).astype(np.float32)
        if op == "Round":
            if uses_buf and buf.dtype == np.float32:
                np.rint(buf, out=buf)
                return buf
            return np.rint(arrs[0]).astype(arrs[0].dtype)
        if op == "Cast":
            return arrs[0].astype(NP_DTYPE[ops.get_attr(sub_node, "to")])
        if op in ("Add", "Mul"):
            ufunc = np.add if op == "Add" else np.multiply
            if uses_buf:
                other = arrs[1] if sub_node.inputs[0] == chain_id else arrs[0]
                if np.broadcast_shapes(buf.shape, other.shape) == buf.shape:
                    ufunc(buf, other.astype(buf.dtype, copy=False), out=buf)
                    return buf
            return _binary(ufunc, arrs, label)
        raise ExecError(f"node {label}: {op} cannot run inside a fused region")


def _binary(ufunc, ins, label):
    a, b = ins
    try:
        return ufunc(a, b).astype(a.dtype)
    except ValueError as e:
        raise ExecError(f"node {label}: broadcast failed for "
                        f"{a.shape} and {b.shape}") from e


def conv2d(x, w, b, strides, pads, label):
    """Direct NCHW convolution (groups=1), accumulated in fp32."""
    if x.ndim != 4 or w.ndim != 4:
        raise ExecError(f"node {label} (Conv): expects rank-4 data and weights")
    n, c, h, wd = x.shape
    m, c2, kh, kw = w.shape
    if c != c2:
        raise ExecError(f"node {label} (Conv): channel mismatch {c} vs {c2}")
    sh, sw = strides
    pt, pl, pb, pr = pads
    oh = (h + pt + pb - kh) // sh + 1
    ow = (wd + pl + pr - kw) // sw + 1
    if oh <= 0 or ow <= 0:
        raise ExecError(f"node {label} (Conv): empty output for input {x.shape}")
    padded = np.zeros((n, c, h + pt + pb, wd + pl + pr), dtype=np.float32)
    padded[:, :, pt:pt + h, pl:pl + wd] = x
    out = np.zeros((n, m, oh, ow), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            window = padded[:, :, ky:ky + (oh - 1) * sh + 1:sh,
                            kx:kx + (ow - 1) * sw + 1:sw]
            out += np.einsum("nchw,mc->nmhw", window, w[:, :, ky, kx],
                             optimize=False)
    if b is not None:
        out += b.reshape(1, m, 1, 1)
    return out


def _pool(node, x, label, mode):
    if x.ndim != 4:
        raise ExecError(f"node {label}: pooling expects rank-4 input")
    kh, kw = ops.get_attr(node, "kernel_shape")
    sh, sw = ops.get_attr(node, "strides")
    pt, pl, pb, pr = ops.get_attr(node, "pads")
    n, c, h, w = x.shape
    oh = (h + pt + pb - kh) // sh + 1
    ow = (w + pl + pr - kw) // sw + 1
    if oh <= 0 or ow <= 0:
        raise ExecError(f"node {label}: empty pooling output for input {x.shape}")
    if mode == "max":
        fill = np.finfo(np.float32).min
    else:
        fill = 0.0
    padded = np.full((n, c, h + pt + pb, w + pl + pr), fill, dtype=np.float32)
    padded[:, :, pt:pt + h, pl:pl + w] = x
    counts = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=np.float32)
    counts[:, :, pt:pt + h, pl:pl + w] = 1.0
    out = None
    denom = None
    for ky in range(kh):
        for kx in range(kw):
            window = padded[:, :, ky:ky + (oh - 1) * sh + 1:sh,
                            kx:kx + (ow - 1) * sw + 1:sw]
            if mode == "max":
                out = window.copy() if out is None else np.maximum(out, window)
            else:
                out = window.copy() if out is None else out + window
                cwin = counts[:, :, ky:ky + (oh - 1) * sh + 1:sh,
                              kx:kx + (ow - 1) * sw + 1:sw]
                denom = cwin.copy() if denom is None else denom + cwin
    if mode == "avg":
        out = out / np.maximum(denom, 1.0)
    return out.astype(np.float32)


def _resize_nchw(x, dims, mode, label):
    if x.ndim != 4 or len(dims) != 4:
        raise ExecError(f"node {label}: resize expects rank-4 input and sizes")
    if dims[0] != x.shape[0] or dims[1] != x.shape[1]:
        raise ExecError(f"node {label}: resize only rescales spatial dims")
    oh, ow = dims[2], dims[3]
    h, w = x.shape[2], x.shape[3]
    if oh < 1 or ow < 1:
        raise ExecError(f"node {label}: resize target must be positive")
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    if mode == "nearest":
        yi = np.clip(np.rint(ys).astype(np.int64), 0, h - 1)
        xi = np.clip(np.rint(xs).astype(np.int64), 0, w - 1)
        return np.ascontiguousarray(x[:, :, yi][:, :, :, xi])
    if mode != "linear":
        raise ExecError(f"node {label}: unknown resize mode {mode!r}")
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    ty = np.clip(ys - y0, 0.0, 1.0)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    tx = np.clip(xs - x0, 0.0, 1.0)
    xf = x.astype(np.float64)
    top = xf[:, :, y0][:, :, :, x0] * (1 - tx) + xf[:, :, y0][:, :, :, x1] * tx
    bot = xf[:, :, y1][:, :, :, x0] * (1 - tx) + xf[:, :, y1][:, :, :, x1] * tx
    out = top * (1 - ty)[None, None, :, None] + bot * ty[None, None, :, None]
    return out.astype(x.dtype if x.dtype == np.float32 else np.float32)


def infer_bindings(g: ir.Graph, inputs: dict) -> dict:
    """Symbol values implied by concrete input extents; raises on conflict."""
    out: dict[str, int] = {}
    for td in g.inputs:
        arr = inputs.get(td.id)
        if arr is None:
            continue
        if len(td.shape) != arr.ndim:
            raise ExecError(
                f"graph input {td.id!r}: declared rank {len(td.shape)}, "
                f"got {arr.ndim}")
        for axis, d in enumerate(td.shape):
            if isinstance(d, int):
                if arr.shape[axis] != d:
                    raise ExecError(
                        f"graph input {td.id!r} axis {axis}: declared {d}, "
                        f"got {arr.shape[axis]}")
            else:
                seen = out.get(d)
                if seen is not None and seen != arr.shape[axis]:
                    raise ExecError(
                        f"symbol {d!r}: conflicting extents {seen} and "
                        f"{arr.shape[axis]}")
                out[d] = int(arr.shape[axis])
    return out
