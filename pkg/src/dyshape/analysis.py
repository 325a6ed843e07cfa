"""Forward data-flow analysis inferring symbolic shapes and values.

The analyzer initializes every tensor entry to undef, seeds graph inputs
(known extents, or named symbols for dynamic dimensions, with optional
concrete bindings substituted) and initializers, then sweeps the nodes in
deterministic topological order applying per-operator transfer functions.
Control-flow confluences (If outputs, Combine) join their incoming facts
element-wise; Loop bodies are re-analyzed against their carried state until
stable, widening any carried entry that keeps changing.  Sweeps repeat
until a full pass changes nothing.

All state updates go through the lattice join, so entries only ever move
downward (toward nac) and the iteration count is bounded by the lattice
height times the number of entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import ir, lattice, ops, symexpr
from .lattice import (
    NAC,
    SHAPE_NAC,
    SHAPE_UNDEF,
    UNDEF,
    VALUE_NAC,
    VALUE_UNDEF,
    Dim,
    ShapeInfo,
    ValueInfo,
    dim_add,
    dim_floordiv,
    dim_mul,
    join_shape,
    join_value,
    known,
    ranked,
    symdim,
)

INT64_HUGE = 2**62  # slice ends at or beyond this mean "to the end"


@dataclass
class AnalysisResult:
    shape_of: dict
    value_of: dict
    symbols: dict  # name -> human-readable origin note
    symbol_sources: dict  # name -> ("input"|"shape_of", tensor id, axis)
    iterations: int  # sweeps that changed at least one entry
    sweeps: int  # total sweeps performed, nested re-analyses included
    sweep_bound: int
    diagnostics: list = field(default_factory=list)
    bindings: dict = field(default_factory=dict)


def merge_entries(entries):
    """Join per-branch (ShapeInfo, ValueInfo) pairs for one logical tensor."""
    s, v = SHAPE_UNDEF, VALUE_UNDEF
    for bs, bv in entries:
        s = join_shape(s, bs)
        v = join_value(v, bv)
    return s, v


def _broadcast_dims(a: Dim, b: Dim):
    """Pairwise broadcast: equal dims pass through, a known 1 yields the
    other side, a provable known mismatch is an error, anything else nac."""
    if a.kind == "undef" or b.kind == "undef":
        return UNDEF, None
    if a == b:
        return a, None
    if a == known(1):
        return b, None
    if b == known(1):
        return a, None
    if a.is_known() and b.is_known():
        return NAC, f"cannot broadcast {a.value} with {b.value}"
    return NAC, None


class ShapeAnalyzer:
    """Single-use analysis engine for one graph."""

    def __init__(self, graph: ir.Graph, bindings: Optional[dict] = None):
        self.graph = graph
        self.bindings = dict(bindings or {})
        self.dtypes = ops.infer_dtypes(graph)
        self.shape: dict[str, ShapeInfo] = {}
        self.value: dict[str, ValueInfo] = {}
        self.symbols: dict[str, str] = {}
        self.symbol_sources: dict[str, tuple] = {}
        self.diagnostics: list[str] = []
        self._diag_seen: set[str] = set()
        self._fresh_memo: dict[tuple, str] = {}
        self._fresh_counter = 0
        self._carried_changes: dict[tuple, int] = {}
        self.sweeps = 0
        self.changed_sweeps = 0
        self._declared_syms = set()
        for g in ir.iter_graphs(graph):
            self._declared_syms.update(g.symbols())

    # -- bookkeeping --------------------------------------------------------

    def _diag(self, path: str, node: ir.Node, msg: str) -> None:
        text = f"{path}node {node.index} ({node.op_kind}): {msg}"
        if text not in self._diag_seen:
            self._diag_seen.add(text)
            self.diagnostics.append(text)

    def _fresh_symbol(self, source: tuple, note: str) -> str:
        if source in self._fresh_memo:
            return self._fresh_memo[source]
        while True:
            name = f"S{self._fresh_counter}"
            self._fresh_counter += 1
            if name not in self._declared_syms and name not in self.symbols:
                break
        self._fresh_memo[source] = name
        self.symbols[name] = note
        self.symbol_sources[name] = source
        return name

    def _set(self, tid: str, s: Optional[ShapeInfo], v: Optional[ValueInfo]) -> bool:
        changed = False
        if s is not None:
            joined = join_shape(self.shape[tid], s)
            if joined != self.shape[tid]:
                self.shape[tid] = joined
                changed = True
        if v is not None:
            joined_v = join_value(self.value[tid], v)
            if joined_v != self.value[tid]:
                self.value[tid] = joined_v
                changed = True
        return changed

    # -- seeding ------------------------------------------------------------

    def _seed(self) -> None:
        for tid in ir.all_tensor_ids(self.graph):
            self.shape[tid] = SHAPE_UNDEF
            self.value[tid] = VALUE_UNDEF
        self._seed_graph_inputs(self.graph)
        for g in ir.iter_graphs(self.graph):
            for td in g.initializers:
                self.shape[td.id] = lattice.ranked_known(td.shape)
                self.value[td.id] = self._initializer_value(td)

    def _seed_graph_inputs(self, g: ir.Graph) -> None:
        for td in g.inputs:
            dims = []
            for axis, d in enumerate(td.shape):
                if isinstance(d, int):
                    dims.append(known(d))
                elif d in self.bindings:
                    dims.append(known(self.bindings[d]))
                else:
                    if d not in self.symbols:
                        self.symbols[d] = f"input {td.id!r} axis {axis}"
                        self.symbol_sources[d] = ("input", td.id, axis)
                    dims.append(symdim(d))
            self.shape[td.id] = ranked(dims)
            self.value[td.id] = VALUE_NAC

    def _initializer_value(self, td: ir.TensorDef) -> ValueInfo:
        if td.dtype != "i64" or len(td.shape) > 1 or td.data is None:
            return VALUE_NAC
        if td.data.size > lattice.MAX_TRACKED_ELEMS:
            return VALUE_NAC
        return lattice.elems(known(int(x)) for x in td.data.ravel())

    # -- driver -------------------------------------------------------------

    def run(self) -> AnalysisResult:
        self._seed()
        total_tensors = len(ir.all_tensor_ids(self.graph))
        carried = 0
        for g in ir.iter_graphs(self.graph):
            for node in g.nodes:
                if node.op_kind == "Loop":
                    carried += max(0, len(node.inputs) - 1)
        bound = total_tensors * 3 + carried * 2
        while True:
            changed = self._sweep_graph(self.graph, path="")
            if changed:
                self.changed_sweeps += 1
            if not changed:
                break
            if self.sweeps > bound:
                raise RuntimeError(
                    f"analysis exceeded sweep bound {bound} on graph {self.graph.name!r}")
        return AnalysisResult(
            shape_of=dict(self.shape),
            value_of=dict(self.value),
            symbols=dict(self.symbols),
            symbol_sources=dict(self.symbol_sources),
            iterations=self.changed_sweeps,
            sweeps=self.sweeps,
            sweep_bound=bound,
            diagnostics=list(self.diagnostics),
            bindings=dict(self.bindings),
        )

    def _sweep_graph(self, g: ir.Graph, path: str) -> bool:
        self.sweeps += 1
        changed = False
        for idx in ir.toposort_dfs(g):
            if self.update(g.nodes[idx], path)[0]:
                changed = True
        return changed

    # -- transfer dispatch ---------------------------------------------------

    def update(self, node: ir.Node, path: str = ""):
        """Apply the node's transfer function.

        Returns (changed, entries) where entries maps output ids to the
        (ShapeInfo, ValueInfo) the transfer computed before joining.
        """
        op = node.op_kind
        if op == "If":
            entries = self._transfer_if(node, path)
        elif op == "Loop":
            entries = self._transfer_loop(node, path)
        elif op == "FusedRegion":
            entries = self._transfer_fused(node, path)
        else:
            entries = self._transfer_plain(node, path)
        changed = False
        for tid, (s, v) in entries.items():
            if self._set(tid, s, v):
                changed = True
        return changed, entries

    def merge(self, branch_entries):
        """Join transfer: element-wise over branch results."""
        return merge_entries(branch_entries)

    # -- control flow ---------------------------------------------------------

    def _transfer_if(self, node: ir.Node, path: str) -> dict:
        results = []
        for bname in ("then_branch", "else_branch"):
            sub = node.subgraphs[bname]
            self._sweep_graph(sub, f"{path}{node.op_kind}[{node.index}]/")
            results.append([(self.shape[t], self.value[t]) for t in sub.outputs])
        entries = {}
        for i, tid in enumerate(node.outputs):
            per_branch = [r[i] for r in results if i < len(r)]
            entries[tid] = self.merge(per_branch)
        return entries

    def _transfer_loop(self, node: ir.Node, path: str) -> dict:
        body = node.subgraphs["body"]
        carried_srcs = list(node.inputs[1:])
        body_ins = [td.id for td in body.inputs]
        iter_id, carried_ids = body_ins[0], body_ins[1:]
        loop_key = f"{path}{node.index}"
        # Iteration counter is a concrete runtime scalar.
        self._set(iter_id, ranked(()), VALUE_NAC)
        for bt, src in zip(carried_ids, carried_srcs):
            self._join_carried(loop_key, bt, self.shape[src], self.value[src])
        for _ in range(2 * max(1, len(carried_ids)) + 2):
            self._sweep_graph(body, f"{path}Loop[{node.index}]/")
            changed = False
            for bt, out_t in zip(carried_ids, body.outputs):
                if self._join_carried(loop_key, bt, self.shape[out_t], self.value[out_t]):
                    changed = True
            if not changed:
                break
        entries = {}
        for tid, src, out_t in zip(node.outputs, carried_srcs, body.outputs):
            entries[tid] = self.merge([
                (self.shape[src], self.value[src]),
                (self.shape[out_t], self.value[out_t]),
            ])
        return entries

    def _join_carried(self, loop_key: str, tid: str, s: ShapeInfo, v: ValueInfo) -> bool:
        key = (loop_key, tid)
        count = self._carried_changes.get(key, 0)
        if count >= 2:
            # Widen: a carried entry trying to change a third time goes
            # straight to nac (termination backstop; the per-dimension join
            # normally reaches a fixed point on its own by here).
            if (join_shape(self.shape[tid], s) == self.shape[tid]
                    and join_value(self.value[tid], v) == self.value[tid]):
                return False
            return self._set(tid, SHAPE_NAC, VALUE_NAC)
        changed = self._set(tid, s, v)
        if changed:
            self._carried_changes[key] = count + 1
        return changed

    def _transfer_fused(self, node: ir.Node, path: str) -> dict:
        body = node.subgraphs["body"]
        self._sweep_graph(body, f"{path}FusedRegion[{node.index}]/")
        entries = {}
        for tid, out_t in zip(node.outputs, body.outputs):
            entries[tid] = (self.shape[out_t], self.value[out_t])
        return entries

    # -- plain operators -------------------------------------------------------

    def _transfer_plain(self, node: ir.Node, path: str) -> dict:
        op = node.op_kind
        ins = [(self.shape[t], self.value[t]) for t in node.inputs]
        shapes = [s for s, _ in ins]
        values = [v for _, v in ins]
        nac_all = (SHAPE_NAC, VALUE_NAC)

        def diag(msg):
            self._diag(path, node, msg)

        if op == "Shape":
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac":
                return {node.outputs[0]: (ranked([NAC]), VALUE_NAC)}
            elems = []
            for axis, d in enumerate(s.dims):
                if d.kind == "undef":
                    # A dynamic dimension that never got a name: give it one
                    # so downstream value arithmetic stays expressible.
                    name = self._fresh_symbol(
                        ("shape_of", node.inputs[0], axis),
                        f"extent of {node.inputs[0]!r} axis {axis}")
                    d = symdim(name)
                    self._set(node.inputs[0], ranked(
                        [symdim(name) if i == axis else x
                         for i, x in enumerate(s.dims)]), None)
                elems.append(d)
            return {node.outputs[0]: (ranked([known(len(s.dims))]),
                                      lattice.elems(elems))}

        if op == "ConstantOfShape":
            v = values[0]
            if v.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if v.kind == "nac":
                return {node.outputs[0]: nac_all}
            dims = list(v.elems)
            out_v = VALUE_NAC
            dtype = ops.get_attr(node, "dtype")
            if dtype == "i64" and len(dims) == 1 and dims[0].is_known() \
                    and dims[0].value <= lattice.MAX_TRACKED_ELEMS:
                fill = known(int(ops.get_attr(node, "value")))
                out_v = lattice.elems([fill] * dims[0].value)
            return {node.outputs[0]: (ranked(dims), out_v)}

        if op == "Eyelike":
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac" or len(s.dims) != 2:
                if s.kind == "ranked":
                    diag(f"expects a rank-2 input, got rank {len(s.dims)}")
                return {node.outputs[0]: nac_all}
            return {node.outputs[0]: (s, VALUE_NAC)}

        if op in ("Relu", "Sigmoid", "Round", "Cast", "Softmax"):
            return {node.outputs[0]: (shapes[0], VALUE_NAC)}

        if op in ("Add", "Mul"):
            a, b = shapes
            if a.kind == "undef" or b.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if a.kind == "nac" or b.kind == "nac":
                return {node.outputs[0]: nac_all}
            ra, rb = list(a.dims), list(b.dims)
            while len(ra) < len(rb):
                ra.insert(0, known(1))
            while len(rb) < len(ra):
                rb.insert(0, known(1))
            dims = []
            for x, y in zip(ra, rb):
                d, err = _broadcast_dims(x, y)
                if err:
                    diag(err)
                dims.append(d)
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "Conv":
            return {node.outputs[0]: self._conv_like(node, shapes, diag)}

        if op in ("MaxPool", "AveragePool"):
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac" or len(s.dims) != 4:
                if s.kind == "ranked":
                    diag(f"expects a rank-4 input, got rank {len(s.dims)}")
                return {node.outputs[0]: nac_all}
            kernel = ops.get_attr(node, "kernel_shape")
            strides = ops.get_attr(node, "strides")
            pads = ops.get_attr(node, "pads")
            dims = [s.dims[0], s.dims[1]]
            for i in range(2):
                dims.append(_window_extent(
                    s.dims[2 + i], known(kernel[i]), pads[i], pads[2 + i], strides[i]))
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "MatMul":
            a, b = shapes
            if a.kind == "undef" or b.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if a.kind == "nac" or b.kind == "nac" or len(a.dims) != 2 or len(b.dims) != 2:
                if a.is_ranked() and b.is_ranked():
                    diag("expects rank-2 operands")
                return {node.outputs[0]: nac_all}
            k1, k2 = a.dims[1], b.dims[0]
            if k1.is_known() and k2.is_known() and k1 != k2:
                diag(f"inner dimensions disagree: {k1.value} vs {k2.value}")
                return {node.outputs[0]: nac_all}
            return {node.outputs[0]: (ranked([a.dims[0], b.dims[1]]), VALUE_NAC)}

        if op == "Concat":
            return {node.outputs[0]: self._concat(node, shapes, diag)}

        if op == "Gather":
            data, idx = shapes
            if data.kind == "undef" or idx.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if data.kind == "nac" or idx.kind == "nac":
                return {node.outputs[0]: nac_all}
            axis = ops.get_attr(node, "axis") % max(1, len(data.dims))
            dims = list(data.dims[:axis]) + list(idx.dims) + list(data.dims[axis + 1:])
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "ReduceSum":
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac":
                return {node.outputs[0]: nac_all}
            axes = ops.get_attr(node, "axes")
            keep = bool(ops.get_attr(node, "keepdims"))
            rank = len(s.dims)
            axes = list(range(rank)) if axes is None else [a % rank for a in axes]
            dims = []
            for i, d in enumerate(s.dims):
                if i in axes:
                    if keep:
                        dims.append(known(1))
                else:
                    dims.append(d)
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "DepthToSpace":
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac" or len(s.dims) != 4:
                if s.kind == "ranked":
                    diag(f"expects a rank-4 input, got rank {len(s.dims)}")
                return {node.outputs[0]: nac_all}
            r = ops.get_attr(node, "blocksize")
            c = s.dims[1]
            if c.is_known() and c.value % (r * r) != 0:
                diag(f"channel count {c.value} not divisible by blocksize^2 {r * r}")
                return {node.outputs[0]: nac_all}
            dims = [s.dims[0], dim_floordiv(c, known(r * r)),
                    dim_mul(s.dims[2], known(r)), dim_mul(s.dims[3], known(r))]
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "Reshape":
            return {node.outputs[0]: self._reshape(node, shapes, values, diag)}

        if op == "Expand":
            return {node.outputs[0]: self._expand(node, shapes, values, diag)}

        if op == "Range":
            return {node.outputs[0]: self._range(node, values, diag)}

        if op == "Resize":
            s, target = shapes[0], values[1]
            if s.kind == "undef" or target.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if target.kind == "nac":
                return {node.outputs[0]: nac_all}
            if s.is_ranked() and len(target.elems) != len(s.dims):
                diag(f"sizes has {len(target.elems)} entries for rank {len(s.dims)}")
                return {node.outputs[0]: nac_all}
            return {node.outputs[0]: (ranked(list(target.elems)), VALUE_NAC)}

        if op == "Upsample":
            s, scales = shapes[0], values[1]
            if s.kind == "undef" or scales.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            if s.kind == "nac" or scales.kind == "nac":
                return {node.outputs[0]: nac_all}
            if len(scales.elems) != len(s.dims):
                diag(f"scales has {len(scales.elems)} entries for rank {len(s.dims)}")
                return {node.outputs[0]: nac_all}
            dims = [dim_mul(d, f) for d, f in zip(s.dims, scales.elems)]
            return {node.outputs[0]: (ranked(dims), VALUE_NAC)}

        if op == "Slice":
            return {node.outputs[0]: self._slice(node, shapes, values, diag)}

        if op == "Nonzero":
            s = shapes[0]
            if s.kind == "undef":
                return {node.outputs[0]: (SHAPE_UNDEF, VALUE_UNDEF)}
            rank_dim = known(len(s.dims)) if s.is_ranked() else NAC
            return {node.outputs[0]: (ranked([rank_dim, NAC]), VALUE_NAC)}

        if op == "Switch":
            data_s, data_v = ins[0]
            return {tid: (data_s, data_v) for tid in node.outputs}

        if op == "Combine":
            return {node.outputs[0]: self.merge(ins)}

        raise ops.UnsupportedOperatorError(f"no transfer function for {op!r}")

    # -- op helpers ------------------------------------------------------------

    def _conv_like(self, node, shapes, diag):
        x, w = shapes[0], shapes[1]
        if x.kind == "undef" or w.kind == "undef":
            return SHAPE_UNDEF, VALUE_UNDEF
        if x.kind == "nac" or w.kind == "nac":
            return SHAPE_NAC, VALUE_NAC
        if len(x.dims) != 4 or len(w.dims) != 4:
            diag(f"expects rank-4 data and weights, got {len(x.dims)} and {len(w.dims)}")
            return SHAPE_NAC, VALUE_NAC
        cin, wcin = x.dims[1], w.dims[1]
        if cin.is_known() and wcin.is_known() and cin != wcin:
            diag(f"channel mismatch: input {cin.value} vs weight {wcin.value}")
            return SHAPE_NAC, VALUE_NAC
        strides = ops.get_attr(node, "strides")
        pads = ops.get_attr(node, "pads")
        dims = [x.dims[0], w.dims[0]]
        for i in range(2):
            dims.append(_window_extent(
                x.dims[2 + i], w.dims[2 + i], pads[i], pads[2 + i], strides[i]))
        return ranked(dims), VALUE_NAC

    def _concat(self, node, shapes, diag):
        if any(s.kind == "undef" for s in shapes):
            return SHAPE_UNDEF, VALUE_UNDEF
        if any(s.kind == "nac" for s in shapes):
            return SHAPE_NAC, VALUE_NAC
        rank = len(shapes[0].dims)
        if any(len(s.dims) != rank for s in shapes):
            diag("inputs have differing ranks")
            return SHAPE_NAC, VALUE_NAC
        axis = ops.get_attr(node, "axis") % max(1, rank)
        dims = []
        for i in range(rank):
            col = [s.dims[i] for s in shapes]
            if i == axis:
                dims.append(dim_add(*col))
            elif all(d == col[0] for d in col):
                dims.append(col[0])
            else:
                knowns = {d.value for d in col if d.is_known()}
                if len(knowns) > 1:
                    diag(f"axis {i} extents disagree: {sorted(knowns)}")
                dims.append(NAC)
        return ranked(dims), VALUE_NAC

    def _reshape(self, node, shapes, values, diag):
        data, target = shapes[0], values[1]
        if target.kind == "undef":
            return SHAPE_UNDEF, VALUE_UNDEF
        if target.kind == "nac":
            return SHAPE_NAC, VALUE_NAC
        dims: list[Dim] = []
        minus_one_at = None
        for i, e in enumerate(target.elems):
            if e.is_known() and e.value == 0:
                # 0 copies the corresponding input dimension.
                if data.is_ranked() and i < len(data.dims):
                    dims.append(data.dims[i])
                else:
                    dims.append(NAC)
            elif e.is_known() and e.value == -1:
                dims.append(NAC)  # placeholder, resolved below
                if minus_one_at is not None:
                    diag("more than one -1 in reshape target")
                    return SHAPE_NAC, VALUE_NAC
                minus_one_at = i
            elif e.is_known() and e.value < 0:
                diag(f"bad reshape target entry {e.value}")
                return SHAPE_NAC, VALUE_NAC
            else:
                dims.append(e)
        if minus_one_at is not None:
            dims[minus_one_at] = self._resolve_minus_one(data, dims, minus_one_at, diag)
        return ranked(dims), VALUE_NAC

    def _resolve_minus_one(self, data, dims, hole, diag):
        if not data.is_ranked():
            return NAC
        total = known(1)
        for d in data.dims:
            total = dim_mul(total, d)
        rest = known(1)
        for i, d in enumerate(dims):
            if i != hole:
                rest = dim_mul(rest, d)
        if total.kind in ("undef", "nac") or rest.kind in ("undef", "nac"):
            return NAC
        te, re_ = lattice.to_expr(total), lattice.to_expr(rest)
        q = symexpr.try_divide(te, re_)
        if q is None:
            if te.is_const() and re_.is_const():
                diag(f"element count {te.args[0]} not divisible by {re_.args[0]}")
            return NAC
        return lattice.from_expr(q)

    def _expand(self, node, shapes, values, diag):
        data, target = shapes[0], values[1]
        if data.kind == "undef" or target.kind == "undef":
            return SHAPE_UNDEF, VALUE_UNDEF
        if data.kind == "nac" or target.kind == "nac":
            return SHAPE_NAC, VALUE_NAC
        a = list(data.dims)
        b = list(target.elems)
        while len(a) < len(b):
            a.insert(0, known(1))
        while len(b) < len(a):
            b.insert(0, known(1))
        dims = []
        for x, y in zip(a, b):
            d, err = _broadcast_dims(x, y)
            if err:
                diag(err)
            dims.append(d)
        return ranked(dims), VALUE_NAC

    def _range(self, node, values, diag):
        start, limit, delta = values
        if any(v.kind == "undef" for v in (start, limit, delta)):
            return SHAPE_UNDEF, VALUE_UNDEF
        if any(v.kind != "elems" or len(v.elems) != 1 for v in (start, limit, delta)):
            return ranked([NAC]), VALUE_NAC
        s, l, d = start.elems[0], limit.elems[0], delta.elems[0]
        if not d.is_known():
            return ranked([NAC]), VALUE_NAC
        step = d.value
        if step == 0:
            diag("delta must be non-zero")
            return SHAPE_NAC, VALUE_NAC
        se, le = lattice.to_expr(s), lattice.to_expr(l)
        if se is None or le is None:
            return ranked([NAC]), VALUE_NAC
        span = symexpr.sub(le, se) if step > 0 else symexpr.sub(se, le)
        length = lattice.from_expr(symexpr.emax(
            symexpr.ceildiv(span, symexpr.const(abs(step))), symexpr.const(0)))
        out_v = VALUE_NAC
        if (self.dtypes.get(node.outputs[0]) == "i64" and length.is_known()
                and length.value <= lattice.MAX_TRACKED_ELEMS
                and s.is_known()):
            out_v = lattice.elems(
                known(s.value + i * step) for i in range(length.value))
        return ranked([length]), out_v

    def _slice(self, node, shapes, values, diag):
        data = shapes[0]
        if data.kind == "undef":
            return SHAPE_UNDEF, VALUE_UNDEF
        if data.kind == "nac":
            return SHAPE_NAC, VALUE_NAC
        starts, ends = values[1], values[2]
        axes_v = values[3] if len(values) > 3 else None
        steps_v = values[4] if len(values) > 4 else None
        if starts.kind == "undef" or ends.kind == "undef":
            return SHAPE_UNDEF, VALUE_UNDEF

        def all_known_ints(v):
            if v is None or not v.is_elems() or not all(e.is_known() for e in v.elems):
                return None
            return [e.value for e in v.elems]

        sv, ev = all_known_ints(starts), all_known_ints(ends)
        rank = len(data.dims)
        if axes_v is not None:
            axes = all_known_ints(axes_v)
            if axes is None:
                return SHAPE_NAC, VALUE_NAC
            axes = [a % rank for a in axes]
        else:
            # Default axes 0..len(starts)-1; the count is the starts tensor's
            # extent even when its values are unknown.
            if sv is not None:
                count = len(sv)
            elif starts.is_elems():
                count = len(starts.elems)
            elif shapes[1].is_ranked() and shapes[1].dims[0].is_known():
                count = shapes[1].dims[0].value
            else:
                return SHAPE_NAC, VALUE_NAC
            axes = list(range(count))
        steps = [1] * len(axes)
        if steps_v is not None:
            got = all_known_ints(steps_v)
            if got is None:
                dims = [NAC if i in set(axes) else d for i, d in enumerate(data.dims)]
                return ranked(dims), VALUE_NAC
            steps = got
        dims = list(data.dims)
        for pos, axis in enumerate(axes):
            if sv is None or ev is None:
                dims[axis] = NAC
                continue
            dims[axis] = _slice_extent(dims[axis], sv[pos], ev[pos], steps[pos], diag)
        return ranked(dims), VALUE_NAC

def _window_extent(d: Dim, kernel: Dim, pad_begin: int, pad_end: int, stride: int) -> Dim:
    """Sliding-window output extent: (d + pads - kernel) // stride + 1.

    The whole expression is built before canonicalization so transient
    negative constants fold away instead of widening to nac.
    """
    if d.kind == "undef" or kernel.kind == "undef":
        return UNDEF
    de, ke = lattice.to_expr(d), lattice.to_expr(kernel)
    if de is None or ke is None:
        return NAC
    try:
        span = symexpr.add(de, symexpr.const(pad_begin + pad_end),
                           symexpr.mul(symexpr.const(-1), ke))
        out = symexpr.add(symexpr.floordiv(span, symexpr.const(stride)),
                          symexpr.const(1))
    except ZeroDivisionError:
        return NAC
    return lattice.from_expr(out)


def _slice_extent(d: Dim, start: int, end: int, step: int, diag) -> Dim:
    if step == 0:
        diag("slice step must be non-zero")
        return NAC
    if step < 0:
        return NAC  # negative steps are not modeled symbolically
    if d.is_known():
        n = d.value
        s = max(start + n, 0) if start < 0 else min(start, n)
        e = max(end + n, 0) if end < 0 else min(end, n)
        return known(max(0, -((s - e) // step)))
    de = lattice.to_expr(d)
    if de is None:
        return NAC
    c = symexpr.const
    if start < 0:
        sd = symexpr.emax(symexpr.add(de, c(start)), c(0))
    else:
        sd = symexpr.emin(c(start), de)
    if end >= INT64_HUGE:
        ed = de
    elif end < 0:
        ed = symexpr.emax(symexpr.add(de, c(end)), c(0))
    else:
        ed = symexpr.emin(c(end), de)
    length = symexpr.ceildiv(symexpr.emax(symexpr.sub(ed, sd), c(0)), c(step))
    return lattice.from_expr(length)


def run_to_fixpoint(g: ir.Graph, bindings: Optional[dict] = None) -> AnalysisResult:
    """Analyze a validated graph; see module docstring for the algorithm."""
    return ShapeAnalyzer(g, bindings).run()


def consistency_violations(
    g: ir.Graph,
    result: AnalysisResult,
    observed_dims: dict,
    bindings: Optional[dict] = None,
) -> list[str]:
    """Check executed tensor extents against the inferred facts.

    known(k) must match exactly; symbols and expressions must match their
    value under `bindings` (extended with analysis-minted symbols resolved
    from the observation itself); nac matches anything; undef is a
    violation on any executed tensor.
    """
    binds = dict(bindings or {})
    binds.update(result.bindings)
    for name, src in result.symbol_sources.items():
        _, tid, axis = src
        dims = observed_dims.get(tid)
        if dims is not None and axis < len(dims):
            binds.setdefault(name, int(dims[axis]))
    out = []
    for tid, dims in observed_dims.items():
        info = result.shape_of.get(tid)
        if info is None:
            out.append(f"tensor {tid!r}: executed but never analyzed")
            continue
        if info.kind == "undef":
            out.append(f"tensor {tid!r}: executed but still undef")
            continue
        if info.kind == "nac":
            continue
        if len(info.dims) != len(dims):
            out.append(
                f"tensor {tid!r}: inferred rank {len(info.dims)}, observed {len(dims)}")
            continue
        for axis, (d, actual) in enumerate(zip(info.dims, dims)):
            if d.kind in ("nac", "undef"):
                continue
            expect = lattice.eval_dim(d, binds)
            if expect is None:
                continue  # unbound symbol: cannot falsify
            if expect != actual:
                out.append(
                    f"tensor {tid!r} axis {axis}: inferred {lattice.format_dim(d)}"
                    f" = {expect}, observed {actual}")
    return out


# ---------------------------------------------------------------------------
# Report serialization


def report_to_obj(g: ir.Graph, result: AnalysisResult) -> dict:
    tensors = {}
    for tid in ir.all_tensor_ids(g):
        tensors[tid] = {
            "shape": lattice.format_shape(result.shape_of[tid]),
            "value": lattice.format_value(result.value_of[tid]),
        }
    return {
        "graph": g.name,
        "graph_sha256": ir.graph_sha256(g),
        "bindings": dict(result.bindings),
        "iterations": result.iterations,
        "sweeps": result.sweeps,
        "sweep_bound": result.sweep_bound,
        "symbols": dict(result.symbols),
        "symbol_sources": {k: list(v) for k, v in result.symbol_sources.items()},
        "tensors": tensors,
        "diagnostics": list(result.diagnostics),
    }


def result_from_report(obj: dict) -> AnalysisResult:
    shape_of, value_of = {}, {}
    for tid, entry in obj["tensors"].items():
        shape_of[tid] = lattice.parse_shape(entry["shape"])
        value_of[tid] = lattice.parse_value(entry["value"])
    return AnalysisResult(
        shape_of=shape_of,
        value_of=value_of,
        symbols=dict(obj.get("symbols", {})),
        symbol_sources={k: tuple(v) for k, v in obj.get("symbol_sources", {}).items()},
        iterations=obj.get("iterations", 0),
        sweeps=obj.get("sweeps", 0),
        sweep_bound=obj.get("sweep_bound", 0),
        diagnostics=list(obj.get("diagnostics", [])),
        bindings=dict(obj.get("bindings", {})),
    )
