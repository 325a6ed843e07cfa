"""Static execution planning: graph partitioning, peak-memory ordering,
and byte-offset assignment.

The graph is cut at tensors whose byte size cannot be resolved under the
given symbol bindings (nac dimensions, unbound symbols) and around
control-flow nodes, whose path regions execute mutually exclusively and
must not be interleaved by the scheduler.  Each remaining region is
ordered to minimize peak activation memory: exhaustively (a subset dynamic
program equivalent to branch-and-bound over all topological orders) when
the region is small enough, greedily otherwise.

Liveness model, shared with the interpreter's arena accounting: a tensor
is live from its producing step through the step of its last consumer,
inclusive; graph outputs and tensors consumed by other regions stay live
to the end of their region's window, and tensors nothing consumes die at
their own producing step.  Peak is the maximum over steps of the summed
live sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import ir, lattice, ops, symexpr
from .analysis import AnalysisResult

MAX_EXHAUSTIVE_DEFAULT = 10


class PlanError(RuntimeError):
    pass


@dataclass
class Region:
    nodes: tuple  # node indices, topological
    boundary_inputs: tuple
    boundary_outputs: tuple
    all_static: bool
    mode: str = "deferred-dynamic"  # exhaustive | heuristic | deferred-dynamic
    order: tuple = ()
    peak_bytes: Optional[int] = None


@dataclass
class Plan:
    graph_name: str
    graph_sha256: str
    bindings: dict
    order: list  # global node order (indices)
    lifetimes: dict  # tensor id -> [start step, end step]
    sizes: dict  # tensor id -> bytes (static tensors only)
    offsets: dict  # tensor id -> byte offset
    pool: list  # tensor ids with unresolved sizes (runtime-allocated)
    arena_bytes: int
    planned_peak_bytes: int
    regions: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Sizes


def tensor_sizes(g: ir.Graph, result: AnalysisResult, bindings: Optional[dict] = None):
    """Byte size of every top-level node-produced tensor under bindings.

    Returns (sizes, size_exprs): `sizes[tid]` is an int or None when not
    resolvable; `size_exprs[tid]` is a SymExpr in element units times dtype
    size when at least symbolic, else None.
    """
    binds = dict(result.bindings)
    binds.update(bindings or {})
    dtypes = ops.infer_dtypes(g)
    sizes: dict[str, Optional[int]] = {}
    exprs: dict[str, Optional[symexpr.SymExpr]] = {}
    for node in g.nodes:
        for tid in node.outputs:
            info = result.shape_of.get(tid)
            dt = ir.DTYPE_SIZE.get(dtypes.get(tid, "f32"), 4)
            if info is None or not info.is_ranked():
                sizes[tid] = None
                exprs[tid] = None
                continue
            total = symexpr.const(dt)
            ok = True
            for d in info.dims:
                e = lattice.to_expr(d)
                if e is None:
                    ok = False
                    break
                total = symexpr.mul(total, e)
            if not ok:
                sizes[tid] = None
                exprs[tid] = None
                continue
            exprs[tid] = total
            v = symexpr.eval_expr(total, binds)
            sizes[tid] = int(v) if v is not None else None
    return sizes, exprs


# ---------------------------------------------------------------------------
# Partition


def partition(g: ir.Graph, result: AnalysisResult, bindings: Optional[dict] = None):
    """Cut the graph into regions of resolvable tensors.

    An edge producer->consumer stays internal only when the connecting
    tensor's size is resolvable and neither endpoint is a control-flow
    node; everything else is a cut.  Returns regions ordered by earliest
    node position, each region's nodes in topological order.
    """
    sizes, _ = tensor_sizes(g, result, bindings)
    prod = ir.producer_map(g)
    n = len(g.nodes)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    control = {node.index for node in g.nodes if node.op_kind in ops.CONTROL_FLOW}
    for node in g.nodes:
        if node.index in control:
            continue
        for tid in ir.node_input_ids(node):
            p = prod.get(tid)
            if p is None or p in control:
                continue
            if sizes.get(tid) is not None:
                union(p, node.index)

    topo = ir.toposort_dfs(g)
    pos = {idx: k for k, idx in enumerate(topo)}
    groups: dict[int, list[int]] = {}
    for idx in range(n):
        groups.setdefault(find(idx), []).append(idx)
    regions = []
    consumers = ir.consumer_map(g)
    for root, members in groups.items():
        members.sort(key=lambda i: pos[i])
        member_set = set(members)
        produced = {tid for i in members for tid in g.nodes[i].outputs}
        b_in, b_out = [], []
        for i in members:
            for tid in ir.node_input_ids(g.nodes[i]):
                if tid not in produced and tid not in b_in:
                    b_in.append(tid)
        out_set = set(g.outputs)
        for tid in sorted(produced):
            users = consumers.get(tid, [])
            if tid in out_set or any(u not in member_set for u in users):
                b_out.append(tid)
        all_static = all(sizes.get(tid) is not None for tid in produced)
        regions.append(Region(
            nodes=tuple(members),
            boundary_inputs=tuple(b_in),
            boundary_outputs=tuple(b_out),
            all_static=all_static,
        ))
    regions.sort(key=lambda r: pos[r.nodes[0]])
    return regions


# ---------------------------------------------------------------------------
# Region ordering


@dataclass
class TaskGraph:
    """Self-contained ordering problem for one region.

    deps[i] are indices (within the region) that must run before i;
    produces[i] lists (tensor, size) pairs; consumers maps tensors to the
    region-internal consumer indices; escaping tensors stay live to the
    region's end.  Sizes may be ints or SymExpr (symbolic planning).
    """

    deps: list
    produces: list
    consumers: dict
    escaping: set


def _size_add(a, b):
    if isinstance(a, int) and isinstance(b, int):
        return a + b
    ea = symexpr.const(a) if isinstance(a, int) else a
    eb = symexpr.const(b) if isinstance(b, int) else b
    return symexpr.add(ea, eb)


def exhaustive_min_peak(tg: TaskGraph):
    """Provably minimal peak order via dynamic programming over subsets.

    Explores every topological order (with shared-prefix memoization),
    so the returned peak equals brute-force enumeration.
    Sizes must be ints.
    """
    n = len(tg.deps)
    dep_masks = [0] * n
    for i, ds in enumerate(tg.deps):
        for d in ds:
            dep_masks[i] |= 1 << d
    live_cache: dict[tuple, int] = {}

    def live_during(done_mask: int, step: int) -> int:
        key = (done_mask, step)
        if key in live_cache:
            return live_cache[key]
        total = 0
        mask = done_mask | (1 << step)
        for i in range(n):
            if not (mask >> i) & 1:
                continue
            for tid, size in tg.produces[i]:
                if size is None:
                    continue
                if i == step or tid in tg.escaping:
                    total += size
                    continue
                users = tg.consumers.get(tid, ())
                if any(u == step or not (done_mask >> u) & 1 for u in users):
                    total += size
        live_cache[key] = total
        return total

    full = (1 << n) - 1
    best: dict[int, tuple[int, int]] = {0: (0, -1)}  # mask -> (peak, last step)
    frontier = [0]
    seen = {0}
    # Breadth over subset sizes keeps the recurrence acyclic.
    for _ in range(n):
        next_frontier = []
        for mask in frontier:
            peak_here = best[mask][0]
            for i in range(n):
                if (mask >> i) & 1:
                    continue
                if dep_masks[i] & ~mask:
                    continue
                new_mask = mask | (1 << i)
                cand = max(peak_here, live_during(mask, i))
                cur = best.get(new_mask)
                if cur is None or cand < cur[0]:
                    best[new_mask] = (cand, i)
                if new_mask not in seen:
                    seen.add(new_mask)
                    next_frontier.append(new_mask)
        frontier = next_frontier
    if full not in best:
        raise PlanError("region has no topological order (cycle?)")
    order = []
    mask = full
    while mask:
        _, last = best[mask]
        order.append(last)
        mask &= ~(1 << last)
    order.reverse()
    return order, best[full][0]


def greedy_order(tg: TaskGraph, compare=None):
    """Ready-node greedy: minimize the live total of the step, tie-break by
    most bytes freed, then lowest index.  Returns (order, peak, decidable);
    with symbolic sizes `compare` decides orderings and `decidable` goes
    False when any needed comparison is not provable."""
    n = len(tg.deps)
    if compare is None:
        compare = _compare_concrete
    done: set[int] = set()
    order: list[int] = []
    peak = 0
    decidable = True
    while len(order) < n:
        ready = [i for i in range(n) if i not in done
                 and all(d in done for d in tg.deps[i])]
        if not ready:
            raise PlanError("region has no topological order (cycle?)")
        scored = []
        for i in ready:
            live = _live_total(tg, frozenset(done), i)
            freed = _freed_by(tg, done, i)
            scored.append((i, live, freed))
        best_i, best_live, best_freed = scored[0]
        for i, live, freed in scored[1:]:
            c = compare(live, best_live)
            if c is None:
                decidable = False
                c = 0
            if c < 0 or (c == 0 and _freed_better(freed, best_freed, compare)):
                best_i, best_live, best_freed = i, live, freed
        order.append(best_i)
        done.add(best_i)
        if isinstance(best_live, int):
            peak = max(peak, best_live)
    return order, peak, decidable


def _live_total(tg: TaskGraph, done: frozenset, step: int):
    total = 0
    for i in list(done) + [step]:
        for tid, size in tg.produces[i]:
            if size is None:
                continue
            if i == step or tid in tg.escaping:
                total = _size_add(total, size)
                continue
            users = tg.consumers.get(tid, ())
            if any(u == step or u not in done for u in users):
                total = _size_add(total, size)
    return total


def _freed_by(tg: TaskGraph, done: set, step: int):
    freed = 0
    after = done | {step}
    for i in after:
        for tid, size in tg.produces[i]:
            if size is None or tid in tg.escaping:
                continue
            users = tg.consumers.get(tid, ())
            if users and all(u in after for u in users) and (step in users or i == step):
                freed = _size_add(freed, size)
    return freed


def _freed_better(a, b, compare):
    c = compare(a, b)
    return c is not None and c > 0


def _compare_concrete(a, b):
    if isinstance(a, int) and isinstance(b, int):
        return (a > b) - (a < b)
    return _compare_symbolic(a, b)


def _expr_nonneg(e) -> bool:
    """Provably >= 0 given that dimension symbols are non-negative."""
    if e.op == "const":
        return e.args[0] >= 0
    if e.op == "sym":
        return True
    if e.op in ("add", "max", "min"):
        return all(_expr_nonneg(a) for a in e.args)
    if e.op == "mul":
        return all(_expr_nonneg(a) for a in e.args)
    if e.op in ("floordiv", "ceildiv"):
        return _expr_nonneg(e.args[0]) and _expr_nonneg(e.args[1])
    return False


def _compare_symbolic(a, b):
    """Sign of a-b when syntactically provable (symbols taken as >= 0),
    else None."""
    ea = symexpr.const(a) if isinstance(a, int) else a
    eb = symexpr.const(b) if isinstance(b, int) else b
    diff = symexpr.sub(ea, eb)
    if diff.is_const():
        v = diff.args[0]
        return (v > 0) - (v < 0)
    if _expr_nonneg(diff):
        return 1
    if _expr_nonneg(symexpr.mul(symexpr.const(-1), diff)):
        return -1
    return None


# ---------------------------------------------------------------------------
# Putting a plan together


def _region_taskgraph(g, region, sizes, size_exprs, symbolic, graph_consumers,
                      graph_outputs):
    idx_of = {node_idx: k for k, node_idx in enumerate(region.nodes)}
    member_set = set(region.nodes)
    prod = ir.producer_map(g)
    # Dependencies induced through external paths keep the merged global
    # order consistent (a -> external -> b forces a before b inside too).
    reach_cache: dict[int, set] = {}

    def reaches(src: int) -> set:
        if src in reach_cache:
            return reach_cache[src]
        seen = set()
        stack = [src]
        while stack:
            cur = stack.pop()
            for tid in g.nodes[cur].outputs:
                for user in graph_consumers.get(tid, ()):
                    if user not in seen:
                        seen.add(user)
                        stack.append(user)
        reach_cache[src] = seen
        return seen

    deps = [set() for _ in region.nodes]
    for node_idx in region.nodes:
        k = idx_of[node_idx]
        for tid in ir.node_input_ids(g.nodes[node_idx]):
            p = prod.get(tid)
            if p in member_set:
                deps[k].add(idx_of[p])
    for a in region.nodes:
        for b in reaches(a):
            if b in member_set and b != a:
                ka, kb = idx_of[a], idx_of[b]
                if ka != kb:
                    deps[kb].add(ka)

    produces = []
    consumers: dict[str, list[int]] = {}
    escaping = set(region.boundary_outputs)
    out_set = set(graph_outputs)
    for node_idx in region.nodes:
        outs = []
        for tid in g.nodes[node_idx].outputs:
            size = sizes.get(tid)
            if size is None and symbolic:
                size = size_exprs.get(tid)
            outs.append((tid, size))
            if tid in out_set:
                escaping.add(tid)
        produces.append(outs)
    for node_idx in region.nodes:
        for tid in ir.node_input_ids(g.nodes[node_idx]):
            if tid in {t for outs in produces for t, _ in outs}:
                consumers.setdefault(tid, []).append(idx_of[node_idx])
    return TaskGraph(deps=deps, produces=produces, consumers=consumers,
                     escaping=escaping)


def plan_order(g, region: Region, sizes: dict, size_exprs: Optional[dict] = None,
               max_exhaustive: int = MAX_EXHAUSTIVE_DEFAULT,
               graph_consumers: Optional[dict] = None,
               graph_outputs=()):
    """Order one region's nodes for minimal peak bytes.

    Returns (order, peak_bytes, mode).  All-static regions get the
    exhaustive optimum up to `max_exhaustive` nodes and the greedy
    heuristic beyond; regions with unresolved sizes run the greedy with
    symbolic comparisons (unknown sizes count as zero, a lower bound) and
    defer entirely when a needed comparison is unprovable.  Control-flow
    regions always defer.
    """
    size_exprs = size_exprs or {}
    if graph_consumers is None:
        graph_consumers = ir.consumer_map(g)
    control = any(g.nodes[i].op_kind in ops.CONTROL_FLOW for i in region.nodes)
    if control or not region.nodes:
        return region.nodes, None, "deferred-dynamic"
    if region.all_static:
        tg = _region_taskgraph(g, region, sizes, size_exprs, False,
                               graph_consumers, graph_outputs)
        if len(region.nodes) <= max_exhaustive:
            local, peak = exhaustive_min_peak(tg)
            mode = "exhaustive"
        else:
            local, peak, _ = greedy_order(tg)
            mode = "heuristic"
        return tuple(region.nodes[k] for k in local), peak, mode
    has_expr = any(size_exprs.get(tid) is not None or sizes.get(tid) is not None
                   for i in region.nodes for tid in g.nodes[i].outputs)
    if has_expr:
        tg = _region_taskgraph(g, region, sizes, size_exprs, True,
                               graph_consumers, graph_outputs)
        local, _, decidable = greedy_order(tg, compare=_compare_symbolic)
        if decidable:
            return tuple(region.nodes[k] for k in local), None, "heuristic"
    return region.nodes, None, "deferred-dynamic"


def _order_region(g, region, sizes, size_exprs, max_exhaustive, graph_consumers,
                  graph_outputs):
    order, peak, mode = plan_order(
        g, region, sizes, size_exprs, max_exhaustive, graph_consumers,
        graph_outputs)
    region.order = order
    region.peak_bytes = peak
    region.mode = mode


def _merge_region_orders(g, regions) -> list:
    prod = ir.producer_map(g)
    emitted: set[str] = set()
    for gr in ir.iter_graphs(g):
        for td in list(gr.inputs) + list(gr.initializers):
            emitted.add(td.id)
    done_nodes: set[int] = set()
    cursors = [0] * len(regions)
    order: list[int] = []
    total = len(g.nodes)

    def ready(idx: int) -> bool:
        return all(
            tid in emitted or prod.get(tid) is None or prod[tid] in done_nodes
            for tid in ir.node_input_ids(g.nodes[idx])
        )

    while len(order) < total:
        progressed = False
        for r, region in enumerate(regions):
            if cursors[r] >= len(region.order):
                continue
            idx = region.order[cursors[r]]
            if ready(idx):
                order.append(idx)
                done_nodes.add(idx)
                emitted.update(g.nodes[idx].outputs)
                cursors[r] += 1
                progressed = True
                break
        if not progressed:
            raise PlanError("could not merge region orders into a global order")
    return order


def compute_lifetimes(g: ir.Graph, order: list) -> dict:
    """Producer step through last consumer step; outputs live to the end."""
    step_of = {idx: k for k, idx in enumerate(order)}
    consumers = ir.consumer_map(g)
    out_set = set(g.outputs)
    last = len(order) - 1
    lifetimes = {}
    for node in g.nodes:
        start = step_of[node.index]
        for tid in node.outputs:
            end = start
            for user in consumers.get(tid, ()):
                end = max(end, step_of[user])
            if tid in out_set:
                end = last
            lifetimes[tid] = (start, end)
    return lifetimes


def peak_over_order(lifetimes: dict, sizes: dict) -> int:
    """Max over steps of summed live static sizes."""
    peak = 0
    events: dict[int, int] = {}
    for tid, (start, end) in lifetimes.items():
        size = sizes.get(tid)
        if size is None:
            continue
        events[start] = events.get(start, 0) + size
        events[end + 1] = events.get(end + 1, 0) - size
    live = 0
    for step in sorted(events):
        live += events[step]
        peak = max(peak, live)
    return peak


def allocate(order, lifetimes: dict, sizes: dict):
    """Greedy best-fit-by-lowest-offset placement.

    Tensors sorted by size descending; each goes to the lowest offset whose
    byte range is disjoint from every already-placed tensor with an
    overlapping lifetime.  Unresolved sizes go to the runtime pool.
    """
    static = [(tid, sizes[tid]) for tid in lifetimes if sizes.get(tid) is not None]
    pool = [tid for tid in lifetimes if sizes.get(tid) is None]
    static.sort(key=lambda it: (-it[1], lifetimes[it[0]][0], it[0]))
    placed: list[tuple[str, int, int]] = []  # (tid, offset, size)
    offsets: dict[str, int] = {}
    arena = 0
    for tid, size in static:
        s0, e0 = lifetimes[tid]
        conflicts = []
        for other, off, osz in placed:
            s1, e1 = lifetimes[other]
            if s0 <= e1 and s1 <= e0:
                conflicts.append((off, osz))
        conflicts.sort()
        candidate = 0
        for off, osz in conflicts:
            if candidate + size <= off:
                break
            candidate = max(candidate, off + osz)
        offsets[tid] = candidate
        placed.append((tid, candidate, size))
        arena = max(arena, candidate + size)
    return offsets, sorted(pool), arena


def build_plan(
    g: ir.Graph,
    result: AnalysisResult,
    bindings: Optional[dict] = None,
    max_exhaustive: int = MAX_EXHAUSTIVE_DEFAULT,
) -> Plan:
    binds = dict(result.bindings)
    binds.update(bindings or {})
    sizes, size_exprs = tensor_sizes(g, result, binds)
    regions = partition(g, result, binds)
    graph_consumers = ir.consumer_map(g)
    topo = ir.toposort_dfs(g)
    pos = {idx: k for k, idx in enumerate(topo)}
    for region in regions:
        region.order = tuple(sorted(region.nodes, key=lambda i: pos[i]))
        _order_region(g, region, sizes, size_exprs, max_exhaustive,
                      graph_consumers, g.outputs)
    order = _merge_region_orders(g, regions)
    lifetimes = compute_lifetimes(g, order)
    planned_peak = peak_over_order(lifetimes, sizes)
    offsets, pool, arena = allocate(order, lifetimes, sizes)
    return Plan(
        graph_name=g.name,
        graph_sha256=ir.graph_sha256(g),
        bindings=binds,
        order=order,
        lifetimes={tid: list(window) for tid, window in lifetimes.items()},
        sizes={tid: s for tid, s in sizes.items() if s is not None},
        offsets=offsets,
        pool=pool,
        arena_bytes=arena,
        planned_peak_bytes=planned_peak,
        regions=regions,
    )


# ---------------------------------------------------------------------------
# Serialization


def plan_to_obj(plan: Plan) -> dict:
    return {
        "graph": plan.graph_name,
        "graph_sha256": plan.graph_sha256,
        "bindings": dict(plan.bindings),
        "order": list(plan.order),
        "subgraphs": [
            {
                "nodes": list(r.nodes),
                "mode": r.mode,
                "order": list(r.order),
                "peak_bytes": r.peak_bytes,
                "all_static": r.all_static,
                "boundary_inputs": list(r.boundary_inputs),
                "boundary_outputs": list(r.boundary_outputs),
            }
            for r in plan.regions
        ],
        "lifetimes": {tid: list(w) for tid, w in sorted(plan.lifetimes.items())},
        "sizes": {tid: plan.sizes[tid] for tid in sorted(plan.sizes)},
        "offsets": {tid: plan.offsets[tid] for tid in sorted(plan.offsets)},
        "pool": list(plan.pool),
        "arena_bytes": plan.arena_bytes,
        "planned_peak_bytes": plan.planned_peak_bytes,
    }


def plan_from_obj(obj: dict) -> Plan:
    regions = [
        Region(
            nodes=tuple(r["nodes"]),
            boundary_inputs=tuple(r.get("boundary_inputs", ())),
            boundary_outputs=tuple(r.get("boundary_outputs", ())),
            all_static=r.get("all_static", False),
            mode=r.get("mode", "deferred-dynamic"),
            order=tuple(r.get("order", r["nodes"])),
            peak_bytes=r.get("peak_bytes"),
        )
        for r in obj.get("subgraphs", [])
    ]
    return Plan(
        graph_name=obj["graph"],
        graph_sha256=obj["graph_sha256"],
        bindings=dict(obj.get("bindings", {})),
        order=list(obj["order"]),
        lifetimes={tid: tuple(w) for tid, w in obj["lifetimes"].items()},
        sizes=dict(obj.get("sizes", {})),
        offsets=dict(obj.get("offsets", {})),
        pool=list(obj.get("pool", [])),
        arena_bytes=obj.get("arena_bytes", 0),
        planned_peak_bytes=obj.get("planned_peak_bytes", 0),
        regions=regions,
    )
