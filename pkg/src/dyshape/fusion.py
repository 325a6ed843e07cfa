"""Shape-driven operator fusion.

Adjacent operators fuse when the analysis proves their outputs share one
canonical shape -- exact extents are not required, symbolic dimensions
compare structurally.  Two group forms exist: a chain of elementwise
operators, and a Conv/MatMul anchor followed by an elementwise epilogue.
Every tensor strictly inside a group has exactly one consumer (inside the
group), so fused execution can stream through a single output buffer.
Control-flow nodes and value/execution-dependent operators never fuse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import ir, ops
from .analysis import AnalysisResult
from .lattice import ShapeInfo


@dataclass
class FusionGroup:
    members: tuple  # node indices in dependency order
    kind: str  # "ElementwiseChain" | "AnchorPlusEpilogue"
    anchor: Optional[int]
    signature: ShapeInfo


def _fusable_signature(info: Optional[ShapeInfo]) -> bool:
    if info is None or not info.is_ranked():
        return False
    return all(d.kind not in ("nac", "undef") for d in info.dims)


def _broadcast_operand_ok(g: ir.Graph, tid: str, operand: ShapeInfo,
                          sig: ShapeInfo) -> bool:
    """A non-matching side input is tolerated only as a scalar or a
    statically-shaped per-channel/per-element initializer."""
    if operand == sig:
        return True
    td = g.tensor_def(tid)
    if td is None or td.role != "initializer":
        return False
    if not operand.is_ranked() or not operand.all_known():
        return False
    if len(operand.dims) == 0:
        return True
    # Right-aligned broadcast: every extent is 1 or equals the signature's.
    sdims = list(sig.dims)
    odims = list(operand.dims)
    if len(odims) > len(sdims):
        return False
    for o, s in zip(reversed(odims), reversed(sdims)):
        if o.value == 1 or o == s:
            continue
        return False
    return True


def find_fusion_groups(g: ir.Graph, result: AnalysisResult) -> list[FusionGroup]:
    """Greedy maximal grouping in topological order (first-come wins)."""
    order = ir.toposort_dfs(g)
    pos = {idx: k for k, idx in enumerate(order)}
    prod = ir.producer_map(g)
    consumers = ir.consumer_map(g)
    out_set = set(g.outputs)

    group_of: dict[int, int] = {}
    groups: dict[int, dict] = {}
    next_gid = 0

    def out_shape(idx: int) -> Optional[ShapeInfo]:
        outs = g.nodes[idx].outputs
        if len(outs) != 1:
            return None
        return result.shape_of.get(outs[0])

    def start_group(idx: int, anchored: bool) -> None:
        nonlocal next_gid
        sig = out_shape(idx)
        if not _fusable_signature(sig):
            return
        groups[next_gid] = {
            "members": [idx],
            "anchor": idx if anchored else None,
            "sig": sig,
        }
        group_of[idx] = next_gid
        next_gid += 1

    for idx in order:
        node = g.nodes[idx]
        op = node.op_kind
        if op in ops.FUSION_ANCHORS:
            start_group(idx, anchored=True)
            continue
        if op not in ops.ELEMENTWISE_EPILOGUE:
            continue
        sig = out_shape(idx)
        if not _fusable_signature(sig):
            continue
        joined = False
        for tid in node.inputs:
            p = prod.get(tid)
            if p is None or p not in group_of:
                continue
            gid = group_of[p]
            grp = groups[gid]
            if grp["sig"] != sig:
                continue
            # The producer's output must flow only into this node and stay
            # internal to the group.
            if tid in out_set or len(consumers.get(tid, [])) != 1:
                continue
            ok = True
            for other in node.inputs:
                if other == tid:
                    continue
                other_info = result.shape_of.get(other)
                other_prod = prod.get(other)
                if other_prod is not None and other_prod in grp["members"]:
                    ok = False  # would need a second consumer inside
                    break
                if other_info == sig:
                    continue
                if not _broadcast_operand_ok(g, other, other_info, sig):
                    ok = False
                    break
            if not ok:
                continue
            grp["members"].append(idx)
            group_of[idx] = gid
            joined = True
            break
        if not joined:
            start_group(idx, anchored=False)

    out = []
    for gid in sorted(groups):
        grp = groups[gid]
        if len(grp["members"]) < 2:
            continue
        members = tuple(sorted(grp["members"], key=lambda i: pos[i]))
        out.append(FusionGroup(
            members=members,
            kind="AnchorPlusEpilogue" if grp["anchor"] is not None else "ElementwiseChain",
            anchor=grp["anchor"],
            signature=grp["sig"],
        ))
    return out


def apply_fusion(g: ir.Graph, groups: list[FusionGroup]) -> ir.Graph:
    """Rewrite each group into one FusedRegion node carrying its members.

    External tensor ids are preserved; the region's outward-facing output
    keeps the original id while the body-internal copy gets a ':r' suffix
    so ids stay globally unique.
    """
    member_to_group: dict[int, FusionGroup] = {}
    for grp in groups:
        for idx in grp.members:
            member_to_group[idx] = grp
    emitted_groups: set[int] = set()
    new_nodes: list[ir.Node] = []

    for idx in ir.toposort_dfs(g):
        node = g.nodes[idx]
        grp = member_to_group.get(idx)
        if grp is None:
            new_nodes.append(ir.Node(
                op_kind=node.op_kind, inputs=tuple(node.inputs),
                outputs=tuple(node.outputs), attrs=dict(node.attrs),
                subgraphs=dict(node.subgraphs)))
            continue
        gid = id(grp)
        if gid in emitted_groups:
            continue
        emitted_groups.add(gid)
        new_nodes.append(_region_node(g, grp))

    fused = ir.build_graph(
        g.name,
        [ir.TensorDef(td.id, td.dtype, td.shape, td.role, td.data) for td in g.inputs],
        [ir.TensorDef(td.id, td.dtype, td.shape, td.role, td.data)
         for td in g.initializers],
        new_nodes,
        list(g.outputs),
    )
    return fused


def _region_node(g: ir.Graph, grp: FusionGroup) -> ir.Node:
    members = [g.nodes[i] for i in grp.members]
    internal = {t for m in members for t in m.outputs}
    exit_tid = members[-1].outputs[0]
    inner_exit = exit_tid + ":r"

    externals: list[str] = []
    body_nodes: list[ir.Node] = []
    for m in members:
        ins = []
        for tid in m.inputs:
            if tid not in internal and tid not in externals:
                externals.append(tid)
            ins.append(inner_exit if tid == exit_tid else tid)
        outs = tuple(inner_exit if t == exit_tid else t for t in m.outputs)
        body_nodes.append(ir.Node(
            op_kind=m.op_kind, inputs=tuple(ins), outputs=outs,
            attrs=dict(m.attrs), subgraphs=dict(m.subgraphs)))
    body = ir.build_graph(f"{g.name}.fused.{exit_tid}", [], [], body_nodes,
                          [inner_exit])
    return ir.Node(
        op_kind="FusedRegion",
        inputs=tuple(externals),
        outputs=(exit_tid,),
        attrs={},
        subgraphs={"body": body},
    )
