"""Lattice domain for per-dimension shape facts and per-element value facts.

Each dimension (or tracked element of a small integer tensor) is one of:

* undef  -- not yet computed (top)
* known  -- a concrete non-negative integer
* sym    -- a named symbolic constant, fixed but unknown before runtime
* expr   -- an arithmetic expression over symbolic constants
* nac    -- not a constant; undeterminable before runtime (bottom)

known/sym/expr sit between undef and nac as mutually incomparable points;
the join of two distinct middle points is nac.  Equality is structural on
canonical forms, so `expr` folding to a literal or a bare symbol is
normalized to `known`/`sym` at construction.
"""

from __future__ import annotations

from typing import Iterable, Optional

from . import symexpr
from .symexpr import SymExpr

MAX_TRACKED_ELEMS = 8


class Dim:
    """A single lattice point."""

    __slots__ = ("kind", "value")

    def __init__(self, kind: str, value=None):
        self.kind = kind
        self.value = value

    def __eq__(self, other) -> bool:
        return isinstance(other, Dim) and self.kind == other.kind and self.value == other.value

    def __hash__(self) -> int:
        return hash((self.kind, self.value))

    def __repr__(self) -> str:
        return f"Dim<{format_dim(self)}>"

    def is_known(self) -> bool:
        return self.kind == "known"


UNDEF = Dim("undef")
NAC = Dim("nac")


def known(n: int) -> Dim:
    # Negative values never appear as dimension extents (from_expr widens
    # them to nac), but tracked value elements may be negative (e.g. the
    # -1 placeholder in reshape targets).
    return Dim("known", int(n))


def symdim(name: str) -> Dim:
    return Dim("sym", name)


def from_expr(e: SymExpr) -> Dim:
    """Wrap a canonical expression, normalizing literals and bare symbols.

    Expressions deeper than MAX_EXPR_DEPTH widen to nac so the lattice
    stays finite; a negative literal (invalid dimension arithmetic) also
    widens to nac.
    """
    if e.op == "const":
        return NAC if e.args[0] < 0 else known(e.args[0])
    if e.op == "sym":
        return symdim(e.args[0])
    if e.depth > symexpr.MAX_EXPR_DEPTH:
        return NAC
    return Dim("expr", e)


def to_expr(d: Dim) -> Optional[SymExpr]:
    if d.kind == "known":
        return symexpr.const(d.value)
    if d.kind == "sym":
        return symexpr.sym(d.value)
    if d.kind == "expr":
        return d.value
    return None


def join_dim(a: Dim, b: Dim) -> Dim:
    """Lattice join: undef is identity, equal points are idempotent,
    anything else (including nac) falls to nac."""
    if a == UNDEF:
        return b
    if b == UNDEF:
        return a
    if a == b:
        return a
    return NAC


def eval_dim(d: Dim, bindings: dict[str, int]) -> Optional[int]:
    if d.kind == "known":
        return d.value
    if d.kind == "sym":
        v = bindings.get(d.value)
        return None if v is None else int(v)
    if d.kind == "expr":
        return symexpr.eval_expr(d.value, bindings)
    return None


def _lift(fn, *dims: Dim) -> Dim:
    for d in dims:
        if d.kind == "undef":
            return UNDEF
    exprs = []
    for d in dims:
        e = to_expr(d)
        if e is None:
            return NAC
        exprs.append(e)
    try:
        return from_expr(fn(*exprs))
    except ZeroDivisionError:
        return NAC


def dim_add(*dims: Dim) -> Dim:
    return _lift(symexpr.add, *dims)


def dim_sub(a: Dim, b: Dim) -> Dim:
    return _lift(symexpr.sub, a, b)


def dim_mul(*dims: Dim) -> Dim:
    return _lift(symexpr.mul, *dims)


def dim_floordiv(a: Dim, b: Dim) -> Dim:
    return _lift(symexpr.floordiv, a, b)


def dim_ceildiv(a: Dim, b: Dim) -> Dim:
    return _lift(symexpr.ceildiv, a, b)


def dim_max(*dims: Dim) -> Dim:
    return _lift(symexpr.emax, *dims)


def dim_min(*dims: Dim) -> Dim:
    return _lift(symexpr.emin, *dims)


def format_dim(d: Dim) -> str:
    if d.kind == "undef":
        return "?"
    if d.kind == "nac":
        return "nac"
    if d.kind == "known":
        return str(d.value)
    if d.kind == "sym":
        return d.value
    return symexpr.format_expr(d.value)


def parse_dim(s: str) -> Dim:
    if s == "?":
        return UNDEF
    if s == "nac":
        return NAC
    try:
        return known(int(s))
    except ValueError:
        pass
    return from_expr(symexpr.parse_expr(s))


class ShapeInfo:
    """Shape fact for one tensor: undef, ranked (list of Dim), or nac."""

    __slots__ = ("kind", "dims")

    def __init__(self, kind: str, dims: Optional[tuple[Dim, ...]] = None):
        self.kind = kind
        self.dims = dims

    def __eq__(self, other) -> bool:
        return isinstance(other, ShapeInfo) and self.kind == other.kind and self.dims == other.dims

    def __hash__(self) -> int:
        return hash((self.kind, self.dims))

    def __repr__(self) -> str:
        return f"ShapeInfo<{format_shape(self)}>"

    @property
    def rank(self) -> Optional[int]:
        return len(self.dims) if self.kind == "ranked" else None

    def is_ranked(self) -> bool:
        return self.kind == "ranked"

    def all_known(self) -> bool:
        return self.kind == "ranked" and all(d.is_known() for d in self.dims)


SHAPE_UNDEF = ShapeInfo("undef")
SHAPE_NAC = ShapeInfo("nac")


def ranked(dims: Iterable[Dim]) -> ShapeInfo:
    return ShapeInfo("ranked", tuple(dims))


def ranked_known(extents: Iterable[int]) -> ShapeInfo:
    return ranked(known(e) for e in extents)


def join_shape(a: ShapeInfo, b: ShapeInfo) -> ShapeInfo:
    if a.kind == "undef":
        return b
    if b.kind == "undef":
        return a
    if a.kind == "nac" or b.kind == "nac":
        return SHAPE_NAC
    if len(a.dims) != len(b.dims):
        return SHAPE_NAC
    return ranked(join_dim(x, y) for x, y in zip(a.dims, b.dims))


def eval_shape(s: ShapeInfo, bindings: dict[str, int]) -> Optional[tuple[int, ...]]:
    if s.kind != "ranked":
        return None
    out = []
    for d in s.dims:
        v = eval_dim(d, bindings)
        if v is None:
            return None
        out.append(v)
    return tuple(out)


class ValueInfo:
    """Element-wise fact for small integer tensors: undef, elems, or nac."""

    __slots__ = ("kind", "elems")

    def __init__(self, kind: str, elems: Optional[tuple[Dim, ...]] = None):
        self.kind = kind
        self.elems = elems

    def __eq__(self, other) -> bool:
        return isinstance(other, ValueInfo) and self.kind == other.kind and self.elems == other.elems

    def __hash__(self) -> int:
        return hash((self.kind, self.elems))

    def __repr__(self) -> str:
        return f"ValueInfo<{format_value(self)}>"

    def is_elems(self) -> bool:
        return self.kind == "elems"


VALUE_UNDEF = ValueInfo("undef")
VALUE_NAC = ValueInfo("nac")


def elems(items: Iterable[Dim]) -> ValueInfo:
    items = tuple(items)
    if len(items) > MAX_TRACKED_ELEMS:
        return VALUE_NAC
    return ValueInfo("elems", items)


def join_value(a: ValueInfo, b: ValueInfo) -> ValueInfo:
    if a.kind == "undef":
        return b
    if b.kind == "undef":
        return a
    if a.kind == "nac" or b.kind == "nac":
        return VALUE_NAC
    if len(a.elems) != len(b.elems):
        return VALUE_NAC
    return elems(join_dim(x, y) for x, y in zip(a.elems, b.elems))


def format_shape(s: ShapeInfo):
    if s.kind == "undef":
        return "?"
    if s.kind == "nac":
        return "nac"
    return [format_dim(d) for d in s.dims]


def parse_shape(obj) -> ShapeInfo:
    if obj == "?":
        return SHAPE_UNDEF
    if obj == "nac":
        return SHAPE_NAC
    return ranked(parse_dim(d) for d in obj)


def format_value(v: ValueInfo):
    if v.kind == "undef":
        return "?"
    if v.kind == "nac":
        return "nac"
    return [format_dim(d) for d in v.elems]


def parse_value(obj) -> ValueInfo:
    if obj == "?":
        return VALUE_UNDEF
    if obj == "nac":
        return VALUE_NAC
    return elems(parse_dim(d) for d in obj)
