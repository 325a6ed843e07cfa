"""Canonical integer expressions over named symbols.

Dimension arithmetic needs a small term language rather than a general
computer-algebra system: expressions are built from integer literals and
symbols with +, -, *, floor/ceil division, max and min, and every
constructor rewrites to a canonical form (sums and products flattened and
sorted, constants folded, trivial identities removed).  Equality and
hashing are structural on that form, which is what the shape lattice uses
to decide whether two dimensions provably agree.
"""

from __future__ import annotations

from typing import Iterator, Optional

MAX_EXPR_DEPTH = 8

_RANK = {
    "const": 0,
    "sym": 1,
    "add": 2,
    "mul": 3,
    "floordiv": 4,
    "ceildiv": 5,
    "max": 6,
    "min": 7,
}


class SymExpr:
    """Immutable expression node in canonical form.

    Do not call the constructor directly; use the module-level builders
    (`const`, `sym`, `add`, ...) which canonicalize their arguments.
    """

    __slots__ = ("op", "args", "_key", "_depth")

    def __init__(self, op: str, args: tuple):
        self.op = op
        self.args = args
        self._key = None
        self._depth = None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SymExpr)
            and self.op == other.op
            and self.args == other.args
        )

    def __hash__(self) -> int:
        return hash((self.op, self.args))

    def __repr__(self) -> str:
        return f"SymExpr({format_expr(self)!r})"

    @property
    def key(self):
        """Deterministic total-order key used for canonical sorting."""
        if self._key is None:
            if self.op == "const":
                self._key = (0, self.args[0], ())
            elif self.op == "sym":
                self._key = (1, 0, (self.args[0],))
            else:
                self._key = (_RANK[self.op], 0, tuple(a.key for a in self.args))
        return self._key

    @property
    def depth(self) -> int:
        if self._depth is None:
            if self.op in ("const", "sym"):
                self._depth = 0
            else:
                self._depth = 1 + max(a.depth for a in self.args)
        return self._depth

    def is_const(self) -> bool:
        return self.op == "const"


def const(v: int) -> SymExpr:
    return SymExpr("const", (int(v),))


def sym(name: str) -> SymExpr:
    return SymExpr("sym", (str(name),))


ZERO = const(0)
ONE = const(1)


def _coeff_factors(e: SymExpr) -> tuple[int, tuple[SymExpr, ...]]:
    """Split a non-add expression into (integer coefficient, sorted factors)."""
    if e.op == "const":
        return e.args[0], ()
    if e.op == "mul":
        if e.args[0].op == "const":
            return e.args[0].args[0], e.args[1:]
        return 1, e.args
    return 1, (e,)


def _make_mul(coeff: int, factors: tuple[SymExpr, ...]) -> SymExpr:
    if coeff == 0:
        return ZERO
    factors = tuple(sorted(factors, key=lambda f: f.key))
    if not factors:
        return const(coeff)
    if coeff == 1:
        if len(factors) == 1:
            return factors[0]
        return SymExpr("mul", factors)
    return SymExpr("mul", (const(coeff),) + factors)


def add(*parts: SymExpr) -> SymExpr:
    """Sum with flattening, like-term collection, and constant folding."""
    total = 0
    coeffs: dict[tuple, int] = {}
    monos: dict[tuple, tuple[SymExpr, ...]] = {}

    def absorb(e: SymExpr, mult: int) -> None:
        nonlocal total
        if e.op == "const":
            total += mult * e.args[0]
        elif e.op == "add":
            for a in e.args:
                absorb(a, mult)
        else:
            c, factors = _coeff_factors(e)
            c *= mult
            k = tuple(f.key for f in factors)
            coeffs[k] = coeffs.get(k, 0) + c
            monos[k] = factors

    for p in parts:
        absorb(p, 1)

    terms = []
    for k in sorted(coeffs):
        c = coeffs[k]
        if c != 0:
            terms.append(_make_mul(c, monos[k]))
    if not terms:
        return const(total)
    if total == 0:
        if len(terms) == 1:
            return terms[0]
        return SymExpr("add", tuple(terms))
    return SymExpr("add", tuple(terms) + (const(total),))


def sub(a: SymExpr, b: SymExpr) -> SymExpr:
    return add(a, mul(const(-1), b))


def mul(*parts: SymExpr) -> SymExpr:
    """Product with flattening and constant folding (no distribution)."""
    coeff = 1
    factors: list[SymExpr] = []

    def absorb(e: SymExpr) -> None:
        nonlocal coeff
        if e.op == "const":
            coeff *= e.args[0]
        elif e.op == "mul":
            for a in e.args:
                absorb(a)
        else:
            factors.append(e)

    for p in parts:
        absorb(p)
    if coeff == 0:
        return ZERO
    return _make_mul(coeff, tuple(factors))


def floordiv(a: SymExpr, b: SymExpr) -> SymExpr:
    q = try_divide(a, b)
    if q is not None:
        return q
    if b.op == "const":
        d = b.args[0]
        if d == 0:
            raise ZeroDivisionError("floordiv by zero")
        if d == 1:
            return a
        if a.op == "const":
            return const(a.args[0] // d)
    if a.op == "const" and a.args[0] == 0:
        return ZERO
    return SymExpr("floordiv", (a, b))


def ceildiv(a: SymExpr, b: SymExpr) -> SymExpr:
    q = try_divide(a, b)
    if q is not None:
        return q
    if b.op == "const":
        d = b.args[0]
        if d == 0:
            raise ZeroDivisionError("ceildiv by zero")
        if d == 1:
            return a
        if a.op == "const":
            return const(-((-a.args[0]) // d))
    if a.op == "const" and a.args[0] == 0:
        return ZERO
    return SymExpr("ceildiv", (a, b))


def _fold_chain(op: str, pick, *parts: SymExpr) -> SymExpr:
    cval: Optional[int] = None
    args: list[SymExpr] = []

    def absorb(e: SymExpr) -> None:
        nonlocal cval
        if e.op == op:
            for a in e.args:
                absorb(a)
        elif e.op == "const":
            cval = e.args[0] if cval is None else pick(cval, e.args[0])
        elif e not in args:
            args.append(e)

    for p in parts:
        absorb(p)
    if cval is not None:
        args.append(const(cval))
    args.sort(key=lambda e: e.key)
    if len(args) == 1:
        return args[0]
    return SymExpr(op, tuple(args))


def emax(*parts: SymExpr) -> SymExpr:
    return _fold_chain("max", max, *parts)


def emin(*parts: SymExpr) -> SymExpr:
    return _fold_chain("min", min, *parts)


def try_divide(num: SymExpr, den: SymExpr) -> Optional[SymExpr]:
    """Exact division, or None when exactness cannot be shown syntactically."""
    if den.op == "const" and den.args[0] == 0:
        return None
    if num == den:
        return ONE
    if num.op == "add":
        parts = []
        for t in num.args:
            q = try_divide(t, den)
            if q is None:
                return None
            parts.append(q)
        return add(*parts)
    if den.op in ("add", "floordiv", "ceildiv", "max", "min"):
        # Treat composites as atomic factors: cancellation only.
        dc, dfs = 1, (den,)
    else:
        dc, dfs = _coeff_factors(den)
    nc, nfs = _coeff_factors(num)
    if dc == 0 or nc % dc != 0:
        return None
    remaining = list(nfs)
    for f in dfs:
        if f in remaining:
            remaining.remove(f)
        else:
            return None
    return _make_mul(nc // dc, tuple(remaining))


def eval_expr(e: SymExpr, bindings: dict[str, int]) -> Optional[int]:
    """Evaluate under a symbol binding; None when a symbol is unbound."""
    if e.op == "const":
        return e.args[0]
    if e.op == "sym":
        v = bindings.get(e.args[0])
        return None if v is None else int(v)
    vals = []
    for a in e.args:
        v = eval_expr(a, bindings)
        if v is None:
            return None
        vals.append(v)
    if e.op == "add":
        return sum(vals)
    if e.op == "mul":
        out = 1
        for v in vals:
            out *= v
        return out
    if e.op == "floordiv":
        return None if vals[1] == 0 else vals[0] // vals[1]
    if e.op == "ceildiv":
        return None if vals[1] == 0 else -((-vals[0]) // vals[1])
    if e.op == "max":
        return max(vals)
    if e.op == "min":
        return min(vals)
    raise ValueError(f"unknown expression op {e.op!r}")


def free_symbols(e: SymExpr) -> set[str]:
    if e.op == "sym":
        return {e.args[0]}
    if e.op == "const":
        return set()
    out: set[str] = set()
    for a in e.args:
        out |= free_symbols(a)
    return out


def format_expr(e: SymExpr) -> str:
    if e.op == "const":
        return str(e.args[0])
    if e.op == "sym":
        return e.args[0]
    if e.op == "add":
        s = format_expr(e.args[0])
        for a in e.args[1:]:
            t = format_expr(a)
            if t.startswith("-"):
                s += " - " + t[1:]
            else:
                s += " + " + t
        return f"({s})"
    if e.op == "mul":
        return "(" + " * ".join(format_expr(a) for a in e.args) + ")"
    if e.op == "floordiv":
        return f"({format_expr(e.args[0])} // {format_expr(e.args[1])})"
    return f"{e.op}({', '.join(format_expr(a) for a in e.args)})"


class ExprParseError(ValueError):
    pass


def _tokenize(s: str) -> Iterator[str]:
    i, n = 0, len(s)
    while i < n:
        ch = s[i]
        if ch.isspace():
            i += 1
        elif ch.isdigit():
            j = i
            while j < n and s[j].isdigit():
                j += 1
            yield s[i:j]
            i = j
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (s[j].isalnum() or s[j] == "_"):
                j += 1
            yield s[i:j]
            i = j
        elif s.startswith("//", i):
            yield "//"
            i += 2
        elif ch in "+-*(),":
            yield ch
            i += 1
        else:
            raise ExprParseError(f"bad character {ch!r} in expression {s!r}")


def parse_expr(s: str) -> SymExpr:
    """Parse the textual form produced by format_expr."""
    tokens = list(_tokenize(s))
    pos = 0

    def peek() -> Optional[str]:
        return tokens[pos] if pos < len(tokens) else None

    def take(expected: Optional[str] = None) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise ExprParseError(f"unexpected end of expression {s!r}")
        tok = tokens[pos]
        if expected is not None and tok != expected:
            raise ExprParseError(f"expected {expected!r}, got {tok!r} in {s!r}")
        pos += 1
        return tok

    def parse_sum() -> SymExpr:
        out = parse_term()
        while peek() in ("+", "-"):
            op = take()
            rhs = parse_term()
            out = add(out, rhs) if op == "+" else sub(out, rhs)
        return out

    def parse_term() -> SymExpr:
        out = parse_unary()
        while peek() in ("*", "//"):
            op = take()
            rhs = parse_unary()
            out = mul(out, rhs) if op == "*" else floordiv(out, rhs)
        return out

    def parse_unary() -> SymExpr:
        if peek() == "-":
            take()
            return mul(const(-1), parse_unary())
        return parse_primary()

    def parse_primary() -> SymExpr:
        tok = take()
        if tok == "(":
            e = parse_sum()
            take(")")
            return e
        if tok.isdigit():
            return const(int(tok))
        if tok in ("max", "min", "ceildiv") and peek() == "(":
            take("(")
            args = [parse_sum()]
            while peek() == ",":
                take(",")
                args.append(parse_sum())
            take(")")
            if tok == "max":
                return emax(*args)
            if tok == "min":
                return emin(*args)
            if len(args) != 2:
                raise ExprParseError(f"ceildiv takes 2 arguments in {s!r}")
            return ceildiv(args[0], args[1])
        return sym(tok)

    out = parse_sum()
    if pos != len(tokens):
        raise ExprParseError(f"trailing tokens in expression {s!r}")
    return out
