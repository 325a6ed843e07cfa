import numpy as np

from dyshape import lattice as lat
from dyshape import symexpr as se


def _random_dim(rng):
    k = rng.integers(0, 5)
    if k == 0:
        return lat.UNDEF
    if k == 1:
        return lat.NAC
    if k == 2:
        return lat.known(int(rng.integers(0, 5)))
    if k == 3:
        return lat.symdim(["H", "W", "N"][rng.integers(0, 3)])
    return lat.from_expr(se.add(se.sym(["H", "W"][rng.integers(0, 2)]),
                                se.const(int(rng.integers(1, 4)))))


def test_join_examples():
    assert lat.join_dim(lat.known(64), lat.known(64)) == lat.known(64)
    assert lat.join_dim(lat.known(64), lat.known(32)) == lat.NAC
    assert lat.join_dim(lat.UNDEF, lat.symdim("H")) == lat.symdim("H")
    assert lat.join_dim(lat.NAC, lat.known(3)) == lat.NAC


def test_join_laws_randomized():
    rng = np.random.default_rng(0)
    for _ in range(3000):
        a, b, c = (_random_dim(rng) for _ in range(3))
        assert lat.join_dim(a, a) == a
        assert lat.join_dim(a, b) == lat.join_dim(b, a)
        assert lat.join_dim(lat.join_dim(a, b), c) == lat.join_dim(a, lat.join_dim(b, c))


def test_from_expr_normalizes():
    assert lat.from_expr(se.const(4)) == lat.known(4)
    assert lat.from_expr(se.sym("H")) == lat.symdim("H")
    assert lat.from_expr(se.const(-2)) == lat.NAC
    deep = se.sym("H")
    for i in range(5):
        deep = se.floordiv(se.add(deep, se.sym(f"q{i}")), se.const(3))
    assert deep.depth > 8
    assert lat.from_expr(deep) == lat.NAC


def test_dim_arithmetic():
    h = lat.symdim("H")
    assert lat.dim_add(h, lat.known(0)) == h
    assert lat.dim_mul(h, lat.known(1)) == h
    assert lat.dim_mul(lat.known(3), lat.known(4)) == lat.known(12)
    assert lat.dim_add(lat.NAC, h) == lat.NAC
    assert lat.dim_add(lat.UNDEF, h) == lat.UNDEF
    assert lat.dim_floordiv(lat.known(7), lat.known(0)) == lat.NAC


def test_shape_join():
    a = lat.ranked_known([1, 3, 64, 64])
    b = lat.ranked_known([1, 3, 32, 32])
    j = lat.join_shape(a, b)
    assert lat.format_shape(j) == ["1", "3", "nac", "nac"]
    assert lat.join_shape(a, a) == a
    r2 = lat.ranked_known([4, 4])
    assert lat.join_shape(a, r2) == lat.SHAPE_NAC
    assert lat.join_shape(lat.SHAPE_UNDEF, a) == a


def test_value_join_and_cap():
    v1 = lat.elems([lat.known(1), lat.known(2)])
    v2 = lat.elems([lat.known(1), lat.known(3)])
    assert lat.format_value(lat.join_value(v1, v2)) == ["1", "nac"]
    big = lat.elems([lat.known(i) for i in range(20)])
    assert big == lat.VALUE_NAC


def test_format_parse_dims():
    for d in [lat.UNDEF, lat.NAC, lat.known(7), lat.known(-1), lat.symdim("H"),
              lat.from_expr(se.add(se.sym("H"), se.const(2)))]:
        assert lat.parse_dim(lat.format_dim(d)) == d


def test_eval_shape():
    s = lat.ranked([lat.known(1), lat.symdim("H"),
                    lat.from_expr(se.mul(se.const(2), se.sym("W")))])
    assert lat.eval_shape(s, {"H": 5, "W": 3}) == (1, 5, 6)
    assert lat.eval_shape(s, {"H": 5}) is None
    assert lat.eval_shape(lat.SHAPE_NAC, {}) is None
