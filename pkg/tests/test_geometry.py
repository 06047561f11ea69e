from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedom.geometry import (
    Cube,
    LinearMap,
    ReferenceLattice,
    check_hypothesis_H,
    containing_triple,
    cube_image_intersection_volume,
    triple_lattice_check,
    make_shifted_lattices,
    triple_lattice_index,
)

BOX1 = Cube((-1,), 2)
BOX2 = Cube((-1, -1), 2)


def _clip(poly, lo, hi):
    """Sutherland-Hodgman clipping of a convex polygon to an axis box."""

    def cut(pts, axis, bound, keep_low):
        out = []
        inside = (lambda p: p[axis] <= bound) if keep_low else (lambda p: p[axis] >= bound)
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(_cross(prev, cur, axis, bound))
                out.append(cur)
            elif inside(prev):
                out.append(_cross(prev, cur, axis, bound))
        return out

    for axis in (0, 1):
        poly = cut(poly, axis, lo[axis], False)
        poly = cut(poly, axis, hi[axis], True)
        if not poly:
            return []
    return poly


def _cross(p, q, axis, bound):
    t = (bound - p[axis]) / (q[axis] - p[axis])
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _area(poly):
    if len(poly) < 3:
        return 0.0
    return abs(sum(p[0] * q[1] - q[0] * p[1] for p, q in zip(poly, poly[1:] + poly[:1]))) / 2


def _ref_cube(draw, n, depth):
    k = draw(st.integers(0, depth))
    side = Fraction(2, 2 ** k)
    idx = [draw(st.integers(0, 2 ** k - 1)) for _ in range(n)]
    return Cube(tuple(-1 + i * side for i in idx), side)


@st.composite
def ref_cubes(draw, n=1, depth=5):
    return _ref_cube(draw, n, depth)


# ------------------------------------------------------------ cubes and maps


def test_cube_basics():
    q = Cube((0, 0), Fraction(1, 2))
    assert q.volume == Fraction(1, 4)
    assert q.triple() == Cube((Fraction(-1, 2), Fraction(-1, 2)), Fraction(3, 2))
    assert len(q.children()) == 4
    assert sum(c.volume for c in q.children()) == q.volume
    assert q.contains_point((0, 0)) and not q.contains_point((Fraction(1, 2), 0))


def test_cube_rejects_bad_input():
    with pytest.raises(ValueError):
        Cube((0,), 0)
    with pytest.raises(ValueError):
        Cube((0, 0, 0), 1)


def test_linear_map_parse_and_inverse():
    a = LinearMap.parse("0,-1;2,0")
    assert a.det == 2
    assert a @ a.inverse == LinearMap.identity(2)
    assert a.is_grid_compatible()
    assert not LinearMap.parse("1,1;0,1").is_grid_compatible()
    assert LinearMap.diag(-1).is_involution()
    with pytest.raises(ValueError):
        LinearMap.parse("1,2;2,4")


@given(
    st.sampled_from([-1, 1]),
    st.sampled_from([-1, 1]),
    st.integers(-3, 3),
    st.integers(-3, 3),
    st.booleans(),
)
def test_grid_compatible_maps_invert_exactly(s0, s1, k0, k1, swap):
    d0, d1 = s0 * Fraction(2) ** k0, s1 * Fraction(2) ** k1
    a = LinearMap([[0, d0], [d1, 0]]) if swap else LinearMap.diag(d0, d1)
    assert a.is_grid_compatible()
    assert a.inverse @ a == LinearMap.identity(2)
    assert a.inverse.is_grid_compatible()


def test_hypothesis_H_witnesses():
    assert check_hypothesis_H([LinearMap.diag(-1), LinearMap.diag(1)]) == (True, None)
    assert check_hypothesis_H([LinearMap.diag(2), LinearMap.diag(2)]) == (False, (1, 2))
    ok, w = check_hypothesis_H([LinearMap.diag(1, 1), LinearMap.diag(1, 2)])
    assert not ok and w == (1, 2)
    with pytest.raises(ValueError):
        check_hypothesis_H([])


def test_intersection_volume_1d():
    q = Cube((0,), 1)
    assert cube_image_intersection_volume(LinearMap.diag(2), q) == 1.0
    assert cube_image_intersection_volume(LinearMap.diag(-1), q) == 0.0
    assert cube_image_intersection_volume(LinearMap.diag(Fraction(1, 2)), q) == 0.5


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(-4, 4), min_size=4, max_size=4),
    st.integers(-3, 3),
    st.integers(-3, 3),
)
def test_intersection_volume_matches_polygon_clipping(m, cx, cy):
    try:
        a = LinearMap([[m[0], m[1]], [m[2], m[3]]])
    except ValueError:
        return
    q = Cube((Fraction(cx, 2), Fraction(cy, 2)), 1)
    x0, y0 = float(q.corner[0]), float(q.corner[1])
    square = [(x0, y0), (x0 + 1, y0), (x0 + 1, y0 + 1), (x0, y0 + 1)]
    image = [tuple(float(v) for v in a.apply(c)) for c in square]
    if a.det < 0:
        image = image[::-1]
    expect = _area(_clip(image, (x0, y0), (x0 + 1, y0 + 1)))
    assert cube_image_intersection_volume(a, q) == pytest.approx(expect, abs=1e-9)


# ------------------------------------------------------------ lattices


def test_lattice_counts_and_tags():
    lats = make_shifted_lattices(2, 3, BOX2)
    assert len(lats) == 9
    assert len({lat.tag for lat in lats}) == 9
    with pytest.raises(ValueError):
        make_shifted_lattices(3, 3, BOX2)


@pytest.mark.parametrize("n,depth,expected", [(1, 6, 2 ** 7 - 1), (2, 4, sum(4 ** k for k in range(5)))])
def test_triple_lattice_property_exhaustive(n, depth, expected):
    rep = triple_lattice_check(n, depth)
    assert rep.checked == expected
    assert rep.failures == 0


@pytest.mark.parametrize("n", [1, 2])
def test_shifted_lattices_are_nested(n):
    # every member at scale k+1 lies inside a member at scale k
    box = BOX1 if n == 1 else BOX2
    window = box.dilate(3)
    for lat in make_shifted_lattices(n, 3, box):
        for k in range(3):
            parents = list(lat.cubes_meeting(k, window))
            for child in lat.cubes_meeting(k + 1, box):
                assert sum(p.contains(child) for p in parents) == 1


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_triple_lives_in_exactly_one_lattice(data):
    n = data.draw(st.sampled_from([1, 2]))
    box = BOX1 if n == 1 else BOX2
    q = _ref_cube(data.draw, n, 4)
    lats = make_shifted_lattices(n, 4, box)
    # brute force: scan every lattice's members at the triple scale
    k = ReferenceLattice(box, 4).level_of(q)
    hits = [i for i, lat in enumerate(lats) if q.triple() in set(lat.cubes_meeting(k, q.triple()))]
    assert hits == [triple_lattice_index(q, lats)]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_containing_triple_in_every_lattice(data):
    n = data.draw(st.sampled_from([1, 2]))
    box = BOX1 if n == 1 else BOX2
    q = _ref_cube(data.draw, n, 4)
    for lat in make_shifted_lattices(n, 4, box):
        r = containing_triple(q, lat)
        assert r.side == 3 * q.side and r.contains(q) and lat.contains_cube(r)
