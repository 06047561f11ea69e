"""Exact cube geometry, dyadic lattices and the 3^n shifted-lattice system.

Coordinates are :class:`fractions.Fraction` values, so containment and the
side relation ``l(R) = 3 l(Q)`` are decided without tolerance.

A reference lattice is the dyadic family generated by a base box.  For a
base box of side ``b`` the shifted lattice with per-axis tag ``t`` has, at
scale ``k``, cubes of side ``3 b 2^-k`` whose corners sit at
``b 2^-k (3 m + c_k)`` with ``c_0 = t`` and ``c_{k+1} = 2 c_k mod 3``.  The
offsets ``c_k`` alternate between ``+1`` and ``-1`` (mod 3) in units of a
third of the cube side, which keeps every family nested.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

MAX_DEPTH = 64


class OutOfRangeError(ValueError):
    """A cube lies outside the truncated scale or spatial range."""


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(v).limit_denominator(1 << 62) if not v.is_integer() else Fraction(int(v))
    return Fraction(v)


def _log2_exact(x: Fraction) -> int | None:
    """Return k with x == 2**k, or None."""
    if x <= 0:
        return None
    num, den = x.numerator, x.denominator
    if num & (num - 1) or den & (den - 1):
        return None
    return num.bit_length() - den.bit_length()


@dataclass(frozen=True)
class Cube:
    """Half-open axis-aligned cube ``[corner, corner + side)^n``."""

    corner: tuple
    side: Fraction

    def __post_init__(self):
        corner = tuple(_frac(c) for c in self.corner)
        side = _frac(self.side)
        if len(corner) not in (1, 2):
            raise ValueError("only n in {1, 2} is supported")
        if side <= 0:
            raise ValueError("cube side must be positive")
        object.__setattr__(self, "corner", corner)
        object.__setattr__(self, "side", side)

    @property
    def n(self) -> int:
        return len(self.corner)

    @property
    def volume(self) -> Fraction:
        return self.side ** self.n

    @property
    def upper(self) -> tuple:
        return tuple(c + self.side for c in self.corner)

    @property
    def center(self) -> tuple:
        return tuple(c + self.side / 2 for c in self.corner)

    def contains(self, other: "Cube") -> bool:
        return all(
            a <= b and b + other.side <= a + self.side
            for a, b in zip(self.corner, other.corner)
        )

    def contains_point(self, point) -> bool:
        return all(a <= _frac(p) < a + self.side for a, p in zip(self.corner, point))

    def intersects(self, other: "Cube") -> bool:
        return all(
            a < b + other.side and b < a + self.side
            for a, b in zip(self.corner, other.corner)
        )

    def dilate(self, lam) -> "Cube":
        """Concentric dilate ``lam Q``."""
        lam = _frac(lam)
        shift = (lam - 1) * self.side / 2
        return Cube(tuple(c - shift for c in self.corner), lam * self.side)

    def triple(self) -> "Cube":
        return self.dilate(3)

    def children(self) -> list["Cube"]:
        half = self.side / 2
        out = []
        for offs in itertools.product((0, 1), repeat=self.n):
            out.append(Cube(tuple(c + o * half for c, o in zip(self.corner, offs)), half))
        return out

    def __repr__(self) -> str:
        lo = ",".join(str(c) for c in self.corner)
        return f"Cube([{lo}] + {self.side})"


@dataclass(frozen=True)
class ReferenceLattice:
    """Dyadic cubes obtained by repeatedly bisecting ``base`` (scales 0..depth)."""

    base: Cube
    depth: int

    @property
    def n(self) -> int:
        return self.base.n

    def side_at(self, k: int) -> Fraction:
        return self.base.side / (1 << k)

    def level_of(self, q: Cube) -> int:
        """Scale index of ``q``; raises :class:`OutOfRangeError` if ``q`` is not a member."""
        if q.n != self.n:
            raise ValueError("dimension mismatch")
        k = _log2_exact(self.base.side / q.side)
        if k is None or not 0 <= k <= self.depth:
            raise OutOfRangeError(f"{q!r} is out of truncation range")
        if not self.base.contains(q):
            raise OutOfRangeError(f"{q!r} is out of truncation range")
        s = q.side
        for c, o in zip(q.corner, self.base.corner):
            if ((c - o) / s).denominator != 1:
                raise OutOfRangeError(f"{q!r} is not a reference lattice cube")
        return k

    def cubes(self, k: int) -> Iterator[Cube]:
        s = self.side_at(k)
        for m in itertools.product(range(1 << k), repeat=self.n):
            yield Cube(tuple(o + s * mi for o, mi in zip(self.base.corner, m)), s)

    def all_cubes(self) -> Iterator[Cube]:
        for k in range(self.depth + 1):
            yield from self.cubes(k)


def _residues(tag: int, depth: int) -> tuple[int, ...]:
    out = [tag % 3]
    for _ in range(depth):
        out.append((2 * out[-1]) % 3)
    return tuple(out)


@dataclass(frozen=True)
class DyadicLattice:
    """One of the ``3^n`` shifted families built over a reference lattice.

    ``tag`` is an integer in ``[0, 3^n)``; its base-3 digits are the
    per-axis shift tags.
    """

    base: Cube
    depth: int
    tag: int
    residues: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.base.n
        if not 0 <= self.tag < 3 ** n:
            raise ValueError("lattice tag out of range")
        digits = [(self.tag // 3 ** a) % 3 for a in range(n)]
        object.__setattr__(self, "residues", tuple(_residues(d, self.depth) for d in digits))

    @property
    def n(self) -> int:
        return self.base.n

    def unit(self, k: int) -> Fraction:
        return self.base.side / (1 << k)

    def side_at(self, k: int) -> Fraction:
        return 3 * self.unit(k)

    def offset(self, k: int, axis: int) -> int:
        """Corner residue ``c_k`` (in units of ``b 2^-k``) along ``axis``."""
        return self.residues[axis][k]

    def level_of(self, q: Cube) -> int | None:
        k = _log2_exact(3 * self.base.side / q.side)
        if k is None or not 0 <= k <= self.depth:
            return None
        return k

    def contains_cube(self, q: Cube) -> bool:
        """Whether ``q`` is a member of this family (within the scale range)."""
        k = self.level_of(q)
        if k is None:
            return False
        u = self.unit(k)
        for a, (c, o) in enumerate(zip(q.corner, self.base.corner)):
            t = (c - o) / u
            if t.denominator != 1 or t.numerator % 3 != self.offset(k, a):
                return False
        return True

    def cube_containing(self, point, k: int) -> Cube:
        if not 0 <= k <= self.depth:
            raise OutOfRangeError(f"scale {k} is out of truncation range")
        u = self.unit(k)
        corner = []
        for a, (p, o) in enumerate(zip(point, self.base.corner)):
            c = self.offset(k, a)
            t = (_frac(p) - o) / u - c
            m = t.numerator // (3 * t.denominator)
            corner.append(o + u * (3 * m + c))
        return Cube(tuple(corner), self.side_at(k))

    def cubes_meeting(self, k: int, window: Cube) -> Iterator[Cube]:
        """Members at scale ``k`` that intersect ``window``."""
        u = self.unit(k)
        ranges = []
        for a, (lo, o) in enumerate(zip(window.corner, self.base.corner)):
            c = self.offset(k, a)
            first = ((lo - o) / u - c - 3)
            m0 = first.numerator // (3 * first.denominator)
            last = ((lo + window.side - o) / u - c)
            m1 = -((-last.numerator) // (3 * last.denominator))
            ranges.append(range(m0, m1 + 1))
        for ms in itertools.product(*ranges):
            corner = tuple(
                o + u * (3 * m + self.offset(k, a))
                for a, (o, m) in enumerate(zip(self.base.corner, ms))
            )
            q = Cube(corner, self.side_at(k))
            if q.intersects(window):
                yield q


def make_shifted_lattices(n: int, depth: int, base_box: Cube) -> list[DyadicLattice]:
    """Return the ``3^n`` shifted families over the reference lattice of ``base_box``."""
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    if base_box.n != n:
        raise ValueError("base box dimension does not match n")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if depth > MAX_DEPTH:
        raise OverflowError(f"depth {depth} exceeds the supported range ({MAX_DEPTH})")
    if _log2_exact(base_box.side) is None:
        raise ValueError("base box side must be a power of two")
    return [DyadicLattice(base_box, depth, j) for j in range(3 ** n)]


def containing_triple(q: Cube, lattice: DyadicLattice) -> Cube:
    """The member ``R`` of ``lattice`` with ``q ⊂ R`` and ``l(R) = 3 l(q)``."""
    ref = ReferenceLattice(lattice.base, lattice.depth)
    k = ref.level_of(q)
    r = lattice.cube_containing(q.corner, k)
    if not (r.contains(q) and r.side == 3 * q.side):
        raise LookupError(f"no containing triple for {q!r} in lattice {lattice.tag}")
    return r


def triple_lattice_index(q: Cube, lattices: Sequence[DyadicLattice]) -> int:
    """Index of the (unique) family holding ``3q``."""
    t = q.triple()
    hits = [i for i, lat in enumerate(lattices) if lat.contains_cube(t)]
    if len(hits) != 1:
        raise LookupError(f"3Q of {q!r} found in {len(hits)} families")
    return hits[0]


class LinearMap:
    """Invertible ``n x n`` matrix with exact rational entries."""

    def __init__(self, entries):
        rows = entries
        if isinstance(entries, (int, float, Fraction)):
            rows = [[entries]]
        rows = [[_frac(v) for v in row] for row in rows]
        n = len(rows)
        if n not in (1, 2) or any(len(r) != n for r in rows):
            raise ValueError("matrix must be 1x1 or 2x2")
        self.entries = tuple(tuple(r) for r in rows)
        self.n = n
        self.det = self._det()
        if self.det == 0:
            raise ValueError("matrix is singular")

    @classmethod
    def identity(cls, n: int) -> "LinearMap":
        return cls([[1 if i == j else 0 for j in range(n)] for i in range(n)])

    @classmethod
    def diag(cls, *d) -> "LinearMap":
        n = len(d)
        return cls([[d[i] if i == j else 0 for j in range(n)] for i in range(n)])

    @classmethod
    def parse(cls, text: str) -> "LinearMap":
        """Parse ``"a"`` (1x1) or ``"a,b;c,d"`` (2x2)."""
        rows = [[Fraction(v.strip()) for v in r.split(",")] for r in text.strip().split(";")]
        return cls(rows)

    def _det(self) -> Fraction:
        e = self.entries
        if self.n == 1:
            return e[0][0]
        return e[0][0] * e[1][1] - e[0][1] * e[1][0]

    @property
    def inverse(self) -> "LinearMap":
        e = self.entries
        if self.n == 1:
            return LinearMap([[1 / e[0][0]]])
        d = self.det
        return LinearMap([[e[1][1] / d, -e[0][1] / d], [-e[1][0] / d, e[0][0] / d]])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array(), 2))

    def as_array(self) -> np.ndarray:
        return np.array([[float(v) for v in r] for r in self.entries])

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        a, b = self.entries, other.entries
        n = self.n
        return LinearMap([[sum(a[i][k] * b[k][j] for k in range(n)) for j in range(n)] for i in range(n)])

    def __sub__(self, other: "LinearMap") -> "LinearMap | None":
        rows = [[x - y for x, y in zip(r, s)] for r, s in zip(self.entries, other.entries)]
        try:
            return LinearMap(rows)
        except ValueError:
            return None

    def __eq__(self, other) -> bool:
        return isinstance(other, LinearMap) and self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __repr__(self) -> str:
        body = ";".join(",".join(str(v) for v in r) for r in self.entries)
        return f"LinearMap({body})"

    def apply(self, point) -> tuple:
        return tuple(sum(a * _frac(p) for a, p in zip(row, point)) for row in self.entries)

    def monomial(self) -> tuple[tuple[int, ...], tuple[Fraction, ...]] | None:
        """``(perm, scale)`` with ``(Ax)_i = scale_i * x_perm[i]``, or None."""
        perm, scale = [], []
        for row in self.entries:
            nz = [j for j, v in enumerate(row) if v != 0]
            if len(nz) != 1:
                return None
            perm.append(nz[0])
            scale.append(row[nz[0]])
        if sorted(perm) != list(range(self.n)):
            return None
        return tuple(perm), tuple(scale)

    def is_grid_compatible(self) -> bool:
        """Signed permutation times powers of two on each axis."""
        mono = self.monomial()
        if mono is None:
            return False
        return all(_log2_exact(abs(s)) is not None for s in mono[1])

    def is_involution(self) -> bool:
        return self @ self == LinearMap.identity(self.n)


def check_hypothesis_H(maps: Sequence[LinearMap]) -> tuple[bool, tuple | None]:
    """Every map invertible and every pairwise difference invertible.

    The witness is ``(i,)`` for a singular map or ``(i, j)`` for a singular
    difference, using 1-based indices.
    """
    if not maps:
        raise ValueError("need at least one map")
    for i, a in enumerate(maps):
        if a.det == 0:
            return False, (i + 1,)
    for i, j in itertools.combinations(range(len(maps)), 2):
        if maps[i] - maps[j] is None:
            return False, (i + 1, j + 1)
    return True, None


def cube_image_intersection_volume(a: LinearMap, q: Cube) -> float:
    """``|AQ ∩ Q|`` with ``AQ`` the image parallelepiped."""
    if a.n != q.n:
        raise ValueError("dimension mismatch")
    if q.n == 1:
        s = a.entries[0][0]
        lo, hi = sorted((s * q.corner[0], s * (q.corner[0] + q.side)))
        left = max(lo, q.corner[0])
        right = min(hi, q.corner[0] + q.side)
        return float(max(right - left, 0))
    from shapely.geometry import Polygon, box

    (x0, y0), s = q.corner, q.side
    corners = [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
    image = Polygon([tuple(float(v) for v in a.apply(c)) for c in corners])
    square = box(float(x0), float(y0), float(x0 + s), float(y0 + s))
    return float(image.intersection(square).area)


@dataclass
class TripleLatticeReport:
    n: int
    depth: int
    checked: int
    triple_failures: list
    container_failures: list

    @property
    def failures(self) -> int:
        return len(self.triple_failures) + len(self.container_failures)


def triple_lattice_check(n: int, depth: int, base_box: Cube | None = None) -> TripleLatticeReport:
    """Exhaustively check the two lattice properties over the truncated reference lattice.

    (a) every triple ``3Q`` is a member of exactly one shifted family;
    (b) every family holds a cube ``R ⊃ Q`` with side ``3 l(Q)``.
    """
    box = base_box or Cube((Fraction(-1),) * n, Fraction(2))
    lattices = make_shifted_lattices(n, depth, box)
    ref = ReferenceLattice(box, depth)
    bad_triple, bad_container, count = [], [], 0
    for q in ref.all_cubes():
        count += 1
        try:
            triple_lattice_index(q, lattices)
        except LookupError:
            bad_triple.append(q)
        for lat in lattices:
            try:
                r = containing_triple(q, lat)
            except LookupError:
                bad_container.append((q, lat.tag))
                continue
            if not lat.contains_cube(r):
                bad_container.append((q, lat.tag))
    return TripleLatticeReport(n, depth, count, bad_triple, bad_container)
