"""Finite cube families on a grid, stored as levels of equal-sized cubes.

A level is a side length in cells plus an integer array of lower corners
(cell indices, possibly outside ``[0, N)`` for cubes that stick out of the
box).  Suprema over a family are computed level by level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter, maximum_filter1d

from .geometry import Cube
from .grid import Grid, PrefixSums


@dataclass(frozen=True)
class Level:
    size: int
    lo: np.ndarray  # (K, n) int64
    tag: str = ""

    def cubes(self, grid: Grid) -> list[Cube]:
        return [grid.cells_to_cube(row, self.size) for row in self.lo]

    def inside(self, N: int) -> "Level":
        ok = np.all((self.lo >= 0) & (self.lo + self.size <= N), axis=1)
        return Level(self.size, self.lo[ok], self.tag)

    def __len__(self):
        return len(self.lo)


def _product_lo(axes: list[np.ndarray]) -> np.ndarray:
    if len(axes) == 1:
        return axes[0][:, None].astype(np.int64)
    a, b = np.meshgrid(axes[0], axes[1], indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1).astype(np.int64)


def _residue_seq(tag: int, depth: int) -> list[int]:
    out = [tag % 3]
    for _ in range(depth):
        out.append(2 * out[-1] % 3)
    return out


@dataclass
class CubeFamily:
    """A finite family of grid-aligned cubes on ``grid``."""

    grid: Grid
    levels: list[Level]
    name: str = "family"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.levels = [lv for lv in self.levels if len(lv)]

    def __len__(self):
        return sum(len(lv) for lv in self.levels)

    def is_empty(self) -> bool:
        return len(self) == 0

    def inside(self) -> "CubeFamily":
        """Members contained in the grid box."""
        return CubeFamily(self.grid, [lv.inside(self.grid.N) for lv in self.levels], self.name if self.name.endswith("/inside") else self.name + "/inside", dict(self.meta))

    def union(self, other: "CubeFamily", name=None) -> "CubeFamily":
        by_size: dict[int, list[np.ndarray]] = {}
        for lv in self.levels + other.levels:
            by_size.setdefault(lv.size, []).append(lv.lo)
        levels = []
        for size in sorted(by_size, reverse=True):
            lo = np.unique(np.concatenate(by_size[size]), axis=0)
            levels.append(Level(size, lo))
        return CubeFamily(self.grid, levels, name or f"{self.name}+{other.name}")

    def cubes(self) -> list[Cube]:
        out = []
        for lv in self.levels:
            out.extend(lv.cubes(self.grid))
        return out

    def max_size(self) -> int:
        return max(lv.size for lv in self.levels)

    def truncate(self, min_size: int) -> "CubeFamily":
        """Members with side at least ``min_size`` cells."""
        return CubeFamily(self.grid, [lv for lv in self.levels if lv.size >= min_size], f"{self.name}>={min_size}", dict(self.meta))


def reference_family(grid: Grid, min_size: int = 1) -> CubeFamily:
    """The dyadic cubes of the grid box down to ``min_size`` cells."""
    levels = []
    N = grid.N
    size = N
    while size >= min_size:
        ax = np.arange(0, N, size)
        levels.append(Level(size, _product_lo([ax] * grid.n), "D"))
        size //= 2
    return CubeFamily(grid, levels, "reference")


def shifted_family(grid: Grid, tag: int, min_unit: int = 1) -> CubeFamily:
    """One shifted lattice restricted to cubes meeting the box.

    At scale ``k`` the unit is ``u = N / 2^k`` cells and cubes have side
    ``3u`` with lower corners ``u (3m + c_k)``.
    """
    n, N = grid.n, grid.N
    if not 0 <= tag < 3 ** n:
        raise ValueError("lattice tag out of range")
    digits = [(tag // 3 ** a) % 3 for a in range(n)]
    seqs = [_residue_seq(d, grid.depth) for d in digits]
    levels = []
    k, u = 0, N
    while u >= min_unit:
        axes = []
        for a in range(n):
            c = seqs[a][k]
            starts = u * (3 * np.arange(-2, N // (3 * u) + 2) + c)
            axes.append(starts[(starts < N) & (starts + 3 * u > 0)])
        levels.append(Level(3 * u, _product_lo(axes), f"D{tag}"))
        k += 1
        u //= 2
    return CubeFamily(grid, levels, f"shifted[{tag}]", {"tag": tag})


def lattice_union_family(grid: Grid, min_unit: int = 1, include_reference: bool = False) -> CubeFamily:
    """Union of all ``3^n`` shifted lattices (optionally with the reference lattice)."""
    fam = shifted_family(grid, 0, min_unit)
    for j in range(1, 3 ** grid.n):
        fam = fam.union(shifted_family(grid, j, min_unit))
    if include_reference:
        fam = fam.union(reference_family(grid, min_unit))
    fam.name = "lattices" + ("+reference" if include_reference else "")
    return fam


def all_intervals_family(grid: Grid, min_size: int = 1) -> CubeFamily:
    """Every grid-aligned interval inside the box (``n = 1`` only)."""
    if grid.n != 1:
        raise ValueError("the all-intervals family exists only for n = 1")
    N = grid.N
    levels = [Level(s, np.arange(0, N - s + 1, dtype=np.int64)[:, None], "I") for s in range(N, min_size - 1, -1)]
    return CubeFamily(grid, levels, "intervals")


def dilate_family(base: CubeFamily, factors=(2, 3, 4), inside: bool = True) -> CubeFamily:
    """Concentric dilates ``lam Q`` of members that stay grid-aligned."""
    levels = []
    for lam in factors:
        for lv in base.levels:
            grow = (lam - 1) * lv.size
            if grow % 2:
                continue
            new = Level(lam * lv.size, lv.lo - grow // 2, f"x{lam}")
            levels.append(new.inside(base.grid.N) if inside else new)
    fam = CubeFamily(base.grid, levels, f"dilates{tuple(factors)}")
    return fam


def explicit_family(grid: Grid, cubes) -> CubeFamily:
    by_size: dict[int, list] = {}
    for q in cubes:
        lo, size = grid.cube_to_cells(q, clip=True)
        by_size.setdefault(size, []).append(lo)
    levels = [Level(s, np.unique(np.array(v, dtype=np.int64).reshape(-1, grid.n), axis=0)) for s, v in sorted(by_size.items(), reverse=True)]
    return CubeFamily(grid, levels, "explicit")


def scatter_max(values: np.ndarray, lv: Level, N: int, n: int) -> np.ndarray:
    """Per cell, the max of ``values[k]`` over cubes of ``lv`` containing it (0 if none).

    Values must be nonnegative.  Lower corners of one level must be distinct.
    """
    s = lv.size
    shape = (N + s - 1,) * n
    arr = np.zeros(shape)
    pos = lv.lo + s - 1
    ok = np.all((pos >= 0) & (pos < N + s - 1), axis=1)
    if n == 1:
        np.maximum.at(arr, pos[ok, 0], values[ok])
        out = maximum_filter1d(arr, s, mode="constant", cval=0.0)
        return out[s // 2: s // 2 + N]
    np.maximum.at(arr, (pos[ok, 0], pos[ok, 1]), values[ok])
    out = maximum_filter(arr, size=s, mode="constant", cval=0.0)
    return out[s // 2: s // 2 + N, s // 2: s // 2 + N]


def level_box_sums(ps: PrefixSums, lv: Level) -> np.ndarray:
    return ps.box_sum(lv.lo, lv.size)
