"""Piecewise-constant fields on a uniform grid over the box ``[-2^J, 2^J)^n``.

Cells have side ``h = 2^-L`` and there are ``N = 2^(J+L+1)`` of them per
axis.  Every quantity is a cell sum, so level sets, averages and maxima are
exact set operations on cells.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import integrate as _quad
from scipy import sparse as _sp

from .geometry import Cube, DyadicLattice, LinearMap, ReferenceLattice, make_shifted_lattices


class AlignmentError(ValueError):
    """A cube does not resolve to whole grid cells."""


class IncompatibleMapError(ValueError):
    """A linear map does not carry the grid onto itself."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid with ``2^(J+L+1)`` cells per axis."""

    n: int
    J: int
    L: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2")
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.J + self.L + 1 < 1:
            raise ValueError("grid must have at least one cell per axis")

    @property
    def N(self) -> int:
        return 1 << (self.J + self.L + 1)

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    @property
    def h_exact(self) -> Fraction:
        return Fraction(1, 1 << self.L) if self.L >= 0 else Fraction(1 << -self.L)

    @property
    def h(self) -> float:
        return float(self.h_exact)

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    @property
    def origin(self) -> Fraction:
        return -Fraction(1 << self.J)

    @property
    def box(self) -> Cube:
        return Cube((self.origin,) * self.n, Fraction(1 << (self.J + 1)))

    @property
    def depth(self) -> int:
        """Number of bisections from the box down to a single cell."""
        return self.J + self.L + 1

    def axis_centers(self) -> np.ndarray:
        return float(self.origin) + (np.arange(self.N) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """Cell centers, shape ``grid.shape + (n,)``."""
        c = self.axis_centers()
        if self.n == 1:
            return c[:, None]
        x, y = np.meshgrid(c, c, indexing="ij")
        return np.stack([x, y], axis=-1)

    def refine(self, k: int) -> "Grid":
        return Grid(self.n, self.J, self.L + k)

    def reference_lattice(self) -> ReferenceLattice:
        return ReferenceLattice(self.box, self.depth)

    def shifted_lattices(self) -> list[DyadicLattice]:
        return make_shifted_lattices(self.n, self.depth, self.box)

    def cube_to_cells(self, q: Cube, clip: bool = False) -> tuple[tuple[int, ...], int]:
        """Lower cell index per axis and side in cells; raises on misalignment.

        With ``clip=False`` the cube must lie inside the box.
        """
        if q.n != self.n:
            raise ValueError("dimension mismatch")
        size = q.side / self.h_exact
        if size.denominator != 1:
            raise AlignmentError(f"{q!r} side is not a whole number of cells")
        lo = []
        for c in q.corner:
            t = (c - self.origin) / self.h_exact
            if t.denominator != 1:
                raise AlignmentError(f"{q!r} is not grid-aligned")
            lo.append(int(t))
        size = int(size)
        if not clip and not all(0 <= a and a + size <= self.N for a in lo):
            raise AlignmentError(f"{q!r} leaves the grid box")
        return tuple(lo), size

    def cells_to_cube(self, lo, size: int) -> Cube:
        return Cube(tuple(self.origin + int(a) * self.h_exact for a in lo), size * self.h_exact)

    def cube_slices(self, q: Cube) -> tuple[slice, ...]:
        lo, size = self.cube_to_cells(q, clip=True)
        return tuple(slice(max(a, 0), min(a + size, self.N)) for a in lo)

    def cell_of_point(self, point) -> tuple[int, ...] | None:
        idx = []
        for p in point:
            t = int(np.floor((float(p) - float(self.origin)) / self.h))
            if not 0 <= t < self.N:
                return None
            idx.append(t)
        return tuple(idx)


def _check_values(grid: Grid, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"expected values of shape {grid.shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("grid values must be finite")
    return arr


class GridFunction:
    """One real value per grid cell.

    ``approximate`` marks values produced by a resampling path and
    ``residual`` carries the mass lost outside the box by the producing
    operation.
    """

    def __init__(self, grid: Grid, values, approximate: bool = False, residual: float = 0.0):
        self.grid = grid
        self.values = _check_values(grid, values)
        self.values.setflags(write=False)
        self.approximate = bool(approximate)
        self.residual = float(residual)

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def indicator(cls, grid: Grid, cube: Cube, value: float = 1.0):
        v = np.zeros(grid.shape)
        v[grid.cube_slices(cube)] = value
        return cls(grid, v)

    @classmethod
    def from_callable(cls, grid: Grid, fn):
        c = grid.centers()
        return cls(grid, fn(c[..., 0]) if grid.n == 1 else fn(c[..., 0], c[..., 1]))

    def with_values(self, values, **kw):
        return type(self)(self.grid, values, **kw)

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid}, approximate={self.approximate})"

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def refine(self, k: int):
        """Same function on a grid ``2^k`` times finer."""
        v = self.values
        for ax in range(self.grid.n):
            v = np.repeat(v, 1 << k, axis=ax)
        return type(self)(self.grid.refine(k), v, self.approximate, self.residual)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"i{a}" for a in range(self.grid.n)] + ["value"])
        for idx in np.ndindex(*self.grid.shape):
            w.writerow(list(idx) + [repr(float(self.values[idx]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, grid: Grid, source):
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        expected = [f"i{a}" for a in range(grid.n)] + ["value"]
        if header != expected:
            raise ValueError(f"bad header {header}, expected {expected}")
        v = np.zeros(grid.shape)
        seen = np.zeros(grid.shape, dtype=bool)
        for row in rows[1:]:
            idx = tuple(int(x) for x in row[:-1])
            v[idx] = float(row[-1])
            seen[idx] = True
        if not seen.all():
            raise ValueError("CSV does not cover every cell")
        return cls(grid, v)


class Weight(GridFunction):
    """Nonnegative grid function."""

    def __init__(self, grid: Grid, values, approximate: bool = False, residual: float = 0.0):
        super().__init__(grid, values, approximate, residual)
        if np.any(self.values < 0):
            raise ValueError("weights must be nonnegative")

    def power(self, e: float) -> "Weight":
        """Cell-wise ``w^e``; zero cells map to ``inf``-free zero for e>0."""
        with np.errstate(divide="ignore"):
            v = np.where(self.values > 0, self.values ** e, 0.0 if e > 0 else np.inf)
        if not np.all(np.isfinite(v)):
            raise ZeroDivisionError("negative power of a weight with zero cells")
        return Weight(self.grid, v, self.approximate)


class CellMask:
    """Boolean cell set."""

    def __init__(self, grid: Grid, mask):
        m = np.asarray(mask, dtype=bool)
        if m.shape != grid.shape:
            raise ValueError("mask shape does not match grid")
        self.grid = grid
        self.mask = m

    @classmethod
    def empty(cls, grid: Grid):
        return cls(grid, np.zeros(grid.shape, dtype=bool))

    @classmethod
    def from_cube(cls, grid: Grid, q: Cube):
        m = np.zeros(grid.shape, dtype=bool)
        m[grid.cube_slices(q)] = True
        return cls(grid, m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    @property
    def measure(self) -> float:
        return self.count * self.grid.cell_volume

    def __or__(self, other: "CellMask") -> "CellMask":
        return CellMask(self.grid, self.mask | other.mask)

    def __and__(self, other: "CellMask") -> "CellMask":
        return CellMask(self.grid, self.mask & other.mask)

    def __sub__(self, other: "CellMask") -> "CellMask":
        return CellMask(self.grid, self.mask & ~other.mask)


def integrate(f: GridFunction, region=None) -> float:
    """Exact cell-sum quadrature over a grid-aligned cube or a mask."""
    if region is None:
        return f.integral()
    if isinstance(region, CellMask):
        return float(f.values[region.mask].sum() * f.grid.cell_volume)
    if isinstance(region, Cube):
        f.grid.cube_to_cells(region)
        return float(f.values[f.grid.cube_slices(region)].sum() * f.grid.cell_volume)
    raise TypeError("region must be a Cube or CellMask")


def lr_average(f: GridFunction, q: Cube, r: float) -> float:
    """``(|Q|^-1 ∫_Q |f|^r)^(1/r)``, or the max of ``|f|`` for ``r = inf``."""
    if r < 1:
        raise ValueError("r must be >= 1")
    f.grid.cube_to_cells(q)
    block = np.abs(f.values[f.grid.cube_slices(q)])
    if np.isinf(r):
        return float(block.max())
    return float(np.mean(block ** r) ** (1.0 / r))


def weighted_level_measure(w: GridFunction, g: GridFunction, lam: float) -> float:
    """``∫_{g > lam} w``."""
    if g.grid != w.grid:
        raise ValueError("grid mismatch")
    return float(w.values[g.values > lam].sum() * w.grid.cell_volume)


def lp_norm(f: GridFunction, w: GridFunction | None, p: float) -> float:
    """``(∫ |f|^p w)^(1/p)`` with an already-powered weight."""
    if not 1 <= p < np.inf:
        raise ValueError("p must lie in [1, inf)")
    a = np.abs(f.values) ** p
    if w is not None:
        a = a * w.values
    return float((a.sum() * f.grid.cell_volume) ** (1.0 / p))


def _axis_average_matrix(grid: Grid, scale: float) -> tuple[_sp.csr_matrix, np.ndarray]:
    """Matrix ``P`` with ``(P f)_i`` the average of ``f`` over ``scale * cell_i``.

    Also returns, per output cell, the fraction of the image outside the box.
    """
    N, h, o = grid.N, grid.h, float(grid.origin)
    edges = o + np.arange(N + 1) * h
    a, b = scale * edges[:-1], scale * edges[1:]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    length = hi - lo
    j0 = np.floor((lo - o) / h).astype(np.int64)
    j1 = np.ceil((hi - o) / h).astype(np.int64)
    span = int((j1 - j0).max())
    rows, cols, vals = [], [], []
    inside = np.zeros(N)
    for d in range(span):
        j = j0 + d
        ok = (j < j1) & (j >= 0) & (j < N)
        jj = np.clip(j, 0, N - 1)
        overlap = np.minimum(hi, o + (jj + 1) * h) - np.maximum(lo, o + jj * h)
        overlap = np.where(ok, np.maximum(overlap, 0.0), 0.0)
        keep = overlap > 0
        rows.append(np.nonzero(keep)[0])
        cols.append(jj[keep])
        vals.append(overlap[keep] / length[keep])
        inside += overlap / length
    mat = _sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    return mat, 1.0 - inside


def _apply_axis(values: np.ndarray, mat, axis: int) -> np.ndarray:
    moved = np.moveaxis(values, axis, 0)
    shp = moved.shape
    out = mat @ moved.reshape(shp[0], -1)
    return np.moveaxis(np.asarray(out).reshape(shp), 0, axis)


def pullback(f: GridFunction, a: LinearMap, mode: str | None = None) -> GridFunction:
    """The function ``x -> f(Ax)``.

    Modes:

    ``average``
        Cell value is the average of ``f`` over the image ``A(cell)``.
        Requires a monomial map; integrals over unions of cells are exact.
        This is the default for grid-compatible maps.
    ``exact``
        Refine the output grid by the largest expansion factor of ``A`` so
        the result is exactly ``f∘A`` as a piecewise-constant function.
    ``sample``
        Nearest-cell value at ``A·center``; flagged approximate unless the
        map is grid-compatible and non-expanding.
    """
    grid = f.grid
    if a.n != grid.n:
        raise ValueError("dimension mismatch")
    compatible = a.is_grid_compatible()
    if mode is None:
        if not compatible:
            raise IncompatibleMapError(f"{a!r} does not map the grid onto itself; request mode='sample'")
        mode = "average"
    mono = a.monomial()
    if mode == "exact":
        if not compatible:
            raise IncompatibleMapError("exact pullback needs a grid-compatible map")
        k = max(0, max(int(abs(s)).bit_length() - 1 if abs(s) >= 1 else 0 for s in mono[1]))
        return pullback(f.refine(k) if k else f, a, "average")
    if mode == "average":
        if mono is None:
            raise IncompatibleMapError("average pullback needs a monomial map")
        perm, scale = mono
        # g(x) = f(s_0 x_{p_0}, ..., s_{n-1} x_{p_{n-1}})
        v = f.values
        for ax in range(grid.n):
            mat, outside = _axis_average_matrix(grid, float(scale[ax]))
            v = _apply_axis(v, mat, ax)
        # output axis perm[ax] carries input axis ax
        if grid.n == 2:
            order = [0, 0]
            for ax in range(2):
                order[perm[ax]] = ax
            v = np.transpose(v, order)
        det = abs(float(a.det))
        residual = abs(f.integral() / det - float(v.sum() * grid.cell_volume))
        return type(f)(grid, v, approximate=f.approximate or not compatible, residual=residual)
    if mode == "sample":
        pts = grid.centers().reshape(-1, grid.n) @ a.as_array().T
        idx = np.floor((pts - float(grid.origin)) / grid.h).astype(np.int64)
        ok = np.all((idx >= 0) & (idx < grid.N), axis=1)
        flat = np.zeros(len(pts))
        sel = idx[ok]
        flat[ok] = f.values[tuple(sel.T)]
        exact = compatible and all(abs(s) <= 1 for s in mono[1])
        v = flat.reshape(grid.shape)
        residual = abs(f.integral() / abs(float(a.det)) - float(v.sum() * grid.cell_volume))
        return type(f)(grid, v, approximate=f.approximate or not exact, residual=residual)
    raise ValueError(f"unknown pullback mode {mode!r}")


def _corner_cell_average(h: float, beta: float, n: int) -> float:
    """Average of ``|x|^beta`` over ``[0,h]^n``."""
    if n == 1:
        return h ** beta / (1.0 + beta)
    g = lambda t: (h / np.cos(t)) ** (beta + 2) / (beta + 2)
    val, _ = _quad.quad(g, 0.0, np.pi / 4)
    return 2.0 * val / h ** 2


def power_weight(grid: Grid, beta: float, center=None) -> Weight:
    """``|x - center|^beta`` sampled at cell centers.

    Cells having the singular point as a corner get the exact cell
    average instead, so the weight stays finite and locally integrable for
    ``beta > -n``.
    """
    if beta <= -grid.n:
        raise ValueError("beta must exceed -n for local integrability")
    c = np.zeros(grid.n) if center is None else np.asarray(center, dtype=float)
    x = grid.centers() - c
    r = np.sqrt((x ** 2).sum(axis=-1))
    with np.errstate(divide="ignore"):
        v = r ** beta
    near = np.all(np.abs(x) <= grid.h / 2 + 1e-15, axis=-1)
    v = np.where(near, _corner_cell_average(grid.h, beta, grid.n), v)
    return Weight(grid, v)


class PrefixSums:
    """Summed-area table supporting zero-extended box sums."""

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=float)
        self.n = v.ndim
        self.N = v.shape[0]
        s = v
        for ax in range(self.n):
            s = np.cumsum(s, axis=ax)
        self.table = np.pad(s, [(1, 0)] * self.n)

    def box_sum(self, lo: np.ndarray, size) -> np.ndarray:
        """Sums over ``[lo, lo+size)`` per row of ``lo`` (shape ``(K, n)``), clipped to the grid."""
        lo = np.atleast_2d(np.asarray(lo, dtype=np.int64))
        a = np.clip(lo, 0, self.N)
        b = np.clip(lo + np.asarray(size, dtype=np.int64).reshape(-1, 1) if np.ndim(size) else lo + size, 0, self.N)
        t = self.table
        if self.n == 1:
            return t[b[:, 0]] - t[a[:, 0]]
        return t[b[:, 0], b[:, 1]] - t[a[:, 0], b[:, 1]] - t[b[:, 0], a[:, 1]] + t[a[:, 0], a[:, 1]]
