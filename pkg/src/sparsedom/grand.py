"""Local grand maximal truncated operator.

For roots ``R_1..R_m`` and a point ``x`` the value is the max, over tuples of
dyadic cubes ``Q_k ∋ A_k^{-1} x`` with ``Q_k ⊂ R_k``, of

    max_{ξ} |T(f χ_{∪3R_k \\ ∪3Q_k})(ξ)|,

where ``ξ`` runs over the cells whose centers satisfy ``A_k^{-1} ξ ∈ Q_k``
for some ``k``.  A slot whose root does not contain ``A_k^{-1} x`` takes no
part in the tuple.  The value depends on the tuple only, so each distinct
tuple is evaluated once from per-row prefix sums of ``K(ξ, y) f(y)``.
"""
from __future__ import annotations

import itertools
from typing import Sequence

import numba
import numpy as np

from .geometry import Cube
from .grid import GridFunction
from .operators import OperatorSpec, _check_budget, kernel_matrix


@numba.njit(cache=True)
def _box_sum(P, row, n, W, lo0, hi0, lo1, hi1):
    if n == 1:
        return P[hi0, row] - P[lo0, row]
    return P[hi0 * W + hi1, row] - P[lo0 * W + hi1, row] - P[hi0 * W + lo1, row] + P[lo0 * W + lo1, row]


@numba.njit(cache=True)
def _tuple_values(P, base, n, N, avail, tlo, thi, xlo, xhi, out):
    T, m = tlo.shape[0], tlo.shape[1]
    W = N + 1
    nsub = 1 << m
    slo = np.zeros((nsub, 2), dtype=np.int64)
    shi = np.zeros((nsub, 2), dtype=np.int64)
    sgn = np.zeros(nsub)
    for t in range(T):
        cnt = 0
        for mask in range(1, nsub):
            ok = True
            bits = 0
            for k in range(m):
                if mask >> k & 1:
                    bits += 1
                    if not avail[k]:
                        ok = False
            if not ok:
                continue
            lo = np.zeros(2, dtype=np.int64)
            hi = np.full(2, N, dtype=np.int64)
            empty = False
            for k in range(m):
                if mask >> k & 1:
                    for a in range(n):
                        if tlo[t, k, a] > lo[a]:
                            lo[a] = tlo[t, k, a]
                        if thi[t, k, a] < hi[a]:
                            hi[a] = thi[t, k, a]
            for a in range(n):
                if hi[a] <= lo[a]:
                    empty = True
            if empty:
                continue
            slo[cnt, 0] = lo[0]
            shi[cnt, 0] = hi[0]
            slo[cnt, 1] = lo[1]
            shi[cnt, 1] = hi[1]
            sgn[cnt] = 1.0 if bits % 2 == 1 else -1.0
            cnt += 1
        best = 0.0
        for k in range(m):
            if not avail[k]:
                continue
            a0, b0 = xlo[t, k, 0], xhi[t, k, 0]
            a1, b1 = 0, 1
            if n == 2:
                a1, b1 = xlo[t, k, 1], xhi[t, k, 1]
            for i0 in range(a0, b0):
                for i1 in range(a1, b1):
                    row = i0 * N + i1 if n == 2 else i0
                    s = 0.0
                    for c in range(cnt):
                        s += sgn[c] * _box_sum(P, row, n, W, slo[c, 0], shi[c, 0], slo[c, 1], shi[c, 1])
                    v = abs(base[row] - s)
                    if v > best:
                        best = v
        out[t] = best


def _union_sums(P, n, N, boxes) -> np.ndarray:
    """Per row, the sum over the union of the given ``(lo, hi)`` boxes."""
    W = N + 1
    total = np.zeros(P.shape[1])
    for r in range(1, len(boxes) + 1):
        for sub in itertools.combinations(boxes, r):
            lo = np.max([b[0] for b in sub], axis=0)
            hi = np.min([b[1] for b in sub], axis=0)
            if np.any(hi <= lo):
                continue
            sign = 1.0 if r % 2 else -1.0
            if n == 1:
                total += sign * (P[hi[0]] - P[lo[0]])
            else:
                total += sign * (P[hi[0] * W + hi[1]] - P[lo[0] * W + hi[1]] - P[hi[0] * W + lo[1]] + P[lo[0] * W + lo[1]])
    return total


class TruncationEngine:
    """Holds the per-row prefix sums of ``K(ξ, y) f(y) |cell|`` for one ``f``."""

    MAX_CELLS = {1: 1 << 12, 2: 64 * 64}

    def __init__(self, spec: OperatorSpec, f: GridFunction, override_budget: bool = False):
        grid = f.grid
        _check_budget(grid, override_budget)
        if not override_budget and grid.size > self.MAX_CELLS[grid.n]:
            raise MemoryError(f"prefix table for {grid.size} cells exceeds the in-memory cap {self.MAX_CELLS[grid.n]}")
        monos = [a.monomial() for a in spec.maps]
        if any(mo is None for mo in monos):
            raise ValueError("the truncated maximal operator needs monomial maps")
        self.spec, self.f, self.grid = spec, f, grid
        n, N = grid.n, grid.N
        K = kernel_matrix(spec, grid, override_budget)
        g = K * (f.values.ravel() * grid.cell_volume)[None, :]
        g = g.reshape((grid.size,) + grid.shape)
        for ax in range(1, n + 1):
            g = np.cumsum(g, axis=ax)
        P = np.zeros((grid.size,) + (N + 1,) * n)
        if n == 1:
            P[:, 1:] = g
        else:
            P[:, 1:, 1:] = g
        # column-major layout: consecutive ξ rows are contiguous for a fixed box corner
        self.P = np.ascontiguousarray(P.reshape(grid.size, -1).T)
        del P, g
        self.inv = [a.inverse for a in spec.maps]
        self.inv_arr = [a.as_array() for a in self.inv]
        # per slot and axis: cell index of (A^{-1} ξ)_a as a function of ξ's index along its source axis
        centers = grid.axis_centers()
        o, h = float(grid.origin), grid.h
        self.axis_maps = []
        for a_inv in self.inv:
            perm, scale = a_inv.monomial()
            maps = []
            for ax in range(n):
                idx = np.floor((float(scale[ax]) * centers - o) / h).astype(np.int64)
                maps.append((perm[ax], idx, float(scale[ax]) > 0))
            self.axis_maps.append(maps)

    def _cells(self, cube: Cube):
        lo, size = self.grid.cube_to_cells(cube)
        return np.array(lo, dtype=np.int64), size

    def _xi_ranges(self, k: int, qlo: np.ndarray, size: int):
        """Index boxes ``[xlo, xhi)`` of ξ with ``A_k^{-1} ξ ∈ Q``, per tuple (shape ``(T, n)``)."""
        T = len(qlo)
        n = self.grid.n
        xlo = np.zeros((T, n), dtype=np.int64)
        xhi = np.zeros((T, n), dtype=np.int64)
        for ax, (src, idx, inc) in enumerate(self.axis_maps[k]):
            lo, hi = qlo[:, ax], qlo[:, ax] + size
            if inc:
                a = np.searchsorted(idx, lo, side="left")
                b = np.searchsorted(idx, hi, side="left")
            else:
                r = idx[::-1]
                N = len(idx)
                a = N - np.searchsorted(r, hi, side="left")
                b = N - np.searchsorted(r, lo, side="left")
            xlo[:, src], xhi[:, src] = a, np.maximum(b, a)
        return xlo, xhi

    def evaluate(self, roots: Sequence[Cube], points: np.ndarray | None = None) -> np.ndarray:
        """Values at ``points`` (default: cell centers)."""
        grid, spec = self.grid, self.spec
        n, N, m = grid.n, grid.N, spec.m
        if len(roots) != m:
            raise ValueError("one root per kernel slot is required")
        if points is None:
            points = grid.centers().reshape(-1, n)
        points = np.asarray(points, dtype=float).reshape(-1, n)
        rl, rs = zip(*(self._cells(q) for q in roots))
        triples = [(np.clip(l - s, 0, N), np.clip(l + 2 * s, 0, N)) for l, s in zip(rl, rs)]
        base = _union_sums(self.P, n, N, triples)
        o, h = float(grid.origin), grid.h
        cells, avail = [], []
        for k in range(m):
            y = points @ self.inv_arr[k].T
            c = np.floor((y - o) / h).astype(np.int64)
            cells.append(c)
            avail.append(np.all((c >= rl[k]) & (c < rl[k] + rs[k]), axis=1))
        avail = np.stack(avail, axis=1)
        out = np.zeros(len(points))
        patterns = np.unique(avail, axis=0)
        for pat in patterns:
            if not pat.any():
                continue
            sel = np.nonzero(np.all(avail == pat, axis=1))[0]
            slots = [k for k in range(m) if pat[k]]
            ranges = [range(int(rs[k]).bit_length()) for k in slots]
            for combo in itertools.product(*ranges):
                qlo = np.zeros((len(sel), m, n), dtype=np.int64)
                for k, lev in zip(slots, combo):
                    rel = cells[k][sel] - rl[k]
                    qlo[:, k, :] = rl[k] + ((rel >> lev) << lev)
                key = qlo[:, slots, :].reshape(len(sel), -1)
                uniq, inverse = np.unique(key, axis=0, return_inverse=True)
                inverse = inverse.ravel()
                T = len(uniq)
                uq = uniq.reshape(T, len(slots), n)
                tlo = np.zeros((T, m, n), dtype=np.int64)
                thi = np.zeros((T, m, n), dtype=np.int64)
                xlo = np.zeros((T, m, 2), dtype=np.int64)
                xhi = np.zeros((T, m, 2), dtype=np.int64)
                for j, (k, lev) in enumerate(zip(slots, combo)):
                    size = 1 << lev
                    q = uq[:, j, :]
                    tlo[:, k, :] = np.clip(q - size, 0, N)
                    thi[:, k, :] = np.clip(q + 2 * size, 0, N)
                    a, b = self._xi_ranges(k, q, size)
                    xlo[:, k, :n], xhi[:, k, :n] = a, b
                vals = np.zeros(T)
                tlo2 = np.zeros((T, m, 2), dtype=np.int64)
                thi2 = np.zeros((T, m, 2), dtype=np.int64)
                tlo2[..., :n], thi2[..., :n] = tlo, thi
                _tuple_values(self.P, base, n, N, pat.astype(np.bool_), tlo2, thi2, xlo, xhi, vals)
                out[sel] = np.maximum(out[sel], vals[inverse])
        return out


def grand_maximal_truncated_local(
    spec: OperatorSpec,
    f: GridFunction,
    roots: Sequence[Cube],
    points: np.ndarray | None = None,
    override_budget: bool = False,
    engine: TruncationEngine | None = None,
):
    """Values of the local grand maximal truncated operator.

    Returns a :class:`GridFunction` when evaluated at cell centers,
    otherwise an array aligned with ``points``.
    """
    eng = engine or TruncationEngine(spec, f, override_budget)
    vals = eng.evaluate(roots, points)
    if points is None:
        return GridFunction(f.grid, vals.reshape(f.grid.shape))
    return vals
