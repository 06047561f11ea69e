"""Sparse families, sparse operators and the constructive sparse domination.

The builder covers the support of ``f`` by disjoint dyadic roots, finds the
exceptional set of each root from the truncated grand maximal operator,
runs a Calderón–Zygmund selection on its indicator and recurses.  The
selected cubes form a 1/2-sparse family; their triples are then sorted into
the ``3^n`` shifted lattices.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import Cube, LinearMap
from .grand import TruncationEngine
from .grid import CellMask, Grid, GridFunction, PrefixSums
from .operators import OperatorSpec, apply_T


class SparseBuildError(RuntimeError):
    """The exceptional-set threshold could not be tuned."""


@dataclass
class SparseFamily:
    """Cubes with optional witness masks (``None`` means canonical witnesses)."""

    grid: Grid
    cubes: list
    witnesses: list | None = None
    tag: int | None = None
    eta: float = 0.5

    def __len__(self):
        return len(self.cubes)

    def cells(self):
        """Lower cell corners ``(K, n)`` and sides ``(K,)``, unclipped."""
        if not self.cubes:
            return np.zeros((0, self.grid.n), dtype=np.int64), np.zeros(0, dtype=np.int64)
        pairs = [self.grid.cube_to_cells(q, clip=True) for q in self.cubes]
        lo = np.array([p[0] for p in pairs], dtype=np.int64).reshape(-1, self.grid.n)
        size = np.array([p[1] for p in pairs], dtype=np.int64)
        return lo, size

    def volumes(self) -> np.ndarray:
        return np.array([float(q.volume) for q in self.cubes])


def _slices(lo_row, size: int, lo_clip: int, hi_clip: int):
    return tuple(slice(min(max(a, lo_clip), hi_clip), min(max(a + size, lo_clip), hi_clip)) for a in lo_row)


def _cube_sums(grid: Grid, values: np.ndarray, lo: np.ndarray, size: np.ndarray) -> np.ndarray:
    """Sums of ``values`` over each cube (zero outside the box).

    Direct block sums: a cube over a zero region sums to exactly zero,
    which prefix-table differences do not guarantee.
    """
    out = np.array([values[_slices(row, int(s), 0, grid.N)].sum() for row, s in zip(lo, size)], dtype=float)
    return out * grid.cell_volume


def _indicator_sum(grid: Grid, lo: np.ndarray, size: np.ndarray, coef: np.ndarray, pad: int):
    """``F(c) = sum_Q coef_Q [c ∈ Q]`` on cell indices ``[-pad, N + pad)`` per axis."""
    M = grid.N + 2 * pad
    F = np.zeros((M,) * grid.n)
    for row, s, c in zip(lo + pad, size, coef):
        if c:
            F[_slices(row, int(s), 0, M)] += c
    return F


def _evaluate_at(grid: Grid, F: np.ndarray, pad: int, points: np.ndarray) -> np.ndarray:
    idx = np.floor((points - float(grid.origin)) / grid.h).astype(np.int64) + pad
    ok = np.all((idx >= 0) & (idx < F.shape[0]), axis=1)
    out = np.zeros(len(points))
    out[ok] = F[tuple(idx[ok].T)]
    return out


def _pad_for(grid: Grid, lo: np.ndarray, size: np.ndarray) -> int:
    if len(size) == 0:
        return 0
    return int(max(0, -lo.min(), (lo + size[:, None]).max() - grid.N))


def sparse_coefficients(S: SparseFamily, f: GridFunction, alpha: float, s: float) -> np.ndarray:
    """``|Q|^{alpha/n} ||f||_{s,Q}`` per member."""
    lo, size = S.cells()
    vol = S.volumes()
    sums = _cube_sums(f.grid, np.abs(f.values) ** s, lo, size)
    return vol ** (alpha / f.grid.n) * (np.maximum(sums, 0) / vol) ** (1.0 / s)


def sparse_apply(S: SparseFamily, f: GridFunction, alpha: float, s: float, a: LinearMap | None = None, points: np.ndarray | None = None) -> GridFunction | np.ndarray:
    """``x -> sum_Q |Q|^{alpha/n} ||f||_{s,Q} χ_Q(A^{-1} x)`` at cell centers (or ``points``)."""
    grid = f.grid
    if s < 1:
        raise ValueError("s must be >= 1")
    a = a or LinearMap.identity(grid.n)
    if not a.is_grid_compatible():
        raise ValueError(f"{a!r} is not grid-compatible")
    pts = grid.centers().reshape(-1, grid.n) if points is None else np.asarray(points, dtype=float).reshape(-1, grid.n)
    if len(S) == 0:
        vals = np.zeros(len(pts))
    else:
        lo, size = S.cells()
        pad = _pad_for(grid, lo, size)
        F = _indicator_sum(grid, lo, size, sparse_coefficients(S, f, alpha, s), pad)
        vals = _evaluate_at(grid, F, pad, pts @ a.inverse.as_array().T)
    if points is not None:
        return vals
    return GridFunction(grid, vals.reshape(grid.shape))


def tilde_sparse_apply(S: SparseFamily, g: GridFunction, t: float, beta: float) -> GridFunction:
    """``(sum_Q (|Q|^{-beta} ∫_Q g)^t χ_Q)^{1/t}``."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    grid = g.grid
    if len(S) == 0:
        return GridFunction.zeros(grid)
    lo, size = S.cells()
    vol = S.volumes()
    coef = (vol ** (-beta) * _cube_sums(grid, g.values, lo, size)) ** t
    pad = _pad_for(grid, lo, size)
    F = _indicator_sum(grid, lo, size, coef, pad)
    inner = F[(slice(pad, pad + grid.N),) * grid.n]
    return GridFunction(grid, np.maximum(inner, 0) ** (1.0 / t))


def comp_sparse_check(S: SparseFamily, f: GridFunction, alpha: float, r: float) -> float:
    """Max relative gap between the two sides of the sparse/tilde identity.

    ``A_{alpha,r,S} f = (tilde A^{1 - r alpha/n}_{1/r,S}(f^r))^{1/r}`` for ``f >= 0``.
    """
    if np.any(f.values < 0):
        raise ValueError("f must be nonnegative")
    n = f.grid.n
    lhs = sparse_apply(S, f, alpha, r).values
    beta = 1.0 - r * alpha / n
    rhs = tilde_sparse_apply(S, GridFunction(f.grid, f.values ** r), 1.0 / r, beta).values ** (1.0 / r)
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    gap = np.abs(lhs - rhs)
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(scale > 0, gap / scale, 0.0)
    return float(rel.max()) if rel.size else 0.0


def canonical_witnesses(S: SparseFamily) -> list[CellMask]:
    """``E_Q``: the cells of ``Q`` not claimed by a smaller member.

    For nested (dyadic) families this is ``Q`` minus the members strictly
    inside it.
    """
    grid = S.grid
    lo, size = S.cells()
    label = np.full(grid.shape, -1, dtype=np.int64)
    for i in np.argsort(-size, kind="stable"):
        label[tuple(slice(max(a, 0), max(min(a + size[i], grid.N), 0)) for a in lo[i])] = i
    return [CellMask(grid, label == i) for i in range(len(S))]


def verify_sparsity(S: SparseFamily, eta: float) -> tuple[bool, dict]:
    """Check containment, disjointness and ``|E_Q| >= eta |Q|`` for the witnesses."""
    grid = S.grid
    wit = S.witnesses if S.witnesses is not None else canonical_witnesses(S)
    lo, size = S.cells()
    vol = S.volumes()
    cover = np.zeros(grid.shape, dtype=np.int64)
    contained = True
    worst = math.inf
    for i, e in enumerate(wit):
        q = np.zeros(grid.shape, dtype=bool)
        q[tuple(slice(max(a, 0), max(min(a + size[i], grid.N), 0)) for a in lo[i])] = True
        contained &= not np.any(e.mask & ~q)
        cover += e.mask
        worst = min(worst, e.measure / vol[i])
    disjoint = bool(cover.max(initial=0) <= 1)
    if not len(S):
        worst = 1.0
    ok = bool(contained and disjoint and worst >= eta * (1 - 1e-12))
    return ok, {"contained": bool(contained), "disjoint": disjoint, "min_ratio": float(worst), "eta": eta, "count": len(S)}


# ---------------------------------------------------------------- construction


@dataclass
class SparseBuildParams:
    gamma: float = 1.0
    height: float | None = None
    max_depth: int = 64
    max_doublings: int = 20

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.height is not None and not 0 < self.height < 1:
            raise ValueError("height must lie in (0, 1)")


def ls_norm_zero_extended(f: GridFunction, cube: Cube, s: float) -> float:
    """``||f||_{s,Q}`` with ``f`` extended by zero outside the box."""
    lo, size = f.grid.cube_to_cells(cube, clip=True)
    sl = tuple(slice(max(a, 0), max(min(a + size, f.grid.N), 0)) for a in lo)
    total = float((np.abs(f.values[sl]) ** s).sum() * f.grid.cell_volume)
    return (total / float(cube.volume)) ** (1.0 / s)


def _maximal_at_roots(engine: TruncationEngine, roots: Sequence[Cube]) -> list[np.ndarray]:
    """Grand maximal values at ``A_i z`` for every cell ``z`` of ``roots[i]``, per slot."""
    grid = engine.grid
    pts, counts = [], []
    for a, root in zip(engine.spec.maps, roots):
        sl = grid.cube_slices(root)
        c = grid.centers()[sl].reshape(-1, grid.n)
        pts.append(c @ a.as_array().T)
        counts.append(len(c))
    vals = engine.evaluate(roots, np.vstack(pts))
    return np.split(vals, np.cumsum(counts)[:-1])


def exceptional_set(spec: OperatorSpec, f: GridFunction, roots: Sequence[Cube], params: SparseBuildParams | None = None, engine: TruncationEngine | None = None, gamma: float | None = None, _cache=None) -> CellMask:
    """Cells of the roots where the truncated maximal operator or ``|f|`` is large."""
    params = params or SparseBuildParams()
    gamma = params.gamma if gamma is None else gamma
    grid = f.grid
    n = grid.n
    engine = engine or TruncationEngine(spec, f)
    mvals = _cache if _cache is not None else _maximal_at_roots(engine, roots)
    norms = [ls_norm_zero_extended(f, r.triple(), spec.s) for r in roots]
    thr = gamma * sum(float(r.triple().volume) ** (spec.alpha / n) * nv for r, nv in zip(roots, norms))
    mask = np.zeros(grid.shape, dtype=bool)
    for i, root in enumerate(roots):
        sl = grid.cube_slices(root)
        block = (mvals[i] > thr).reshape(mask[sl].shape)
        if spec.alpha == 0:
            block |= np.abs(f.values[sl]) > gamma * norms[i]
        mask[sl] |= block
    return CellMask(grid, mask)


def cz_decompose(mask: CellMask, root: Cube, height: float) -> list[Cube]:
    """Maximal dyadic subcubes of ``root`` on which the mask average exceeds ``height``."""
    grid = mask.grid
    n = grid.n
    lo0, size0 = grid.cube_to_cells(root)
    ps = PrefixSums(mask.mask.astype(float))
    if ps.box_sum(np.array([lo0]), size0)[0] / size0 ** n > height:
        raise ValueError("mask average over the root exceeds the height; tune the threshold first")
    out = []
    cand = np.array([lo0], dtype=np.int64)
    size = size0
    while size > 1 and len(cand):
        size //= 2
        offs = np.array(np.meshgrid(*[[0, size]] * n, indexing="ij")).reshape(n, -1).T
        kids = (cand[:, None, :] + offs[None, :, :]).reshape(-1, n)
        avg = ps.box_sum(kids, size) / size ** n
        sel = avg > height
        out.extend(grid.cells_to_cube(k, size) for k in kids[sel])
        cand = kids[~sel & (avg > 0)]
    return out


def triple_tag(grid: Grid, q: Cube) -> int:
    """Index of the shifted lattice that contains ``3Q`` for a reference cube ``Q``."""
    lo, size = grid.cube_to_cells(q)
    k = (grid.N // size).bit_length() - 1
    tag = 0
    for a, c in enumerate(lo):
        m = c // size
        digit = ((m - 1) * pow(2, k, 3)) % 3
        tag += digit * 3 ** a
    return tag


def root_cover(grid: Grid, support: np.ndarray) -> list[Cube]:
    """Smallest dyadic cube ``Q_0`` holding the support plus the siblings of its ancestors."""
    n, N = grid.n, grid.N
    idx = np.argwhere(support)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    size = 1
    while True:
        a = (lo // size) * size
        if np.all(hi < a + size):
            break
        size *= 2
    q0 = (a, size)
    roots = [grid.cells_to_cube(a, size)]
    cur, s = a, size
    while s < N:
        parent = (cur // (2 * s)) * (2 * s)
        offs = np.array(np.meshgrid(*[[0, s]] * n, indexing="ij")).reshape(n, -1).T
        for o in offs:
            sib = parent + o
            if not np.array_equal(sib, cur):
                roots.append(grid.cells_to_cube(sib, s))
        cur, s = parent, 2 * s
    del q0
    return roots


@dataclass
class DominationCertificate:
    """Output of :func:`build_sparse_domination`."""

    grid: Grid
    families: list
    pre_family: SparseFamily
    alpha: float
    s: float
    maps: list
    c: float
    gammas: list = field(default_factory=list)
    audits: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return bool(np.isfinite(self.c) and self.audits.get("pre_sparse", False) and self.audits.get("packing", False) and self.audits.get("cz_selection", False))

    def dominating_sum(self, f: GridFunction) -> np.ndarray:
        total = np.zeros(f.grid.shape)
        for fam in self.families:
            for a in self.maps:
                total += sparse_apply(fam, f, self.alpha, self.s, a).values
        return total

    def to_json(self, path=None) -> str:
        def cube(q):
            return {"corner": [str(c) for c in q.corner], "side": str(q.side)}

        doc = {
            "grid": {"n": self.grid.n, "J": self.grid.J, "L": self.grid.L},
            "alpha": self.alpha,
            "s": self.s,
            "maps": [[[str(v) for v in row] for row in a.entries] for a in self.maps],
            "c": self.c if np.isfinite(self.c) else None,
            "gammas": self.gammas,
            "audits": self.audits,
            "stats": self.stats,
            "pre_family": [cube(q) for q in self.pre_family.cubes],
            "families": [{"tag": fam.tag, "cubes": [cube(q) for q in fam.cubes]} for fam in self.families],
        }
        text = json.dumps(doc, indent=1, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "DominationCertificate":
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
        doc = json.loads(text)
        g = Grid(**doc["grid"])

        def cube(d):
            return Cube(tuple(Fraction(c) for c in d["corner"]), Fraction(d["side"]))

        maps = [LinearMap([[Fraction(v) for v in row] for row in a]) for a in doc["maps"]]
        pre = SparseFamily(g, [cube(d) for d in doc["pre_family"]], None, None, 0.5)
        fams = [SparseFamily(g, [cube(d) for d in fd["cubes"]], None, fd["tag"], 1 / (2 * 9 ** g.n)) for fd in doc["families"]]
        c = doc["c"] if doc["c"] is not None else math.inf
        return cls(g, fams, pre, doc["alpha"], doc["s"], maps, c, doc["gammas"], doc["audits"], doc["stats"])

    def recheck(self, spec: OperatorSpec, f: GridFunction) -> float:
        """Recompute the pointwise constant from the stored families."""
        return pointwise_constant(apply_T(spec, f).values, self.dominating_sum(f))


def pointwise_constant(tf: np.ndarray, rhs: np.ndarray) -> float:
    """``max |Tf| / rhs`` over cells where ``Tf != 0`` (``inf`` if the rhs vanishes there)."""
    tf = np.abs(tf)
    live = tf > 0
    if not live.any():
        return math.nan
    if np.any(rhs[live] <= 0):
        return math.inf
    return float((tf[live] / rhs[live]).max())


def build_sparse_domination(spec: OperatorSpec, f: GridFunction, params: SparseBuildParams | None = None, override_budget: bool = False) -> DominationCertificate:
    """Construct the sparse families and measure the domination constant."""
    params = params or SparseBuildParams()
    grid = f.grid
    n, m = grid.n, spec.m
    height = params.height or 2.0 ** -(n + 1)
    support = f.values != 0
    empty = SparseFamily(grid, [], None, None, 0.5)
    if not support.any():
        fams = [SparseFamily(grid, [], None, j, 1 / (2 * 9 ** n)) for j in range(3 ** n)]
        audits = {"pre_sparse": True, "packing": True, "cz_selection": True, "note": "f vanishes; constant undefined"}
        return DominationCertificate(grid, fams, empty, spec.alpha, spec.s, list(spec.maps), math.nan, [], audits, {"nodes": 0})
    engine = TruncationEngine(spec, f, override_budget)
    roots = root_cover(grid, support)
    selected: list[Cube] = []
    gammas, packing_ok, cz_ok = [], True, True
    worst_packing, worst_cz = 0.0, 0.0
    stack = [(r, 0) for r in roots]
    max_level = 0
    while stack:
        node, depth = stack.pop()
        selected.append(node)
        max_level = max(max_level, depth)
        lo, size = grid.cube_to_cells(node)
        if size == 1 or depth >= params.max_depth:
            continue
        slots = [node] * m
        mvals = _maximal_at_roots(engine, slots)
        gamma = params.gamma
        for _ in range(params.max_doublings + 1):
            e = exceptional_set(spec, f, slots, params, engine, gamma, mvals)
            if e.measure <= float(node.volume) / 2 ** (n + 2):
                break
            gamma *= 2
        else:
            raise SparseBuildError(
                f"no threshold within {params.max_doublings} doublings meets the packing bound on {node!r} "
                f"(|E|/|Q| = {e.measure / float(node.volume):.4f})"
            )
        gammas.append(gamma)
        ratio = e.measure / float(node.volume)
        worst_packing = max(worst_packing, ratio)
        packing_ok &= ratio <= 2.0 ** -(n + 2)
        kids = cz_decompose(e, node, height)
        covered = sum(float(k.volume) for k in kids)
        if e.measure > 0:
            worst_cz = max(worst_cz, covered / (2 ** (n + 1) * e.measure))
        cz_ok &= covered <= 2 ** (n + 1) * e.measure * (1 + 1e-12)
        stack.extend((k, depth + 1) for k in kids)
    pre = SparseFamily(grid, selected, None, None, 0.5)
    pre.witnesses = canonical_witnesses(pre)
    pre_ok, pre_audit = verify_sparsity(pre, 0.5)
    buckets: dict[int, list] = {j: [] for j in range(3 ** n)}
    wits: dict[int, list] = {j: [] for j in range(3 ** n)}
    for q, w in zip(pre.cubes, pre.witnesses):
        j = triple_tag(grid, q)
        buckets[j].append(q.triple())
        wits[j].append(w)
    eta_post = 1 / (2 * 9 ** n)
    fams = [SparseFamily(grid, buckets[j], wits[j], j, eta_post) for j in range(3 ** n)]
    post = [verify_sparsity(fam, eta_post) for fam in fams]
    tf = apply_T(spec, f, override_budget).values
    cert = DominationCertificate(grid, fams, pre, spec.alpha, spec.s, list(spec.maps), math.nan, gammas)
    c = pointwise_constant(tf, cert.dominating_sum(f))
    cert.c = c
    cert.audits = {
        "pre_sparse": pre_ok,
        "pre_min_ratio": pre_audit["min_ratio"],
        "post_sparse": all(p[0] for p in post),
        "post_min_ratio": min(p[1]["min_ratio"] for p in post),
        "packing": bool(packing_ok),
        "packing_worst": worst_packing,
        "cz_selection": bool(cz_ok),
        "cz_worst": worst_cz,
        "extrapolated_m": m > 2,
    }
    cert.stats = {"nodes": len(selected), "roots": len(roots), "max_level": max_level, "gamma_max": max(gammas, default=params.gamma)}
    return cert
