"""Fractional maximal operators, radial kernels and the product-kernel operator T.

``T f(x) = ∫ k_1(x - A_1 y) ... k_m(x - A_m y) f(y) dy`` is evaluated by
dense cell quadrature.  When ``x - A_i y`` falls inside half a cell of the
origin the kernel factor is replaced by its average over a ball of cell
volume, which keeps integrable singularities finite.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate as _quad

from .families import CubeFamily, scatter_max
from .geometry import LinearMap, check_hypothesis_H
from .grid import Grid, GridFunction, PrefixSums, pullback

CELL_BUDGET = {1: 1 << 14, 2: 96 * 96}


class BudgetExceeded(RuntimeError):
    """Dense quadrature would exceed the configured cell budget."""


# ---------------------------------------------------------------- maximal


def _check_family(family: CubeFamily, grid: Grid):
    if family is None or family.is_empty():
        raise ValueError("cube family is empty")
    if family.grid != grid:
        raise ValueError("family lives on a different grid")


def level_averages(values: np.ndarray, family: CubeFamily, s: float):
    """Yield ``(level, ||f||_{s,Q})`` per level, zero-extending outside the box."""
    ps = PrefixSums(np.abs(values) ** s)
    n = family.grid.n
    for lv in family.levels:
        sums = ps.box_sum(lv.lo, lv.size) / float(lv.size) ** n
        yield lv, np.maximum(sums, 0.0) ** (1.0 / s)


def fractional_maximal(f: GridFunction, alpha: float, s: float, family: CubeFamily) -> GridFunction:
    """``sup_{Q ∋ x} |Q|^{alpha/n} ||f||_{s,Q}`` over the members of ``family``."""
    grid = f.grid
    _check_family(family, grid)
    if not 0 <= alpha < grid.n:
        raise ValueError("alpha must lie in [0, n)")
    if s < 1:
        raise ValueError("s must be >= 1")
    out = np.zeros(grid.shape)
    for lv, avg in level_averages(f.values, family, s):
        vol = (lv.size * grid.h) ** grid.n
        vals = vol ** (alpha / grid.n) * avg
        np.maximum(out, scatter_max(vals, lv, grid.N, grid.n), out=out)
    return GridFunction(grid, out, approximate=f.approximate)


def composed_maximal(f: GridFunction, alpha: float, s: float, a: LinearMap, family: CubeFamily, mode: str | None = None) -> GridFunction:
    """``x -> M_{alpha,s} f(A^{-1} x)``."""
    m = fractional_maximal(f, alpha, s, family)
    if a == LinearMap.identity(f.grid.n):
        return m
    return pullback(m, a.inverse, mode)


def delta_smoothed_maximal(g: GridFunction, delta: float, family: CubeFamily) -> GridFunction:
    """``M(|g|^delta)^{1/delta}``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    p = GridFunction(g.grid, np.abs(g.values) ** delta)
    m = fractional_maximal(p, 0.0, 1.0, family)
    return GridFunction(g.grid, m.values ** (1.0 / delta), approximate=g.approximate)


# ---------------------------------------------------------------- kernels


@dataclass
class KernelSpec:
    """Positive radial profile: ``|x|^-a`` or log-log interpolated samples."""

    kind: str = "power"
    a: float = 0.0
    r: float = math.inf
    radii: np.ndarray | None = None
    samples: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("power", "table", "zero"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if not (self.r > 1):
            raise ValueError("integrability index r must exceed 1")
        if self.kind == "power" and self.a < 0:
            raise ValueError("power exponent must be nonnegative")
        if self.kind == "table":
            rad = np.asarray(self.radii, dtype=float)
            val = np.asarray(self.samples, dtype=float)
            if rad.ndim != 1 or rad.shape != val.shape or len(rad) < 2:
                raise ValueError("tabulated profile needs matching radius/value columns")
            if np.any(np.diff(rad) <= 0) or rad[0] <= 0:
                raise ValueError("radius column must be positive and strictly increasing")
            if np.any(val <= 0) or not np.all(np.isfinite(val)):
                raise ValueError("tabulated values must be positive and finite")
            self.radii, self.samples = rad, val

    @classmethod
    def power(cls, a: float, r: float = math.inf) -> "KernelSpec":
        return cls("power", float(a), r)

    @classmethod
    def zero(cls, r: float = math.inf) -> "KernelSpec":
        return cls("zero", 0.0, r)

    @classmethod
    def from_csv(cls, source, r: float = math.inf) -> "KernelSpec":
        text = Path(source).read_text() if "\n" not in str(source) else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        if [c.strip() for c in rows[0]] != ["radius", "value"]:
            raise ValueError("kernel CSV header must be 'radius,value'")
        data = np.array([[float(x) for x in row] for row in rows[1:] if row], dtype=float)
        return cls("table", 0.0, r, data[:, 0], data[:, 1])

    def __call__(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(rho)
        with np.errstate(divide="ignore"):
            if self.kind == "power":
                return rho ** (-self.a) if self.a else np.ones_like(rho)
            lr, lv = np.log(self.radii), np.log(self.samples)
            x = np.log(rho)
            y = np.interp(x, lr, lv)
            lo_slope = (lv[1] - lv[0]) / (lr[1] - lr[0])
            hi_slope = (lv[-1] - lv[-2]) / (lr[-1] - lr[-2])
            y = np.where(x < lr[0], lv[0] + lo_slope * (x - lr[0]), y)
            y = np.where(x > lr[-1], lv[-1] + hi_slope * (x - lr[-1]), y)
            return np.exp(y)

    def ball_average(self, n: int, h: float) -> float:
        """Average of the profile over a ball of volume ``h^n``."""
        if self.kind == "zero":
            return 0.0
        rho = h / 2 if n == 1 else h / math.sqrt(math.pi)
        if self.kind == "power":
            if self.a >= n:
                raise ValueError("profile is not locally integrable")
            return n * rho ** (-self.a) / (n - self.a)
        g = (lambda t: float(self(t))) if n == 1 else (lambda t: float(self(t)) * t)
        val, _ = _quad.quad(g, 0.0, rho, limit=200)
        return val / rho if n == 1 else 2.0 * val / rho ** 2


@dataclass
class OperatorSpec:
    """Data of ``T_{alpha,m}``: kernels, maps and exponents."""

    n: int
    alpha: float
    kernels: Sequence[KernelSpec]
    maps: Sequence[LinearMap]
    alphas: Sequence[float]
    rs: Sequence[float] | None = None
    s: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = len(self.kernels)
        if m < 1 or len(self.maps) != m or len(self.alphas) != m:
            raise ValueError("kernels, maps and alphas must have equal nonzero length")
        if not 0 <= self.alpha < self.n:
            raise ValueError("alpha must lie in [0, n)")
        if any(a.n != self.n for a in self.maps):
            raise ValueError("map dimension mismatch")
        if abs(sum(self.alphas) - (self.n - self.alpha)) > 1e-12:
            raise ValueError("alpha_1 + ... + alpha_m must equal n - alpha")
        if self.rs is None:
            self.rs = [k.r for k in self.kernels]
        if self.s < 1:
            raise ValueError("s must be >= 1")
        total = sum(0.0 if math.isinf(r) else 1.0 / r for r in self.rs) + 1.0 / self.s
        if abs(total - 1.0) > 1e-12:
            raise ValueError("1/r_1 + ... + 1/r_m + 1/s must equal 1")
        for k, a in zip(self.kernels, self.alphas):
            if k.kind == "power" and abs(k.a - a) > 1e-12:
                raise ValueError("power kernel exponent must equal its alpha_i")
        ok, witness = check_hypothesis_H(self.maps)
        if not ok:
            raise ValueError(f"hypothesis (H) fails at {witness}")

    @property
    def m(self) -> int:
        return len(self.kernels)

    @classmethod
    def power_product(cls, n, alpha, maps, alphas, s=1.0):
        """Power kernels ``|x - A_i y|^{-alpha_i}`` with ``r_i = inf``."""
        ks = [KernelSpec.power(a) for a in alphas]
        return cls(n, alpha, ks, list(maps), list(alphas), None, s)


def _check_budget(grid: Grid, override: bool):
    if not override and grid.size > CELL_BUDGET[grid.n]:
        raise BudgetExceeded(
            f"grid has {grid.size} cells; dense quadrature is capped at {CELL_BUDGET[grid.n]} "
            f"cells for n={grid.n} (pass override_budget=True to force)"
        )


def kernel_rows(spec: OperatorSpec, grid: Grid, points: np.ndarray) -> np.ndarray:
    """Rows ``K(x, y_cell)`` for the given evaluation points, shape ``(P, cells)``."""
    y = grid.centers().reshape(-1, grid.n)
    x = np.asarray(points, dtype=float).reshape(-1, grid.n)
    half = grid.h / 2
    out = np.ones((len(x), len(y)))
    for k, a in zip(spec.kernels, spec.maps):
        ay = y @ a.as_array().T
        diff = x[:, None, :] - ay[None, :, :]
        rho = np.sqrt((diff ** 2).sum(axis=-1))
        near = rho < half * (1 - 1e-12)
        with np.errstate(divide="ignore"):
            val = k(np.where(near, 1.0, rho))
        val = np.where(near, k.ball_average(grid.n, grid.h), val)
        out *= val
    return out


def kernel_matrix(spec: OperatorSpec, grid: Grid, override_budget: bool = False) -> np.ndarray:
    """Dense ``K`` between cell centers (cached on ``spec``)."""
    _check_budget(grid, override_budget)
    key = ("K", grid)
    if key not in spec._cache:
        pts = grid.centers().reshape(-1, grid.n)
        rows = []
        block = max(1, (1 << 22) // len(pts))
        for i in range(0, len(pts), block):
            rows.append(kernel_rows(spec, grid, pts[i:i + block]))
        spec._cache[key] = np.vstack(rows)
    return spec._cache[key]


def apply_T(spec: OperatorSpec, f: GridFunction, override_budget: bool = False) -> GridFunction:
    """Dense cell quadrature of ``T_{alpha,m} f`` at cell centers."""
    if f.grid.n != spec.n:
        raise ValueError("dimension mismatch")
    k = kernel_matrix(spec, f.grid, override_budget)
    v = k @ f.values.ravel() * f.grid.cell_volume
    return GridFunction(f.grid, v.reshape(f.grid.shape))


def apply_T_at(spec: OperatorSpec, f: GridFunction, points: np.ndarray, override_budget: bool = False) -> np.ndarray:
    """``T f`` at arbitrary points."""
    _check_budget(f.grid, override_budget)
    return kernel_rows(spec, f.grid, points) @ f.values.ravel() * f.grid.cell_volume


# ---------------------------------------------------------------- kernel conditions


@dataclass
class KernelConditionReport:
    value: float
    trace: list
    stable: bool
    c_r: float | None = None
    C_r: float | None = None
    note: str = ""

    @property
    def diverging(self) -> bool:
        return not self.stable


def _annulus_samples(n: int, inner: float, outer: float, count: int):
    """Midpoint samples of an annulus with their volume weights."""
    if n == 1:
        edges = np.linspace(inner, outer, count + 1)
        mid = (edges[:-1] + edges[1:]) / 2
        w = np.diff(edges)
        pts = np.concatenate([mid, -mid])[:, None]
        return pts, np.concatenate([w, w])
    nr, nt = count, 4 * count
    re = np.linspace(inner, outer, nr + 1)
    rm = (re[:-1] + re[1:]) / 2
    th = (np.arange(nt) + 0.5) * 2 * np.pi / nt
    R, TH = np.meshgrid(rm, th, indexing="ij")
    pts = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
    w = (np.diff(re ** 2) / 2)[:, None] * np.full(nt, 2 * np.pi / nt)[None, :]
    return pts, w.ravel()


def _ball_volume(n: int, radius: float) -> float:
    return 2 * radius if n == 1 else math.pi * radius ** 2


def annulus_norm(fn, n: int, t: float, r: float, count: int = 256) -> float:
    """``(|B(0,2t)|^-1 ∫_{t<|x|<2t} |fn|^r)^{1/r}``; sup over samples and edges for ``r = inf``."""
    pts, w = _annulus_samples(n, t, 2 * t, count)
    vals = np.abs(fn(pts))
    if math.isinf(r):
        edge = []
        for rad in (t, 2 * t):
            if n == 1:
                edge.append(np.abs(fn(np.array([[rad], [-rad]]))))
            else:
                th = np.linspace(0, 2 * np.pi, 4 * count, endpoint=False)
                edge.append(np.abs(fn(np.stack([rad * np.cos(th), rad * np.sin(th)], axis=-1))))
        return float(max(vals.max(), *(e.max() for e in edge)))
    return float(((vals ** r * w).sum() / _ball_volume(n, 2 * t)) ** (1.0 / r))


def kernel_size_constant(k: KernelSpec, alpha_i: float, r_i: float, t_range, n: int = 1, count: int = 256) -> KernelConditionReport:
    """``sup_t t^{alpha_i} ||k||_{r_i, |x|~t}`` over the dyadic scales in ``t_range``."""
    ts = sorted(float(t) for t in t_range)
    if len(ts) < 3:
        raise ValueError("need at least three scales")
    radial = lambda x: k(np.sqrt((np.asarray(x) ** 2).sum(axis=-1)))
    vals = []
    for t in ts:
        v = annulus_norm(radial, n, t, r_i, count)
        if not np.isfinite(v):
            raise ValueError(f"profile is not evaluable on the annulus at t={t}")
        vals.append(t ** alpha_i * v)
    running = np.maximum.accumulate(vals)
    top = running[-1]
    ref = running[-3]
    stable = bool(top <= ref * 1.01 + 1e-300) if top > 0 else True
    return KernelConditionReport(float(top), [float(v) for v in running], stable, C_r=float(top))


def kernel_hormander_constant(
    k: KernelSpec,
    alpha_i: float,
    r_i: float,
    probes,
    r_factor: float = 2.5,
    m_trunc: int = 12,
    n: int = 1,
    c_r: float = 2.0,
    box_halfwidth: float | None = None,
    count: int = 256,
) -> KernelConditionReport:
    """Partial sums ``sum_m (2^m R)^{alpha_i} ||k(.-x) - k(.)||_{r_i,|y|~2^m R}`` with ``R = r_factor |x|``."""
    if m_trunc < 4:
        raise ValueError("m_trunc must be >= 4")
    if r_factor <= c_r:
        raise ValueError("R must exceed c_r |x|")
    probes = [np.atleast_1d(np.asarray(p, dtype=float)) for p in probes]
    radial = lambda x: k(np.sqrt((np.asarray(x) ** 2).sum(axis=-1)))
    best, best_trace, stable_all = 0.0, [0.0] * m_trunc, True
    for x in probes:
        xn = float(np.sqrt((x ** 2).sum()))
        if xn == 0:
            continue
        R = r_factor * xn
        if box_halfwidth is not None and 2 ** (m_trunc + 1) * R > box_halfwidth:
            raise ValueError("annulus leaves the truncated box; reduce R or m_trunc")
        diff = lambda y, x=x: radial(y - x) - radial(y)
        partial, total = [], 0.0
        for m in range(1, m_trunc + 1):
            t = 2 ** m * R
            total += t ** alpha_i * annulus_norm(diff, n, t, r_i, count)
            partial.append(total)
        inc = partial[-1] - partial[-3]
        stable = total == 0 or inc < 0.01 * total
        stable_all &= stable
        if total >= best:
            best, best_trace = total, partial
    return KernelConditionReport(float(best), [float(v) for v in best_trace], bool(stable_all), c_r=c_r, C_r=float(best))


def weak_type_11_estimate(spec: OperatorSpec, suite, override_budget: bool = False) -> float:
    """``sup λ |{|Tf| > λ}| / ||f||_1`` over the suite and all level values."""
    best = 0.0
    for f in suite:
        l1 = float(np.abs(f.values).sum() * f.grid.cell_volume)
        if l1 == 0:
            continue
        t = np.sort(np.abs(apply_T(spec, f, override_budget).values.ravel()))[::-1]
        counts = np.arange(1, len(t) + 1) * f.grid.cell_volume
        # level just below each sorted value
        best = max(best, float((t * counts).max() / l1))
    return best
