"""Experiment configuration, test-function suites and CSV reports."""
from __future__ import annotations

import configparser
import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .geometry import LinearMap
from .grid import Grid, GridFunction, Weight, power_weight


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _maps(text: str) -> list[LinearMap]:
    return [LinearMap.parse(t) for t in text.split("|") if t.strip()]


def _float(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


SCHEMA = {
    "grid": {"n": int, "J": int, "L": int, "refinements": _ints},
    "weight": {"kind": str, "beta": _float, "t": _float, "center": _floats, "sweep": _floats},
    "matrices": {"maps": _maps, "extra": _maps},
    "exponents": {"alpha": _float, "p": _float, "q": _float, "s": _float, "alphas": _floats, "r": _floats},
    "kernels": {"kind": str, "file": str},
    "suite": {"size": int, "seed": int},
    "tolerances": {"identity": _float, "spread": _float, "variation": _float, "exponent": _float},
}

DEFAULT_TOL = {"identity": 1e-12, "spread": 10.0, "variation": 0.2, "exponent": 0.25}


@dataclass
class ExperimentConfig:
    scenario: str
    n: int = 1
    J: int = 2
    L: int = 5
    refinements: list = field(default_factory=lambda: [0, 1, 2])
    weight: str = "constant"
    beta: float = 0.0
    t: float = 1.0
    center: list | None = None
    sweep: list = field(default_factory=list)
    maps: list = field(default_factory=list)
    extra: list = field(default_factory=list)
    alpha: float = 0.0
    p: float = 2.0
    q: float = 2.0
    s: float = 1.0
    alphas: list = field(default_factory=list)
    r: list = field(default_factory=list)
    kernel: str = "power"
    kernel_file: str | None = None
    suite_size: int = 20
    seed: int = 0
    tol: dict = field(default_factory=lambda: dict(DEFAULT_TOL))

    def grid(self, refine: int = 0) -> Grid:
        return Grid(self.n, self.J, self.L + refine)

    def grids(self) -> list[Grid]:
        if len(self.refinements) < 3:
            raise ConfigError("refinement traces need at least three depths")
        return [self.grid(k) for k in self.refinements]

    def make_weight(self, grid: Grid, param: float | None = None) -> Weight:
        """The configured weight recipe, optionally with its sweep parameter replaced."""
        kind = self.weight
        if kind == "constant":
            return Weight(grid, np.full(grid.shape, self.t if param is None else param))
        if kind == "power":
            beta = self.beta if param is None else param
            return power_weight(grid, beta, self.center)
        if kind == "piecewise":
            t = self.t if param is None else param
            x0 = grid.centers()[..., 0]
            return Weight(grid, np.where(x0 > 0, t, 1.0))
        if kind == "product":
            # |x|^beta |x - center|^t
            beta = self.beta if param is None else param
            c = self.center or [1.0] * grid.n
            a = power_weight(grid, beta).values
            b = power_weight(grid, self.t, c).values
            return Weight(grid, a * b)
        raise ConfigError(f"unknown weight kind {kind!r}")


def parse_config(text: str, scenario: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse sectioned ``key = value`` text on top of ``base``; unknown keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = base or ExperimentConfig(scenario)
    cfg.scenario = scenario
    rename = {("kernels", "kind"): "kernel", ("kernels", "file"): "kernel_file", ("suite", "size"): "suite_size", ("weight", "kind"): "weight"}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                value = SCHEMA[section][key](raw)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
            if section == "tolerances":
                cfg.tol[key] = value
            else:
                setattr(cfg, rename.get((section, key), key), value)
    return cfg


def load_config(path: str, scenario: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), scenario, base)


# ---------------------------------------------------------------- suites


def make_suite(grid: Grid, size: int = 20, seed: int = 0, signed: bool = False) -> list[GridFunction]:
    """Indicators of dyadic cubes, sums of two indicators and seeded random fields.

    With ``signed`` one oscillating-sign field is appended (linearity checks only).
    """
    rng = np.random.default_rng(seed)
    N, n = grid.N, grid.n
    n_ind = max(1, size * 3 // 10)
    n_pair = max(1, size // 5)
    n_rand = max(0, size - n_ind - n_pair)

    def random_cube():
        k = int(rng.integers(1, max(2, N.bit_length() - 2)))
        side = N >> k
        lo = rng.integers(0, N // side, size=n) * side
        v = np.zeros(grid.shape)
        v[tuple(slice(a, a + side) for a in lo)] = 1.0
        return v

    out = [GridFunction(grid, random_cube()) for _ in range(n_ind)]
    out += [GridFunction(grid, random_cube() + random_cube()) for _ in range(n_pair)]
    for _ in range(n_rand):
        mask = random_cube() if rng.random() < 0.5 else np.ones(grid.shape)
        out.append(GridFunction(grid, rng.random(grid.shape) * mask))
    if signed:
        x = grid.centers()[..., 0]
        out.append(GridFunction(grid, np.sin(7 * np.pi * x / float(grid.box.side))))
    return out


def origin_cells(grid: Grid) -> list[GridFunction]:
    """Indicators of the cells touching the origin (cell-scale probes)."""
    N = grid.N
    out = []
    for corner in np.ndindex(*(2,) * grid.n):
        v = np.zeros(grid.shape)
        v[tuple(N // 2 - 1 + c for c in corner)] = 1.0
        out.append(GridFunction(grid, v))
    return out


# ---------------------------------------------------------------- reports

COLUMNS = ["scenario", "quantity", "depth", "value", "target", "status", "note"]
STATUSES = ("pass", "fail", "measured")


@dataclass
class ReportRow:
    scenario: str
    quantity: str
    value: float
    target: float | str = ""
    status: str = "measured"
    depth: int | str = ""
    note: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"bad status {self.status!r}")

    def cells(self) -> list[str]:
        return [self.scenario, self.quantity, str(self.depth), _fmt(self.value), _fmt(self.target), self.status, self.note]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".12g")


def check_row(scenario, quantity, value, target, ok: bool, depth="", note="") -> ReportRow:
    return ReportRow(scenario, quantity, value, target, "pass" if ok else "fail", depth, note)


def emit_report(rows: Sequence[ReportRow], path=None) -> str:
    """Deterministic CSV, rows stably sorted by ``(scenario, quantity)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in sorted(rows, key=lambda r: (r.scenario, r.quantity)):
        w.writerow(row.cells())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_report(source) -> list[ReportRow]:
    text = source if "\n" in str(source) else open(source).read()
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != COLUMNS:
        raise ValueError("not a report file")
    rows = []
    for rec in reader:
        def num(s):
            try:
                return float(s)
            except ValueError:
                return s
        rows.append(ReportRow(rec["scenario"], rec["quantity"], num(rec["value"]), num(rec["target"]), rec["status"], rec["depth"], rec["note"]))
    return rows


def all_passed(rows: Sequence[ReportRow]) -> bool:
    return not any(r.status == "fail" for r in rows)
