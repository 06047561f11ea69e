import math
from fractions import Fraction

import numpy as np
import pytest

from sparsedom.experiments import (
    COLUMNS,
    ConfigError,
    ExperimentConfig,
    ReportRow,
    all_passed,
    check_row,
    emit_report,
    load_config,
    make_suite,
    origin_cells,
    parse_config,
    read_report,
)
from sparsedom.geometry import Cube, LinearMap
from sparsedom.grid import Grid, GridFunction
from sparsedom.operators import OperatorSpec, apply_T
from sparsedom.scenarios import (
    SCENARIOS,
    default_config,
    level_set_deviation,
    lower_bound_constant,
    operator_quotient,
    predicted_exponent,
    run_scenario,
)
from sparsedom.weights import ExponentSet
from sparsedom.families import lattice_union_family
from sparsedom.grid import power_weight

CONFIG = """
[grid]
n = 1
J = 2
L = 4
refinements = 0, 1, 2
[weight]
kind = power
beta = 1/4
[matrices]
maps = -1 | 1/2 | 2
[exponents]
alpha = 0.5
p = 1.5
q = 6
[tolerances]
spread = 5
"""


# ------------------------------------------------------------ configuration


def test_parse_config_fields():
    cfg = parse_config(CONFIG, "weak-type")
    assert (cfg.n, cfg.J, cfg.L) == (1, 2, 4)
    assert cfg.beta == 0.25 and cfg.weight == "power"
    assert cfg.maps == [LinearMap.diag(-1), LinearMap.diag(Fraction(1, 2)), LinearMap.diag(2)]
    assert cfg.tol["spread"] == 5 and cfg.tol["identity"] == 1e-12
    assert len(cfg.grids()) == 3


@pytest.mark.parametrize(
    "text,msg",
    [
        ("[grid]\nbogus = 1\n", "unknown key"),
        ("[nope]\nx = 1\n", "unknown section"),
        ("[grid]\nJ = two\n", "bad value"),
        ("[grid\n", "section"),
    ],
)
def test_parse_config_rejects(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text, "weights")


def test_load_config_and_weights(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[weight]\nkind = product\nbeta = 0.5\nt = -0.25\n")
    cfg = load_config(str(path), "weights")
    g = Grid(1, 0, 3)
    w = cfg.make_weight(g)
    assert w.values.shape == g.shape and np.all(w.values > 0)
    cfg.weight = "piecewise"
    assert set(np.unique(cfg.make_weight(g, 4.0).values)) == {1.0, 4.0}
    cfg.weight = "nope"
    with pytest.raises(ConfigError):
        cfg.make_weight(g)
    cfg.refinements = [0, 1]
    with pytest.raises(ConfigError):
        cfg.grids()


def test_suite_is_seeded_and_mixed():
    g = Grid(2, 0, 3)
    a, b = make_suite(g, 20, 3), make_suite(g, 20, 3)
    assert len(a) == 20
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    indicators = [f for f in a if set(np.unique(f.values)) <= {0.0, 1.0}]
    assert len(indicators) >= 6
    signed = make_suite(g, 20, 3, signed=True)
    assert len(signed) == 21 and signed[-1].values.min() < 0
    cells = origin_cells(g)
    assert len(cells) == 4 and all(f.values.sum() == 1 for f in cells)


# ------------------------------------------------------------ reports


def test_report_round_trip_and_order(tmp_path):
    rows = [
        check_row("b", "z", 1.0, 2.0, True, 3),
        ReportRow("a", "y", math.inf, "", "measured", note="x,y"),
        check_row("a", "x", 0.1, 0.0, False),
    ]
    text = emit_report(rows, tmp_path / "r.csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert [l.split(",")[1] for l in lines[1:]] == ["x", "y", "z"]
    assert emit_report(list(reversed(rows))) == text
    back = read_report(str(tmp_path / "r.csv"))
    assert [r.status for r in back] == ["fail", "measured", "pass"]
    assert back[1].value == math.inf and back[1].note == "x,y"
    assert not all_passed(back) and all_passed(back[1:])
    with pytest.raises(ValueError):
        ReportRow("a", "b", 1.0, status="maybe")
    with pytest.raises(ValueError):
        read_report("a,b\n1,2\n")


# ------------------------------------------------------------ scenario helpers


def test_registry():
    assert set(SCENARIOS) == {"weak-type", "sawyer", "ejem", "apart", "pointwise", "lattice", "kernels", "weights", "appendix", "comp-sparse", "sparse"}
    with pytest.raises(ConfigError):
        default_config("nope")
    with pytest.raises(ConfigError):
        run_scenario(ExperimentConfig("nope"))


def test_predicted_exponent_values():
    assert predicted_exponent(1, 0.0, 2.0, 2.0, 1.0) == 1.0
    assert predicted_exponent(1, 0.5, 1.5, 6.0, 1.0) == pytest.approx(0.5)
    # ((p/s)'/q)(1 - alpha s/n) wins for small q: p = 2, s = 1, q = 1.5, alpha = 0.25
    assert predicted_exponent(1, 0.25, 2.0, 1.5, 1.0) == pytest.approx(2 / 1.5 * 0.75)


@pytest.mark.parametrize("amap", ["-1", "2", "1/2", "-4"])
def test_level_set_identity_exact(amap):
    g = Grid(1, 1, 4)
    a = LinearMap.parse(amap)
    e = ExponentSet(1, 0.25, 2.0, 4.0)
    fam = lattice_union_family(g, include_reference=True)
    w = power_weight(g, 0.3)
    for f in make_suite(g, 8, 1):
        assert level_set_deviation(f, w, a, e, fam) <= 1e-12


def test_lower_bound_constant_matches_direct_quadrature():
    g = Grid(1, 1, 3)
    spec = OperatorSpec.power_product(1, 0.5, [LinearMap.diag(-1), LinearMap.diag(1)], [0.25, 0.25])
    v = power_weight(g, 0.1).values
    cubes = [Cube((0,), Fraction(1, 2)), Cube((Fraction(-1, 4),), Fraction(1, 4)), Cube((-1,), 1)]
    best = math.inf
    for q in cubes:
        sl = g.cube_slices(q)
        for a in spec.maps:
            ends = sorted(a.inverse.apply((c,))[0] for c in (q.corner[0], q.corner[0] + q.side))
            qi = Cube((ends[0],), ends[1] - ends[0])
            chi = GridFunction.indicator(g, qi).values * v
            t = apply_T(spec, GridFunction(g, chi)).values[sl]
            vb = chi.sum() * g.cell_volume
            best = min(best, t.min() / (float(q.volume) ** (0.5 - 1) * vb))
    assert lower_bound_constant(spec, g, v, cubes) == pytest.approx(best, rel=1e-12)


def test_operator_quotient_is_attained():
    g = Grid(1, 0, 4)
    spec = OperatorSpec.power_product(1, 0.0, [LinearMap.diag(2), LinearMap.diag(Fraction(1, 2))], [0.5, 0.5])
    w = np.where(g.centers()[..., 0] > 0, 3.0, 1.0)
    e = ExponentSet(1, 0.0, 2.0, 2.0)
    val = operator_quotient(spec, g, w, e, [])
    # the top right singular vector realises the norm through apply_T
    from sparsedom.operators import kernel_matrix

    M = w.ravel()[:, None] * kernel_matrix(spec, g) * g.cell_volume / w.ravel()[None, :]
    vec = np.linalg.svd(M)[2][0]
    f = GridFunction(g, (vec / w.ravel()).reshape(g.shape))
    tf = apply_T(spec, f).values
    ratio = np.sqrt(np.sum((tf * w) ** 2) / np.sum((f.values * w) ** 2))
    assert val == pytest.approx(ratio, rel=1e-10)
    suite = make_suite(g, 10, 0)
    assert operator_quotient(spec, g, w, ExponentSet(1, 0.0, 2.0, 3.0), suite) > 0


@pytest.mark.parametrize("scenario", ["pointwise", "kernels", "lattice", "comp-sparse"])
def test_small_scenarios_pass(scenario):
    rows = run_scenario(default_config(scenario))
    assert rows and all_passed(rows)


def test_scenario_config_errors():
    cfg = default_config("ejem")
    cfg.n = 2
    with pytest.raises(ConfigError):
        run_scenario(cfg)
    cfg = default_config("sparse")
    cfg.alphas = [0.5]
    with pytest.raises(ConfigError):
        run_scenario(cfg)
