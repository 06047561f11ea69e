import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsedom.families import lattice_union_family, reference_family
from sparsedom.geometry import Cube, LinearMap
from sparsedom.grid import Grid, GridFunction, Weight, power_weight, pullback
from sparsedom.operators import fractional_maximal
from sparsedom.sparse import SparseFamily
from sparsedom.weights import (
    SKIP_LIMIT,
    CheckResult,
    ExponentSet,
    WeightConstantReport,
    ap_constant,
    appendix_family,
    appendix_property_report,
    apq_constant,
    conjugate,
    conjugate_sigma,
    default_weight_family,
    divergence_flag,
    dyadic_testing_constants,
    family_indicators,
    matrix_apq_constant,
    matrix_sawyer_constant,
    maximal_strong_quotient,
    refinement_trace,
    reports_to_csv,
    sawyer_testing_constant,
    tilde_testing_constants,
)


def _rand_weight(g, seed, low=0.2):
    return Weight(g, low + np.random.default_rng(seed).random(g.shape) * 3)


def _apq_oracle(uq, w, e, family):
    g = family.grid
    best = -math.inf
    for q in family.inside().cubes():
        sl = g.cube_slices(q)
        first = uq[sl].mean() ** (1 / e.q)
        second = (w[sl] ** -e.pp).mean() ** (1 / e.pp) if e.p > 1 else (1 / w[sl]).max()
        best = max(best, first * second)
    return best


def test_exponents():
    assert conjugate(2.0) == 2.0 and conjugate(1.0) == math.inf and conjugate(math.inf) == 1.0
    e = ExponentSet(1, 0.5, 1.5, 6.0, sobolev=True)
    assert e.pp == pytest.approx(3.0) and e.qp == pytest.approx(1.2)
    with pytest.raises(ValueError):
        ExponentSet(1, 0.5, 2.0, 2.0, sobolev=True)
    with pytest.raises(ValueError):
        ExponentSet(1, 0.0, 3.0, 2.0)
    with pytest.raises(ValueError):
        ExponentSet(1, 0.5, 2.0, 2.0, alphas=[0.25, 0.5])


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 2]), st.integers(0, 2 ** 16), st.sampled_from([(1.0, 1.0), (2.0, 2.0), (1.5, 3.0), (2.0, 4.0)]), st.sampled_from(["1", "-1", "2", "1/2"]))
def test_matrix_apq_matches_loop(n, seed, pq, amap):
    g = Grid(n, 0, 3 if n == 1 else 2)
    p, q = pq
    e = ExponentSet(n, 0.0, p, q)
    a = LinearMap.parse(amap) if n == 1 else LinearMap.diag(*[LinearMap.parse(amap).entries[0][0]] * 2)
    w = _rand_weight(g, seed)
    fam = lattice_union_family(g, include_reference=True)
    uq = pullback(Weight(g, w.values ** q), a).values
    rep = matrix_apq_constant(w, a, e, fam)
    assert rep.value == pytest.approx(_apq_oracle(uq, w.values, e, fam), rel=1e-12)
    assert fam.inside().grid.box.contains(rep.argsup)


def test_identity_map_reduces_to_plain_class():
    g = Grid(1, 1, 3)
    w = _rand_weight(g, 1)
    e = ExponentSet(1, 0.0, 2.0, 3.0)
    fam = default_weight_family(g)
    assert matrix_apq_constant(w, LinearMap.identity(1), e, fam).value == apq_constant(w, e, fam).value
    assert ap_constant(Weight(g, np.ones(g.shape)), 2.0, fam).value == pytest.approx(1.0)


@pytest.mark.parametrize("beta", [-0.5, 0.5])
def test_power_weight_a2_constant_limit(beta):
    # intervals with an endpoint at 0 give 1 / ((1 + beta)(1 - beta)) for |x|^beta
    g = Grid(1, 0, 9)
    rep = ap_constant(power_weight(g, beta), 2.0, reference_family(g))
    assert rep.value == pytest.approx(1 / ((1 + beta) * (1 - beta)), rel=2e-2)


def test_zero_cells_are_skipped():
    g = Grid(1, 0, 4)
    v = np.ones(g.shape)
    v[3] = 0.0
    rep = apq_constant(Weight(g, v), ExponentSet(1, 0.0, 2.0, 2.0), reference_family(g))
    assert rep.skipped == g.depth + 1 and not rep.valid
    assert WeightConstantReport(1.0, skipped=1, total=int(1 / SKIP_LIMIT)).valid


def test_divergence_flag_and_traces():
    assert divergence_flag([1.0, 1.5, 2.0])
    assert not divergence_flag([1.0, 1.5, 1.9])
    assert divergence_flag([1.0, 1.0, math.inf])
    with pytest.raises(ValueError):
        divergence_flag([1.0, 2.0])
    e = ExponentSet(1, 0.0, 2.0, 2.0)
    grids = [Grid(1, 1, L) for L in (3, 4, 5, 6, 7)]
    mk = lambda b: (lambda g: power_weight(g, b))
    assert refinement_trace(mk(1.0), e, grids, LinearMap.diag(-1)).diverging
    assert not refinement_trace(mk(0.25), e, grids, LinearMap.diag(-1)).diverging
    rep = refinement_trace(mk(0.25), e, grids[:3])
    text = reports_to_csv({"w": rep})
    assert text.splitlines()[0] == "check,depth,value,argsup,flag" and len(text.splitlines()) == 4


# ------------------------------------------------------------ Sawyer testing


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from([(0.0, 2.0, 2.0), (0.5, 1.5, 6.0), (0.25, 2.0, 4.0)]))
def test_testing_bounded_by_strong_quotient(seed, apq):
    alpha, p, q = apq
    g = Grid(1, 0, 3)
    e = ExponentSet(1, alpha, p, q)
    u, v = _rand_weight(g, seed), _rand_weight(g, seed + 1)
    fam = default_weight_family(g)
    mfam = lattice_union_family(g, include_reference=True)
    t = sawyer_testing_constant(u, v, e, fam, mfam).value
    # ||M(χ_Q v)||_{L^q(u)} / ||χ_Q||_{L^p(v)} dominates the part of the integral over Q
    strong, idx = maximal_strong_quotient(u, v, e, family_indicators(fam), mfam)
    assert idx >= 0
    assert t <= strong * (1 + 1e-12)


def test_sawyer_constant_loop_oracle():
    g = Grid(1, 0, 3)
    e = ExponentSet(1, 0.5, 1.5, 6.0)
    u, v = _rand_weight(g, 3), _rand_weight(g, 4)
    fam = reference_family(g)
    best = 0.0
    for q in fam.cubes():
        sl = g.cube_slices(q)
        chi = np.zeros(g.shape)
        chi[sl] = v.values[sl]
        m = fractional_maximal(GridFunction(g, chi), e.alpha, 1.0, fam).values
        vq = v.values[sl].sum() * g.cell_volume
        best = max(best, vq ** (-1 / e.p) * (np.sum(m[sl] ** e.q * u.values[sl]) * g.cell_volume) ** (1 / e.q))
    assert sawyer_testing_constant(u, v, e, fam).value == pytest.approx(best, rel=1e-12)
    w = _rand_weight(g, 5)
    rep = matrix_sawyer_constant(w, LinearMap.diag(-1), e, fam)
    assert rep.value > 0 and conjugate_sigma(w, ExponentSet(1, 0.0, 2.0, 2.0)).values.shape == g.shape


def _testing_oracle(u, v, e, r, family, where, kind):
    g = family.grid
    cubes = family.cubes()
    cv = g.cell_volume
    best = -math.inf
    for R in cubes:
        sR = g.cube_slices(R)
        vR, uR = v.values[sR].sum() * cv, u.values[sR].sum() * cv
        F = np.zeros(g.shape)
        for Q in cubes:
            if not (Q.contains(R) if where == "out" else R.contains(Q)):
                continue
            sQ = g.cube_slices(Q)
            vQ = v.values[sQ].sum() * cv
            base = float(Q.volume) ** (e.alpha / g.n - 1 / r)
            if kind == "plain":
                F[sQ] += base * (vR if where == "out" else vQ) ** (1 / r)
            else:
                F[sQ] += base * vQ ** (1 / r - 1) * (uR if where == "out" else u.values[sQ].sum() * cv)
        if kind == "plain":
            val = vR ** (-1 / e.p) * (np.sum(F ** e.q * u.values) * cv) ** (1 / e.q)
        else:
            val = uR ** (-1 / e.qp) * (np.sum(F ** e.pp * v.values) * cv) ** (1 / e.pp)
        best = max(best, val)
    return best


@pytest.mark.parametrize("where", ["out", "in"])
@pytest.mark.parametrize("kind", ["plain", "dual"])
def test_dyadic_testing_constants_loop_oracle(where, kind):
    g = Grid(1, 0, 3)
    e = ExponentSet(1, 0.25, 2.0, 4.0)
    u, v = _rand_weight(g, 6), _rand_weight(g, 7)
    fam = reference_family(g)
    rep = dyadic_testing_constants(u, v, e, 1.5, fam, (where, kind))
    assert rep.value == pytest.approx(_testing_oracle(u, v, e, 1.5, fam, where, kind), rel=1e-10)
    with pytest.raises(ValueError):
        dyadic_testing_constants(u, v, e, 4.0, fam)


def test_tilde_testing_constants():
    g = Grid(1, 0, 3)
    e = ExponentSet(1, 0.25, 2.0, 4.0)
    u, v = _rand_weight(g, 8), _rand_weight(g, 9)
    S = SparseFamily(g, reference_family(g).cubes())
    plain, dual = tilde_testing_constants(u, v, 1.0, 0.75, S, e)
    assert plain.value > 0 and dual.value > 0
    empty = tilde_testing_constants(u, v, 1.0, 0.75, SparseFamily(g, []), e)
    assert all(math.isnan(r.value) for r in empty)
    with pytest.raises(ValueError):
        tilde_testing_constants(u, v, 2.0, 0.75, S, e)


# ------------------------------------------------------------ appendix


@pytest.mark.parametrize("amap", ["-1", "2"])
@pytest.mark.parametrize("beta", [0.0, 0.4, -0.4])
def test_appendix_properties_hold(amap, beta):
    g = Grid(1, 1, 3)
    w = power_weight(g, beta)
    res = appendix_property_report(w, LinearMap.parse(amap), 2.0, appendix_family(g), w0=power_weight(g, -0.3), w1=power_weight(g, -0.2))
    for name, r in res.items():
        if r.passed is not None:
            assert r.passed, (name, r.lhs, r.rhs)
    assert ("corollary_involution" in res) == (amap == "-1")
    assert res["propAp(ii)"].passed is None


def test_appendix_detects_violation_and_slack():
    c = CheckResult("x", False, 2.0, 1.0)
    assert c.slack == -1.0
    g = Grid(1, 0, 3)
    with pytest.raises(ValueError):
        appendix_property_report(Weight(g, np.ones(g.shape)), LinearMap.diag(-1), 1.0, appendix_family(g))
