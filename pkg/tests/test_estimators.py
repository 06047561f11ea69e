import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from sparsedom import (
    FractionalMaximalTransformer,
    Grid,
    GridFunction,
    LinearMap,
    RoughOperatorTransformer,
    SparseDominationEstimator,
    WeightClassEstimator,
    apply_T,
    matrix_apq_constant,
)
from sparsedom.families import lattice_union_family
from sparsedom.operators import OperatorSpec, composed_maximal
from sparsedom.weights import ExponentSet, default_weight_family
from sparsedom.grid import Weight

G = Grid(1, 1, 3)


def _X(rows=3, seed=0):
    return np.random.default_rng(seed).random((rows, G.size))


def test_params_and_clone():
    est = SparseDominationEstimator(gamma=2.0, J=1, L=3)
    assert est.get_params()["gamma"] == 2.0
    c = clone(est.set_params(gamma=3.0))
    assert c.gamma == 3.0 and not hasattr(c, "certificates_")


def test_maximal_transformer_matches_function_api():
    X = _X()
    tr = FractionalMaximalTransformer(alpha=0.5, J=1, L=3, A="-1")
    out = tr.fit_transform(X)
    fam = lattice_union_family(G, include_reference=True)
    f = GridFunction(G, X[1])
    assert np.allclose(out[1], composed_maximal(f, 0.5, 1.0, LinearMap.diag(-1), fam).values.ravel())
    with pytest.raises(ValueError):
        FractionalMaximalTransformer(family="nope", J=1, L=3).fit(X)


def test_operator_transformer_in_pipeline():
    X = _X()
    pipe = make_pipeline(RoughOperatorTransformer(J=1, L=3), FractionalMaximalTransformer(J=1, L=3))
    out = pipe.fit_transform(X)
    assert out.shape == X.shape
    spec = OperatorSpec.power_product(1, 0.5, [LinearMap.diag(-1), LinearMap.diag(1)], [0.25, 0.25])
    direct = apply_T(spec, GridFunction(G, X[0])).values.ravel()
    assert np.allclose(RoughOperatorTransformer(J=1, L=3).fit(X).transform(X[:1])[0], direct)


def test_validation_errors():
    with pytest.raises(NotFittedError):
        FractionalMaximalTransformer(J=1, L=3).transform(_X())
    with pytest.raises(ValueError, match="features"):
        RoughOperatorTransformer(J=1, L=3).fit(np.ones((2, 5)))
    with pytest.raises(ValueError, match="nonnegative"):
        WeightClassEstimator(J=1, L=3).fit(-_X())
    with pytest.raises(ValueError):
        WeightClassEstimator(kind="nope", J=1, L=3).fit(_X())


def test_weight_class_estimator():
    W = 0.5 + _X(2, 3)
    est = WeightClassEstimator(p=2.0, q=2.0, maps=("1", "-1"), J=1, L=3).fit(W)
    assert est.constants_.shape == (2, 2)
    ref = matrix_apq_constant(Weight(G, W[0]), LinearMap.diag(-1), ExponentSet(1, 0.0, 2.0, 2.0), default_weight_family(G)).value
    assert est.constants_[0, 1] == pytest.approx(ref)
    t = WeightClassEstimator(kind="testing", J=1, L=3).fit(W)
    assert np.all(t.constants_ > 0)


def test_sparse_estimator_dominates():
    X = _X(2, 5)
    est = SparseDominationEstimator(J=1, L=3).fit(X)
    assert est.constants_.shape == (2,)
    dom = est.transform(X)
    spec = OperatorSpec.power_product(1, 0.5, [LinearMap.diag(-1), LinearMap.diag(1)], [0.25, 0.25])
    for row, d in zip(X, dom):
        tf = np.abs(apply_T(spec, GridFunction(G, row)).values.ravel())
        assert np.all(tf <= d * (1 + 1e-12))
    assert np.allclose(est.predict(X), est.constants_)
    with pytest.raises(ValueError):
        est.transform(X[:1])
