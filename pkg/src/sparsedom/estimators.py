"""Scikit-learn style wrappers.

Each sample is one grid function, flattened to ``grid.size`` values in C order.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .families import lattice_union_family, reference_family
from .geometry import LinearMap
from .grid import Grid, GridFunction, Weight, pullback
from .operators import OperatorSpec, apply_T, composed_maximal
from .sparse import SparseBuildParams, build_sparse_domination
from .weights import ExponentSet, default_weight_family, matrix_apq_constant, sawyer_testing_constant


def _as_map(a, n: int) -> LinearMap:
    if a is None:
        return LinearMap.identity(n)
    if isinstance(a, LinearMap):
        return a
    if isinstance(a, str):
        return LinearMap.parse(a)
    return LinearMap(a)


class _GridMixin:
    def _grid(self) -> Grid:
        return Grid(self.n, self.J, self.L)

    def _check(self, X, nonneg: bool = False) -> np.ndarray:
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        size = self._grid().size
        if X.shape[1] != size:
            raise ValueError(f"expected {size} features (one per grid cell), got {X.shape[1]}")
        if nonneg and np.any(X < 0):
            raise ValueError("inputs must be nonnegative")
        return X

    def _functions(self, X):
        g = self._grid()
        return [GridFunction(g, row.reshape(g.shape)) for row in X]


class FractionalMaximalTransformer(_GridMixin, TransformerMixin, BaseEstimator):
    """``f -> M_{alpha,s} f(A^{-1} x)`` over a shifted-lattice family."""

    def __init__(self, alpha=0.0, s=1.0, n=1, J=2, L=5, A=None, family="lattices"):
        self.alpha = alpha
        self.s = s
        self.n = n
        self.J = J
        self.L = L
        self.A = A
        self.family = family

    def fit(self, X, y=None):
        self._check(X)
        g = self._grid()
        if self.family == "lattices":
            self.family_ = lattice_union_family(g, include_reference=True)
        elif self.family == "dyadic":
            self.family_ = reference_family(g)
        else:
            raise ValueError(f"unknown family {self.family!r}")
        self.map_ = _as_map(self.A, self.n)
        self.n_features_in_ = g.size
        return self

    def transform(self, X):
        check_is_fitted(self, "family_")
        X = self._check(X)
        return np.stack([composed_maximal(f, self.alpha, self.s, self.map_, self.family_).values.ravel() for f in self._functions(X)])


class RoughOperatorTransformer(_GridMixin, TransformerMixin, BaseEstimator):
    """Dense quadrature of ``T_{alpha,m}`` with power kernels ``|x - A_i y|^{-alpha_i}``."""

    def __init__(self, alpha=0.5, alphas=(0.25, 0.25), maps=("-1", "1"), s=1.0, n=1, J=2, L=5, override_budget=False):
        self.alpha = alpha
        self.alphas = alphas
        self.maps = maps
        self.s = s
        self.n = n
        self.J = J
        self.L = L
        self.override_budget = override_budget

    def fit(self, X, y=None):
        self._check(X)
        maps = [_as_map(a, self.n) for a in self.maps]
        self.spec_ = OperatorSpec.power_product(self.n, self.alpha, maps, self.alphas, self.s)
        self.n_features_in_ = self._grid().size
        return self

    def transform(self, X):
        check_is_fitted(self, "spec_")
        X = self._check(X)
        return np.stack([apply_T(self.spec_, f, self.override_budget).values.ravel() for f in self._functions(X)])


class WeightClassEstimator(_GridMixin, BaseEstimator):
    """Matrix weight-class constants of the weights given as samples.

    ``kind='apq'`` gives ``[w]_{A_{A,p,q}}``; ``kind='testing'`` gives the
    Sawyer-type constant ``[w]_{M_{alpha,A,p,q}}``.  ``predict`` returns one
    row per weight and one column per matrix.
    """

    def __init__(self, p=2.0, q=2.0, alpha=0.0, maps=("1",), kind="apq", n=1, J=2, L=5):
        self.p = p
        self.q = q
        self.alpha = alpha
        self.maps = maps
        self.kind = kind
        self.n = n
        self.J = J
        self.L = L

    def fit(self, X, y=None):
        X = self._check(X, nonneg=True)
        if self.kind not in ("apq", "testing"):
            raise ValueError(f"unknown kind {self.kind!r}")
        self.exponents_ = ExponentSet(self.n, self.alpha, self.p, self.q)
        self.maps_ = [_as_map(a, self.n) for a in self.maps]
        self.family_ = default_weight_family(self._grid())
        self.constants_ = self.predict(X)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "family_")
        X = self._check(X, nonneg=True)
        g = self._grid()
        e = self.exponents_
        out = np.zeros((len(X), len(self.maps_)))
        for i, row in enumerate(X):
            w = Weight(g, row.reshape(g.shape))
            for j, a in enumerate(self.maps_):
                if self.kind == "apq":
                    out[i, j] = matrix_apq_constant(w, a, e, self.family_).value
                else:
                    u = Weight(g, pullback(Weight(g, w.values ** e.q), a).values)
                    out[i, j] = sawyer_testing_constant(u, w.power(-e.pp), e, self.family_).value
        return out


class SparseDominationEstimator(_GridMixin, BaseEstimator):
    """Builds one domination certificate per sample; ``predict`` returns the constants."""

    def __init__(self, alpha=0.5, alphas=(0.25, 0.25), maps=("-1", "1"), s=1.0, n=1, J=2, L=5, gamma=1.0):
        self.alpha = alpha
        self.alphas = alphas
        self.maps = maps
        self.s = s
        self.n = n
        self.J = J
        self.L = L
        self.gamma = gamma

    def _spec(self):
        maps = [_as_map(a, self.n) for a in self.maps]
        return OperatorSpec.power_product(self.n, self.alpha, maps, self.alphas, self.s)

    def fit(self, X, y=None):
        X = self._check(X)
        self.spec_ = self._spec()
        params = SparseBuildParams(gamma=self.gamma)
        self.certificates_ = [build_sparse_domination(self.spec_, f, params) for f in self._functions(X)]
        self.constants_ = np.array([c.c for c in self.certificates_])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "certificates_")
        X = self._check(X)
        params = SparseBuildParams(gamma=self.gamma)
        return np.array([build_sparse_domination(self.spec_, f, params).c for f in self._functions(X)])

    def transform(self, X):
        """``c · Σ_j Σ_i A_{S_j} f(A_i^{-1} x)`` per fitted sample (the dominating function)."""
        check_is_fitted(self, "certificates_")
        X = self._check(X)
        if len(X) != len(self.certificates_):
            raise ValueError("transform expects the samples used in fit")
        return np.stack([c.c * c.dominating_sum(f).ravel() for c, f in zip(self.certificates_, self._functions(X))])
