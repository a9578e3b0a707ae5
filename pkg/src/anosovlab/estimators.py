"""scikit-learn style wrappers: point clouds in, per-point features or fitted summaries out."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .measures import (DEFAULT_BINS, PatchCoordinates, quotient_from_coordinates, slab_coordinates,
                       uniformity_test, verdict_from_ks)
from .splitting import DEFAULT_DEPTH, compute_splittings, one_step_rates
from .torus_maps import make_map


def _points(X):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != 3:
        raise ValueError(f"expected points with 3 coordinates, got {X.shape[1]}")
    return X


class SplittingTransformer(TransformerMixin, BaseEstimator):
    """Points -> unit vectors of E^s, E^c, E^u and the three one-step rates (12 columns)."""

    def __init__(self, kind="conservative", epsilon=0.1, depth=DEFAULT_DEPTH):
        self.kind = kind
        self.epsilon = epsilon
        self.depth = depth

    def fit(self, X, y=None):
        _points(X)
        if int(self.depth) < 1:
            raise ValueError("depth must be >= 1")
        self.model_ = make_map(self.kind, self.epsilon)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = _points(X)
        frames = compute_splittings(self.model_, X, self.depth)
        cols = [frames[k] for k in ("s", "c", "u")]
        rates = [one_step_rates(self.model_, X, frames[k])[:, None] for k in ("s", "c", "u")]
        return np.hstack(cols + rates)


class NormalFormTransformer(TransformerMixin, BaseEstimator):
    """Lifts near a base point -> (t, s, stable offset) in the normal-form patch of the base.

    Rows outside the patch come back as NaN.
    """

    def __init__(self, kind="conservative", epsilon=0.1, base=(0.1, 0.2, 0.3), t_max=0.6, s_max=1.1,
                 depth=DEFAULT_DEPTH):
        self.kind = kind
        self.epsilon = epsilon
        self.base = base
        self.t_max = t_max
        self.s_max = s_max
        self.depth = depth

    def fit(self, X=None, y=None):
        if X is not None:
            _points(X)
        self.model_ = make_map(self.kind, self.epsilon)
        self.patch_ = PatchCoordinates(self.model_, np.asarray(self.base, dtype=float), self.t_max,
                                       self.s_max, depth=self.depth)
        self.n_features_in_ = 3
        return self

    def transform(self, X):
        check_is_fitted(self, "patch_")
        return self.patch_.locate(_points(X))

    def inverse_transform(self, Z):
        check_is_fitted(self, "patch_")
        Z = check_array(Z, dtype=np.float64)
        return self.patch_.forward(Z[:, 0], Z[:, 1]) + Z[:, 2:3] * self.patch_.e_s


class LeafQuotientEstimator(BaseEstimator):
    """Fits the leaf-wise quotient measure of a point cloud at a base point.

    ``score`` is minus the KS distance from uniform, so higher is more SRB-like.
    """

    def __init__(self, kind="conservative", epsilon=0.1, base=(0.1, 0.2, 0.3), window=(-0.5, 0.5),
                 bins=DEFAULT_BINS, slab=0.1):
        self.kind = kind
        self.epsilon = epsilon
        self.base = base
        self.window = window
        self.bins = bins
        self.slab = slab

    def fit(self, X, y=None):
        X = _points(X)
        lo, hi = self.window
        if not lo < 0 < hi:
            raise ValueError("window must contain 0")
        self.model_ = make_map(self.kind, self.epsilon)
        self.patch_ = PatchCoordinates(self.model_, np.asarray(self.base, dtype=float), t_max=1.2 * max(-lo, hi))
        coords = slab_coordinates(self.patch_, X, self.slab)
        self.quotient_ = quotient_from_coordinates(coords, self.patch_.base, self.window, self.bins)
        self.ks_ = uniformity_test(self.quotient_)
        self.verdict_ = verdict_from_ks(self.ks_)
        return self

    def score(self, X=None, y=None):
        check_is_fitted(self, "quotient_")
        return -self.ks_
