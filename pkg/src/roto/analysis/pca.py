"""Principal component analysis via a thin SVD, with a fixed sign convention."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted


class PCA(TransformerMixin, BaseEstimator):
    """Project centred data onto its top ``n_components`` right singular vectors.

    Each component is flipped so that its largest-magnitude entry is positive,
    which makes the fit deterministic across LAPACK builds.

    Attributes
    ----------
    mean_ : (d,) column means of the training data
    components_ : (n_components, d) orthonormal rows
    explained_variance_ : (n_components,) nonincreasing
    explained_variance_ratio_ : (n_components,)
    """

    def __init__(self, n_components: int = 13):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        D = self.n_components
        if D < 1 or D > d:
            raise ValueError(f"n_components={D} must lie in [1, {d}]")
        if n <= D:
            raise ValueError(f"need more samples than components (n={n}, D={D})")
        self.mean_ = X.mean(axis=0)
        _, s, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        comps = vt[:D]
        pivot = np.argmax(np.abs(comps), axis=1)
        signs = np.sign(comps[np.arange(D), pivot])
        signs[signs == 0] = 1.0
        self.components_ = comps * signs[:, None]
        var = s ** 2 / (n - 1)
        self.explained_variance_ = var[:D]
        total = var.sum()
        self.explained_variance_ratio_ = var[:D] / total if total > 0 else np.zeros(D)
        self.n_features_in_ = d
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, scores):
        check_is_fitted(self, "components_")
        return np.asarray(scores, dtype=np.float64) @ self.components_ + self.mean_


def pca_fit_transform(X, n_components: int):
    model = PCA(n_components).fit(X)
    return model, model.transform(X)
