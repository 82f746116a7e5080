"""Kraskov-Stoegbauer-Grassberger mutual information (algorithm 1, max-norm)."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .digamma import digamma


def _as_2d(a, name):
    a = check_array(np.asarray(a, dtype=np.float64).reshape(len(a), -1), dtype=np.float64, input_name=name)
    return a


def _prepare(a, standardize, jitter, rng):
    if standardize:
        sd = a.std(axis=0)
        a = (a - a.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    if jitter > 0:
        a = a + jitter * rng.standard_normal(a.shape)
    return a


def ksg_mi(X, Y, k: int = 4, standardize: bool = True, jitter: float = 1e-10, seed: int = 0) -> float:
    """Estimate I(X; Y) in nats.

    ``eps_i`` is the max-norm distance from sample ``i`` to its ``k``-th
    neighbour in the joint space; ``n_x``/``n_y`` count marginal neighbours
    strictly closer than ``eps_i``. Ties are broken by seeded jitter.
    """
    X, Y = _as_2d(X, "X"), _as_2d(Y, "Y")
    n = len(X)
    if len(Y) != n:
        raise ValueError(f"X and Y need equal sample counts ({n} != {len(Y)})")
    if n <= k + 1:
        raise ValueError(f"need more than k+1={k + 1} samples, got {n}")
    if np.all(X == X[0]) or np.all(Y == Y[0]):
        raise ValueError("degenerate input: all samples identical")
    rng = np.random.default_rng(seed)
    X = _prepare(X, standardize, jitter, rng)
    Y = _prepare(Y, standardize, jitter, rng)
    joint = np.hstack([X, Y])
    dist, _ = cKDTree(joint).query(joint, k=k + 1, p=np.inf)
    eps = dist[:, k]
    # strict inequality: shrink the radius by one ulp; the self-match is removed
    radius = np.nextafter(eps, 0.0)
    nx = cKDTree(X).query_ball_point(X, radius, p=np.inf, return_length=True) - 1
    ny = cKDTree(Y).query_ball_point(Y, radius, p=np.inf, return_length=True) - 1
    return float(digamma(k) + digamma(n) - np.mean(digamma(nx + 1.0) + digamma(ny + 1.0)))


def marginal_mi(Z, S, k: int = 4, standardize: bool = True, jitter: float = 1e-10, seed: int = 0) -> np.ndarray:
    """``I(Z; S[:, j])`` for every column ``j`` of ``S``."""
    S = _as_2d(S, "S")
    return np.array([ksg_mi(Z, S[:, j], k, standardize, jitter, seed) for j in range(S.shape[1])])


class KSGMutualInformation(BaseEstimator):
    """Estimator wrapper: ``fit(Z, S)`` stores the joint and per-feature MI.

    With ``n_components`` set, ``Z`` is first reduced by PCA.
    """

    def __init__(self, k: int = 4, n_components: Optional[int] = None, standardize: bool = True,
                 jitter: float = 1e-10, random_state: int = 0, feature_names: Optional[Sequence[str]] = None):
        self.k = k
        self.n_components = n_components
        self.standardize = standardize
        self.jitter = jitter
        self.random_state = random_state
        self.feature_names = feature_names

    def fit(self, Z, S):
        from .pca import PCA

        Z = check_array(Z, dtype=np.float64)
        S = _as_2d(S, "S")
        if self.n_components is not None:
            self.pca_ = PCA(self.n_components).fit(Z)
            Z = self.pca_.transform(Z)
        args = (self.k, self.standardize, self.jitter, self.random_state)
        self.mi_ = ksg_mi(Z, S, *args)
        self.marginal_mi_ = marginal_mi(Z, S, *args)
        names = self.feature_names or [f"s{j}" for j in range(S.shape[1])]
        if len(names) != S.shape[1]:
            raise ValueError("feature_names length does not match S")
        self.feature_names_ = list(names)
        return self

    def ranking(self):
        """Feature names ordered by decreasing marginal MI."""
        check_is_fitted(self, "marginal_mi_")
        order = np.argsort(-self.marginal_mi_, kind="stable")
        return [self.feature_names_[j] for j in order]

    def report(self) -> dict:
        check_is_fitted(self, "mi_")
        return {
            "k": self.k,
            "n_components": self.n_components,
            "mi": self.mi_,
            "marginal_mi": dict(zip(self.feature_names_, map(float, self.marginal_mi_))),
            "ranking": self.ranking(),
        }
