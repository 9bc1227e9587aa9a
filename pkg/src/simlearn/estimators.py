"""Scikit-learn style wrappers around the initializer and the sphere trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .chow_pca import InitConfig, chow_matrix, init_tensor_pca, top_left_singular
from .hermite import contract_power
from .links import LinkSpec, make_link
from .sphere_gd import GDConfig, train
from .synth import ArraySampler
from .tensors import fold_rows


class ChowTensorPCA(TransformerMixin, BaseEstimator):
    """Estimate a hidden direction from the degree-``k`` Chow tensor of ``(X, y)``.

    Parameters
    ----------
    k : int, default=2
        Tensor degree; use the information exponent of the link.
    svd : {"auto", "full", "power"}, default="auto"
        Method for the top singular vector of the unfolded matrix.
    power_iters : int, default=200
        Iterations when ``svd="power"``.
    random_state : int, default=0
        Seed for power iteration.
    n_threads : int or None
        Worker threads for moment accumulation.

    Attributes
    ----------
    components_ : ndarray of shape (1, n_features)
        Unit estimate of the direction.  For odd ``k`` its sign makes the
        empirical degree-``k`` correlation with ``y`` non-negative.
    singular_values_ : ndarray of shape (2,)
        Two leading singular values of the unfolded Chow matrix.
    """

    def __init__(self, k=2, svd="auto", power_iters=200, random_state=0, n_threads=None):
        self.k = k
        self.svd = svd
        self.power_iters = power_iters
        self.random_state = random_state
        self.n_threads = n_threads

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        d = X.shape[1]
        M = chow_matrix(X, y, self.k, n_threads=self.n_threads).matrix
        if self.k == 1:
            g = M.ravel()
            s = np.array([np.linalg.norm(g), 0.0])
            u = g / s[0]
        else:
            v, s1, s2 = top_left_singular(M, self.svd, self.power_iters, self.random_state)
            u, _, _ = top_left_singular(fold_rows(v, d), "full")
            s = np.array([s1, s2])
            if self.k % 2 and np.mean(y * contract_power(X, u, self.k)) < 0:
                u = -u
        self.components_ = u[None, :]
        self.singular_values_ = s
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return X @ self.components_.T


class SingleIndexRegressor(RegressorMixin, BaseEstimator):
    """Fit ``y ~ sigma(w . x)`` with a Chow-tensor warm start and sphere SGD.

    Features are assumed standard Gaussian; the link is fixed and known.

    Parameters
    ----------
    link : str, sequence or LinkSpec, default="pure-he2"
        Link name, Hermite coefficients or a prepared :class:`LinkSpec`.
    n_init : int or None
        Rows used by the initializer; all rows by default.
    batch_size : int or None
        Rows per SGD step; all rows (full-batch) by default.
    n_iter : int or None
        SGD steps; the logarithmic default schedule when None.
    eta : float or None
        Step size; ``9 / (40 e k* c_k*)`` when None.
    eps : float, default=0.01
        Target accuracy used by the default schedules.
    random_state : int, default=0
        Seed for row shuffling and power iteration.
    n_threads : int or None
        Worker threads for the heavy reductions.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Unit direction.
    link_ : LinkSpec
    init_report_, train_report_ : reports from the two stages.
    n_iter_ : int
    """

    def __init__(
        self,
        link="pure-he2",
        n_init=None,
        batch_size=None,
        n_iter=None,
        eta=None,
        eps=0.01,
        random_state=0,
        n_threads=None,
    ):
        self.link = link
        self.n_init = n_init
        self.batch_size = batch_size
        self.n_iter = n_iter
        self.eta = eta
        self.eps = eps
        self.random_state = random_state
        self.n_threads = n_threads

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        # a fixed link only fits data drawn from that single-index family
        tags.regressor_tags.poor_score = True
        return tags

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        link = self.link if isinstance(self.link, LinkSpec) else make_link(self.link)
        n = X.shape[0]
        sampler = ArraySampler(X, y, seed=self.random_state)
        icfg = InitConfig(
            eps=self.eps,
            n_override=min(self.n_init or n, n),
            seed=self.random_state,
            holdout=max(1, n // 10),
            n_threads=self.n_threads,
        )
        self.init_report_ = init_tensor_pca(sampler, icfg, link)
        gcfg = GDConfig(
            eta=self.eta,
            T=self.n_iter,
            batch_n=min(self.batch_size or n, n),
            eps=self.eps,
            seed=self.random_state,
            n_threads=self.n_threads,
        )
        self.train_report_ = train(sampler, self.init_report_.w0, gcfg, link)
        self.link_ = link
        self.coef_ = self.train_report_.w_final
        self.n_iter_ = len(self.train_report_.trace)
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False)
        return self.link_(X @ self.coef_)
