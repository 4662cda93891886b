"""Scikit-learn style front door for the thresholding procedure."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .core import ingest
from .engine import AdaptConfig, run_adapt


class AdaptEstimator(BaseEstimator):
    """Covariate-adaptive FDR control with a fit/predict surface.

    ``fit(X, pvalues)`` runs the full protocol (to complete unmasking) so
    that q-values for every target level are available; ``rejections_``
    holds the decision at the configured ``alpha``.

    Parameters mirror the engine configuration; see
    :class:`adaptfdr.engine.AdaptConfig`.

    Attributes
    ----------
    qvalues_ : (n,) ndarray
        Smallest target level at which each hypothesis is rejected.
    rejections_ : (n,) bool ndarray
        Rejection indicators at ``alpha``.
    lfdr_ : (n,) ndarray
        Estimated local FDR at finalization.
    result_ : AdaptResult
        Full protocol output (trace, fits, selection table).
    """

    def __init__(self, alpha=0.1, family="beta_mixture", featurization="auto",
                 selection="bic", s0=0.45, refit_every="auto",
                 em_iterations=10, em_tolerance=1e-6, weighted_mu_fit=False,
                 fitter="glm", strategy="lfdr", seed=0):
        self.alpha = alpha
        self.family = family
        self.featurization = featurization
        self.selection = selection
        self.s0 = s0
        self.refit_every = refit_every
        self.em_iterations = em_iterations
        self.em_tolerance = em_tolerance
        self.weighted_mu_fit = weighted_mu_fit
        self.fitter = fitter
        self.strategy = strategy
        self.seed = seed

    def _config(self):
        return AdaptConfig(
            family=self.family,
            featurization=self.featurization,
            selection=self.selection,
            s0=self.s0,
            refit_every=self.refit_every,
            alpha=None,
            em_iterations=self.em_iterations,
            em_tolerance=self.em_tolerance,
            weighted_mu_fit=self.weighted_mu_fit,
            fitter=self.fitter,
            strategy=self.strategy,
            seed=self.seed,
        )

    def fit(self, X, pvalues):
        h = ingest(pvalues, X)
        self.result_ = run_adapt(h, self._config())
        self.qvalues_ = self.result_.qvalues
        self.lfdr_ = self.result_.lfdr
        rejected = np.zeros(h.n, dtype=bool)
        rejected[self.result_.rejections_at(self.alpha)] = True
        self.rejections_ = rejected
        self.n_features_in_ = h.d
        return self

    def fit_predict(self, X, pvalues):
        return self.fit(X, pvalues).rejections_

    def rejections_at(self, alpha):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before querying rejections")
        rejected = np.zeros(self.qvalues_.shape[0], dtype=bool)
        rejected[self.result_.rejections_at(alpha)] = True
        return rejected
