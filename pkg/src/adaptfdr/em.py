"""EM estimation of the two-groups model from partially masked p-values.

The model: each hypothesis is non-null with probability pi1(x) =
expit(theta' phi_pi(x)); non-null p-values follow the exponential-family
density h(p; mu(x)) with mean mu(x) linked to beta' phi_mu(x); null
p-values are uniform.

For masked entries the E-step marginalizes over the four configurations
of (which tail the p-value is in) x (null or non-null); closed forms are
implemented generically in log space from the family's log-density.  The
M-step splits into a fractional-response logistic fit for theta and a
family GLM fit for beta (unweighted by default, which is markedly more
robust when null p-values are only approximately uniform; the weighted
variant is available for A/B use).
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import MaskState
from .families import get_family
from .glm import FittedFeaturization, fit_l1_glm, fit_weighted_glm

PI_EPS = 1e-6


@dataclass(frozen=True)
class FittedPair:
    """Design matrices for the pi1-model and the mu-model."""

    pi: FittedFeaturization
    mu: FittedFeaturization

    @property
    def df(self) -> int:
        return self.pi.df + self.mu.df

    @property
    def label(self) -> str:
        return f"pi:{self.pi.spec.label()} | mu:{self.mu.spec.label()}"


def fit_pair(pair, covariates) -> FittedPair:
    feat_pi, feat_mu = pair
    return FittedPair(pi=feat_pi.fit(covariates), mu=feat_mu.fit(covariates))


@dataclass(frozen=True)
class TwoGroupsFit:
    """Fitted two-groups model, evaluated pointwise at the observed covariates."""

    pi1: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    theta: np.ndarray
    beta: np.ndarray
    family: str
    expected_loglik: float
    pair: FittedPair = field(repr=False)
    trajectory: tuple = ()  # (pre, post) objective per EM stage
    diagnostics: dict = field(default_factory=dict, repr=False)

    @property
    def df(self) -> int:
        return self.pair.df

    @property
    def label(self) -> str:
        return self.pair.label


class EmDivergence(RuntimeError):
    """The tracked EM objective became non-finite."""


def e_step(fit: TwoGroupsFit, mask: MaskState):
    """Posterior quantities given the visible data.

    Returns ``(H_hat, y_hat)``: the posterior non-null probability and the
    posterior mean of the sufficient statistic given non-null.  Revealed
    entries use the plain Bayes update at the observed p; masked entries
    marginalize over the mirror pair {p', 1 - p'}.  All density ratios are
    formed in log space.
    """
    family = get_family(fit.family)
    pi1 = np.clip(fit.pi1, PI_EPS, 1.0 - PI_EPS)
    mu = fit.mu
    v = mask.visible
    rev = mask.revealed

    g1 = family.g(v)
    lh1 = family.log_h(v, mu)
    log_pi = np.log(pi1)
    log_1mpi = np.log1p(-pi1)

    # revealed branch
    num_r = log_pi + lh1
    den_r = np.logaddexp(num_r, log_1mpi)
    H_rev = np.exp(num_r - den_r)

    # masked branch over the mirror pair
    v2 = 1.0 - v
    g2 = family.g(v2)
    lh2 = family.log_h(v2, mu)
    lsum = np.logaddexp(lh1, lh2)
    num_m = log_pi + lsum
    den_m = np.logaddexp(num_m, np.log(2.0) + log_1mpi)
    H_msk = np.exp(num_m - den_m)
    w1 = np.exp(lh1 - lsum)
    y_msk = w1 * g1 + (1.0 - w1) * g2

    H = np.where(rev, H_rev, H_msk)
    y = np.where(rev, g1, y_msk)
    return H, y


def expected_complete_loglik(H, y, pi1, mu, family) -> float:
    """M-step objective: expectation of the complete-data log-likelihood."""
    family = get_family(family)
    pi1 = np.clip(pi1, PI_EPS, 1.0 - PI_EPS)
    term_pi = H * np.log(pi1) + (1.0 - H) * np.log1p(-pi1)
    term_mu = H * (family.eta(mu) * y - family.log_partition(mu))
    return float(np.sum(term_pi) + np.sum(term_mu))


@dataclass
class MStepFitter:
    """Fitting backend for the two M-step regressions.

    ``kind="glm"`` uses plain IRLS fits; ``kind="lasso"`` uses
    L1-penalized fits with the penalty level chosen by cross-validation
    on first use and frozen afterwards (re-tuning at every refit is
    needlessly slow and makes the protocol path harder to audit).
    """

    kind: str = "glm"
    weighted_mu: bool = False
    lambda_grid: Optional[np.ndarray] = None
    cv_folds: int = 5
    seed: int = 0
    lambda_pi: Optional[float] = None
    lambda_mu: Optional[float] = None

    def fit_pi(self, design, response, init=None, unbounded=False):
        if self.kind == "lasso":
            fit = fit_l1_glm(
                design, response, family="binomial", link="logit",
                lambda_grid=self.lambda_grid, cv_folds=self.cv_folds,
                seed=self.seed, fixed_lambda=self.lambda_pi,
                beta_init=init if self.lambda_pi is not None else None,
            )
            if self.lambda_pi is None:
                self.lambda_pi = fit.lambda_
            return fit
        return fit_weighted_glm(design, response, family="binomial", link="logit",
                                beta_init=init, unbounded_response=unbounded)

    def fit_mu(self, design, response, weights, family, init=None):
        glm_family, glm_link = family.glm_family, family.glm_link
        if self.kind == "lasso":
            fit = fit_l1_glm(
                design, response, weights=weights, family=glm_family,
                link=glm_link, lambda_grid=self.lambda_grid,
                cv_folds=self.cv_folds, seed=self.seed + 1,
                fixed_lambda=self.lambda_mu,
                beta_init=init if self.lambda_mu is not None else None,
            )
            if self.lambda_mu is None:
                self.lambda_mu = fit.lambda_
            return fit
        return fit_weighted_glm(design, response, weights=weights,
                                family=glm_family, link=glm_link, beta_init=init)


def m_step(H, y, pair: FittedPair, family, fitter: Optional[MStepFitter] = None,
           prev: Optional[TwoGroupsFit] = None) -> TwoGroupsFit:
    """Refit the two regressions given E-step quantities.

    theta: logistic regression of the fractional responses H on phi_pi.
    beta: family GLM of y on phi_mu, unweighted by default (weights H in
    the weighted variant).  Fitted means are clamped into their domains;
    clamp hits are counted in the diagnostics.
    """
    family = get_family(family)
    fitter = fitter or MStepFitter()
    theta_init = prev.theta if prev is not None else None
    beta_init = prev.beta if prev is not None else None

    fit_pi = fitter.fit_pi(pair.pi.design, np.clip(H, 0.0, 1.0), init=theta_init)
    weights = H if fitter.weighted_mu else None
    if family.glm_family == "gamma":
        y_fit = np.maximum(y, 1e-12)
    else:
        y_fit = y
    fit_mu = fitter.fit_mu(pair.mu.design, y_fit, weights, family, init=beta_init)

    pi1 = np.clip(fit_pi.fitted, PI_EPS, 1.0 - PI_EPS)
    mu_raw = fit_mu.fitted
    mu = family.clamp_mu(mu_raw)
    diagnostics = {
        "mu_clamped": int(np.count_nonzero(mu_raw < family.mu_min)),
        "glm_converged": bool(fit_pi.converged and fit_mu.converged),
        "ridge_fallback": bool(fit_pi.ridge_fallback or fit_mu.ridge_fallback),
    }
    if fitter.kind == "lasso":
        diagnostics["lambda_pi"] = fitter.lambda_pi
        diagnostics["lambda_mu"] = fitter.lambda_mu
    return TwoGroupsFit(
        pi1=pi1,
        mu=mu,
        theta=np.asarray(fit_pi.coefficients, dtype=float),
        beta=np.asarray(fit_mu.coefficients, dtype=float),
        family=family.name,
        expected_loglik=float("nan"),
        pair=pair,
        diagnostics=diagnostics,
    )


def initial_nonnull_response(masked, s0_values):
    """Conservative lower-bound response for pi1 before any model exists.

    With J = 1 for masked entries, 1 - J / (1 - 2 s0) has expectation at
    most pi1.  The values can be far below 0 (e.g. -9 at s0 = 0.45); the
    fractional-logistic fit accepts them as-is and only the fitted
    probabilities are truncated.
    """
    denom = np.maximum(1.0 - 2.0 * np.asarray(s0_values, dtype=float), 1e-12)
    return 1.0 - np.asarray(masked, dtype=float) / denom


def initialize(mask: MaskState, pair: FittedPair, family,
               fitter: Optional[MStepFitter] = None) -> TwoGroupsFit:
    """Initial fit from the masked-indicator regression and imputed p-values.

    pi1: logistic fit to the conservative responses, fitted values
    truncated into the unit interval.
    mu: unweighted family GLM of g(p_visible) on phi_mu, imputing each
    masked p-value by its smaller mirror element.
    """
    family = get_family(family)
    fitter = fitter or MStepFitter()
    jt = initial_nonnull_response(mask.masked, mask.surface.values)
    fit_pi = fitter.fit_pi(pair.pi.design, jt, unbounded=True)
    y0 = family.g(mask.visible)
    if family.glm_family == "gamma":
        y0 = np.maximum(y0, 1e-12)
    fit_mu = fitter.fit_mu(pair.mu.design, y0, None, family)
    fit = TwoGroupsFit(
        pi1=np.clip(fit_pi.fitted, PI_EPS, 1.0 - PI_EPS),
        mu=family.clamp_mu(fit_mu.fitted),
        theta=np.asarray(fit_pi.coefficients, dtype=float),
        beta=np.asarray(fit_mu.coefficients, dtype=float),
        family=family.name,
        expected_loglik=float("nan"),
        pair=pair,
        diagnostics={},
    )
    H0, y0 = e_step(fit, mask)
    ll0 = expected_complete_loglik(H0, y0, fit.pi1, fit.mu, family)
    return replace(fit, expected_loglik=ll0)


def run_em(mask: MaskState, pair: FittedPair, family, iterations: int = 10,
           tolerance: float = 1e-6, fitter: Optional[MStepFitter] = None,
           init: Optional[TwoGroupsFit] = None) -> TwoGroupsFit:
    """Alternate E- and M-steps from the conservative initialization.

    Stops after ``iterations`` stages or when the relative change of the
    maximized M-step objective drops below ``tolerance``.  Each stage
    records the objective at the previous and the new parameters (both
    under that stage's E-step posterior); with weighted M-steps the new
    value can never be below the old one beyond IRLS round-off.
    """
    family = get_family(family)
    fitter = fitter or MStepFitter()
    fit = init if init is not None else initialize(mask, pair, family, fitter)
    ll_prev = fit.expected_loglik
    trajectory = []
    for _ in range(max(int(iterations), 1)):
        H, y = e_step(fit, mask)
        pre = expected_complete_loglik(H, y, fit.pi1, fit.mu, family)
        new_fit = m_step(H, y, pair, family, fitter, prev=fit)
        post = expected_complete_loglik(H, y, new_fit.pi1, new_fit.mu, family)
        trajectory.append((pre, post))
        if not np.isfinite(post):
            raise EmDivergence("expected complete-data log-likelihood is not finite")
        fit = new_fit
        if np.isfinite(ll_prev):
            rel = abs(post - ll_prev) / (abs(ll_prev) + 0.1)
            if rel < tolerance:
                ll_prev = post
                break
        ll_prev = post
    H, y = e_step(fit, mask)
    ll_final = expected_complete_loglik(H, y, fit.pi1, fit.mu, family)
    return replace(fit, expected_loglik=ll_final, trajectory=tuple(trajectory))


def predict_on(fit: TwoGroupsFit, pair: FittedPair, idx) -> TwoGroupsFit:
    """Evaluate a fitted model on a row subset via its coefficient vectors."""
    family = get_family(fit.family)
    design_pi = pair.pi.design[idx]
    design_mu = pair.mu.design[idx]
    pi1 = np.clip(expit(design_pi @ fit.theta), PI_EPS, 1.0 - PI_EPS)
    from .glm import _links  # local import: link inversion only

    inv, *_ = _links(family.glm_family, family.glm_link)
    mu = family.clamp_mu(inv(design_mu @ fit.beta))
    return replace(fit, pi1=pi1, mu=mu)


class CandidateFit:
    """One featurization candidate fitted by a full EM pass.

    Exposes the pieces featurization selection needs: the model degrees
    of freedom, the expected complete-data log-likelihood on any row
    subset, and the fit itself for reuse.
    """

    def __init__(self, fit: TwoGroupsFit, pair: FittedPair, mask: MaskState):
        self.fit = fit
        self.pair = pair
        self._mask = mask

    @property
    def df(self) -> int:
        return self.pair.df

    @property
    def label(self) -> str:
        return self.pair.label

    def expected_loglik(self, idx=None) -> float:
        if idx is None:
            return self.fit.expected_loglik
        sub_mask = self._mask.subset(idx)
        sub_fit = predict_on(self.fit, self.pair, idx)
        sub_fit = replace(sub_fit, pair=self.pair)
        H, y = e_step(sub_fit, sub_mask)
        return expected_complete_loglik(H, y, sub_fit.pi1, sub_fit.mu, self.fit.family)


def make_candidate_fitter(mask: MaskState, covariates, family, iterations=10,
                          tolerance=1e-6, fitter_config=None):
    """Closure fitting one candidate pair with one EM pass, optionally on a fold."""

    def fitter(candidate, train_idx=None):
        pair = fit_pair(candidate, covariates)
        cfg = fitter_config or MStepFitter()
        if train_idx is None:
            fit = run_em(mask, pair, family, iterations, tolerance, cfg)
            return CandidateFit(fit, pair, mask)
        sub_pair = FittedPair(
            pi=FittedFeaturization(pair.pi.spec, pair.pi.design[train_idx],
                                   pair.pi.df, pair.pi.breakpoints),
            mu=FittedFeaturization(pair.mu.spec, pair.mu.design[train_idx],
                                   pair.mu.df, pair.mu.breakpoints),
        )
        fit = run_em(mask.subset(train_idx), sub_pair, family, iterations,
                     tolerance, cfg)
        return CandidateFit(replace(fit, pair=pair), pair, mask)

    return fitter
