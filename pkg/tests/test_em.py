import numpy as np
import pytest
from dataclasses import replace

from adaptfdr.core import ThresholdSurface, ingest, mask
from adaptfdr.em import (MStepFitter, TwoGroupsFit, e_step,
                         expected_complete_loglik, fit_pair,
                         initial_nonnull_response, initialize, m_step, run_em)
from adaptfdr.families import BETA_MIXTURE, GAUSSIAN_MIXTURE, get_family
from adaptfdr.glm import Featurization

from conftest import two_groups_dataset

INTERCEPT = (Featurization("subset", indices=()),
             Featurization("subset", indices=()))


def brute_force_posterior(family, pi1, mu, p_visible, masked):
    """Enumerate the four (tail, non-null) configurations for one entry.

    The oracle is direct Bayes arithmetic on the joint weights
    w(b, H) = P(H) * f_H(p_b), independent of the log-space shortcut in
    the implementation.
    """
    family = get_family(family)
    if not masked:
        w1 = pi1 * float(family.h(p_visible, mu))
        w0 = (1.0 - pi1) * 1.0
        H = w1 / (w1 + w0)
        return H, float(family.g(p_visible))
    p_lo, p_hi = p_visible, 1.0 - p_visible
    weights = {}
    for b, p_b in ((0, p_lo), (1, p_hi)):
        weights[(b, 1)] = pi1 * float(family.h(p_b, mu))
        weights[(b, 0)] = (1.0 - pi1) * 1.0
    total = sum(weights.values())
    H = (weights[(0, 1)] + weights[(1, 1)]) / total
    y = (weights[(0, 1)] * float(family.g(p_lo))
         + weights[(1, 1)] * float(family.g(p_hi))) / (
             weights[(0, 1)] + weights[(1, 1)])
    return H, y


def make_fit(pi1, mu, family, n):
    pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
    return TwoGroupsFit(
        pi1=np.full(n, pi1), mu=np.full(n, mu), theta=np.zeros(1),
        beta=np.zeros(1), family=family.name if hasattr(family, "name")
        else family, expected_loglik=float("nan"), pair=pair)


class TestEStep:
    def test_masked_uniform_member_reduces_to_prior(self):
        # h == 1 at mu = 1: posterior equals the prior, y is the plain average
        h = ingest([0.2], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.3, 1))
        assert not m.revealed[0]
        fit = make_fit(0.37, 1.0, BETA_MIXTURE, 1)
        H, y = e_step(fit, m)
        assert H[0] == pytest.approx(0.37, abs=1e-12)
        assert y[0] == pytest.approx(0.5 * (-np.log(0.2) - np.log(0.8)),
                                     abs=1e-12)

    def test_revealed_frozen_value(self):
        h = ingest([0.04], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.01, 1))
        assert m.revealed[0]
        fit = make_fit(0.5, 2.0, BETA_MIXTURE, 1)
        H, y = e_step(fit, m)
        assert H[0] == pytest.approx(5 / 7, abs=1e-12)
        assert y[0] == pytest.approx(-np.log(0.04), abs=1e-12)

    def test_masked_frozen_values(self):
        h = ingest([0.04], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 1))
        fit = make_fit(0.5, 2.0, BETA_MIXTURE, 1)
        H, y = e_step(fit, m)
        oracle_H, oracle_y = brute_force_posterior(BETA_MIXTURE, 0.5, 2.0,
                                                   0.04, True)
        assert H[0] == pytest.approx(oracle_H, abs=1e-13)
        assert y[0] == pytest.approx(oracle_y, abs=1e-13)
        assert H[0] == pytest.approx(0.6008, abs=2e-4)
        assert y[0] == pytest.approx(2.680, abs=2e-3)

    @pytest.mark.parametrize("family", [BETA_MIXTURE, GAUSSIAN_MIXTURE])
    def test_matches_brute_force_enumeration(self, family):
        rng = np.random.default_rng(21)
        n = 300
        p = rng.uniform(0.001, 0.999, size=n)
        h = ingest(p, np.zeros((n, 1)))
        m = mask(h, ThresholdSurface.constant(0.25, n))
        pi1 = rng.uniform(0.02, 0.98, size=n)
        mu = family.mu_null + rng.uniform(0.05, 3.0, size=n)
        pair = fit_pair(INTERCEPT, h.covariates)
        fit = TwoGroupsFit(pi1=pi1, mu=mu, theta=np.zeros(1),
                           beta=np.zeros(1), family=family.name,
                           expected_loglik=float("nan"), pair=pair)
        H, y = e_step(fit, m)
        for i in range(n):
            oh, oy = brute_force_posterior(family, pi1[i], mu[i],
                                           float(m.visible[i]),
                                           bool(m.masked[i]))
            assert H[i] == pytest.approx(oh, abs=1e-10)
            assert y[i] == pytest.approx(oy, abs=1e-10)

    def test_gaussian_masked_matches_cosh_tanh_forms(self):
        rng = np.random.default_rng(22)
        p = rng.uniform(0.01, 0.2, size=50)
        h = ingest(p, np.zeros((50, 1)))
        m = mask(h, ThresholdSurface.constant(0.25, 50))
        pi1 = rng.uniform(0.1, 0.9, size=50)
        mu = rng.uniform(0.2, 2.5, size=50)
        fit = TwoGroupsFit(pi1=pi1, mu=mu, theta=np.zeros(1),
                           beta=np.zeros(1), family="gaussian_mixture",
                           expected_loglik=float("nan"),
                           pair=fit_pair(INTERCEPT, h.covariates))
        H, y = e_step(fit, m)
        g = GAUSSIAN_MIXTURE.g(m.pprime)
        H_ref = pi1 * np.cosh(mu * g) / (
            pi1 * np.cosh(mu * g) + (1 - pi1) * np.exp(mu ** 2 / 2))
        y_ref = np.abs(g) * np.tanh(mu * np.abs(g))
        masked = m.masked
        assert np.allclose(H[masked], H_ref[masked], atol=1e-10)
        assert np.allclose(y[masked], y_ref[masked], atol=1e-10)

    def test_masked_invariance_under_mirror_flip(self):
        rng = np.random.default_rng(23)
        from conftest import dyadic

        p = dyadic(rng.uniform(size=80))
        x = rng.normal(size=(80, 1))
        h = ingest(p, x)
        s = ThresholdSurface.constant(0.3, 80)
        m = mask(h, s)
        flipped = np.where(m.masked, 1.0 - p, p)
        m2 = mask(ingest(flipped, x), s)
        fit = make_fit(0.4, 2.3, BETA_MIXTURE, 80)
        H1, y1 = e_step(fit, m)
        H2, y2 = e_step(fit, m2)
        assert np.array_equal(H1, H2)
        assert np.array_equal(y1, y2)


class TestMStep:
    def test_constant_half_gives_zero_theta(self):
        n = 60
        pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
        fit = m_step(np.full(n, 0.5), np.full(n, 1.3), pair, BETA_MIXTURE)
        assert fit.theta[0] == pytest.approx(0.0, abs=1e-8)

    def test_constant_y_gaussian_mean(self):
        n = 50
        pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
        fit = m_step(np.full(n, 0.8), np.full(n, 1.9), pair, GAUSSIAN_MIXTURE)
        assert np.allclose(fit.mu, 1.9, atol=1e-10)

    def test_two_block_saturated_pi(self):
        x = np.repeat([[0.0], [1.0]], 50, axis=0)
        pair = fit_pair((Featurization("identity"), Featurization("identity")), x)
        H = np.repeat([0.9, 0.1], 50)
        fit = m_step(H, np.full(100, 1.5), pair, BETA_MIXTURE)
        assert np.allclose(fit.pi1[:50], 0.9, atol=1e-6)
        assert np.allclose(fit.pi1[50:], 0.1, atol=1e-6)

    def test_mu_clamped_into_domain(self):
        n = 40
        pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
        # responses near zero drag the gamma mean below the valid region
        fit = m_step(np.full(n, 0.5), np.full(n, 0.05), pair, BETA_MIXTURE)
        assert np.all(fit.mu >= BETA_MIXTURE.mu_min)
        assert fit.diagnostics["mu_clamped"] == n


class TestInitialize:
    def test_conservative_response_values(self):
        raw = initial_nonnull_response(np.array([False, True]),
                                       np.full(2, 0.45))
        assert raw[0] == pytest.approx(1.0)
        assert raw[1] == pytest.approx(-9.0)

    def test_nothing_masked_pushes_pi_to_one(self):
        rng = np.random.default_rng(31)
        h = ingest(rng.uniform(0.46, 0.54, size=40), rng.normal(size=(40, 1)))
        m = mask(h, ThresholdSurface.constant(0.45, 40))
        assert m.n_masked == 0
        fit = initialize(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE)
        assert np.all(fit.pi1 >= 1.0 - 1e-5)

    def test_all_masked_pushes_pi_to_zero(self):
        rng = np.random.default_rng(32)
        h = ingest(rng.uniform(0.0, 0.2, size=40), rng.normal(size=(40, 1)))
        m = mask(h, ThresholdSurface.constant(0.45, 40))
        assert m.n_masked == 40
        fit = initialize(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE)
        assert np.all(fit.pi1 <= 1e-5)

    def test_initial_loglik_recorded(self):
        h = two_groups_dataset(n=100, seed=3)
        m = mask(h, ThresholdSurface.constant(0.45, 100))
        fit = initialize(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE)
        assert np.isfinite(fit.expected_loglik)


class TestRunEm:
    def test_infinite_tolerance_runs_one_iteration(self):
        h = two_groups_dataset(n=120, seed=4)
        m = mask(h, ThresholdSurface.constant(0.45, 120))
        fit = run_em(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE,
                     iterations=10, tolerance=float("inf"))
        assert len(fit.trajectory) == 1

    def test_iteration_cap(self):
        h = two_groups_dataset(n=120, seed=5)
        m = mask(h, ThresholdSurface.constant(0.45, 120))
        fit = run_em(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE,
                     iterations=3, tolerance=0.0)
        assert len(fit.trajectory) == 3

    def test_pure_null_estimates_small_pi(self):
        rng = np.random.default_rng(41)
        means = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            p = rng.uniform(size=2000)
            h = ingest(p, rng.uniform(size=(2000, 1)))
            m = mask(h, ThresholdSurface.constant(0.45, 2000))
            fit = run_em(m, fit_pair(INTERCEPT, h.covariates), BETA_MIXTURE)
            means.append(float(np.mean(fit.pi1)))
        assert np.mean(means) <= 0.05

    def test_recovers_generating_parameters_without_masking(self):
        # pi1 = 0.5, mu = 3 data, nothing masked: the exact (weighted)
        # variant is consistent; the robust unweighted default is not
        pi_hats, mu_hats = [], []
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            n = 1500
            truth = rng.uniform(size=n) < 0.5
            u = rng.uniform(size=n)
            p = np.where(truth, u ** 3.0, u)
            h = ingest(p, rng.uniform(size=(n, 1)))
            m = mask(h, ThresholdSurface.constant(0.0, n))
            assert m.n_masked == 0
            init = TwoGroupsFit(
                pi1=np.full(n, 0.3), mu=np.full(n, 2.0), theta=np.zeros(1),
                beta=np.zeros(1), family="beta_mixture",
                expected_loglik=float("nan"),
                pair=fit_pair(INTERCEPT, h.covariates))
            fit = run_em(m, init.pair, BETA_MIXTURE, iterations=30,
                         tolerance=1e-8, init=init,
                         fitter=MStepFitter(weighted_mu=True))
            pi_hats.append(float(np.mean(fit.pi1)))
            mu_hats.append(float(np.mean(fit.mu)))
        assert np.mean(pi_hats) == pytest.approx(0.5, abs=0.1)
        assert np.mean(mu_hats) == pytest.approx(3.0, abs=0.5)

    def test_weighted_m_step_never_decreases_objective(self):
        for seed in range(6):
            h = two_groups_dataset(n=400, seed=seed, pi_base=-1.0,
                                   pi_slope=2.0, mu_slope=2.5)
            m = mask(h, ThresholdSurface.constant(0.45, h.n))
            pair = fit_pair((Featurization("identity"),
                             Featurization("identity")), h.covariates)
            fitter = MStepFitter(weighted_mu=True)
            fit = run_em(m, pair, BETA_MIXTURE, iterations=8,
                         tolerance=0.0, fitter=fitter)
            for pre, post in fit.trajectory:
                assert post >= pre - 1e-8

    def test_expected_loglik_matches_direct_formula(self):
        h = two_groups_dataset(n=150, seed=6)
        m = mask(h, ThresholdSurface.constant(0.45, 150))
        pair = fit_pair(INTERCEPT, h.covariates)
        fit = run_em(m, pair, BETA_MIXTURE, iterations=4)
        H, y = e_step(fit, m)
        assert fit.expected_loglik == pytest.approx(
            expected_complete_loglik(H, y, fit.pi1, fit.mu, BETA_MIXTURE))
