import numpy as np
import pytest
from scipy.integrate import quad

from adaptfdr.families import (BETA_MIXTURE, GAUSSIAN_MIXTURE, density,
                               get_family, invert_mixture_density,
                               invert_mixture_density_vec, mixture_density)


class TestDensity:
    def test_beta_uniform_member(self):
        for p in (0.01, 0.4, 0.97):
            assert density(BETA_MIXTURE, p, 1.0) == pytest.approx(1.0)

    def test_beta_exact_point(self):
        assert density(BETA_MIXTURE, 0.25, 2.0) == pytest.approx(1.0)

    def test_gaussian_null_member(self):
        for p in (0.05, 0.5, 0.9):
            assert density(GAUSSIAN_MIXTURE, p, 0.0) == pytest.approx(1.0)

    def test_mu_below_domain_rejected(self):
        with pytest.raises(ValueError, match="mu"):
            density(BETA_MIXTURE, 0.3, 0.5)
        with pytest.raises(ValueError, match="mu"):
            density(GAUSSIAN_MIXTURE, 0.3, -0.5)

    def test_p_outside_open_interval_rejected(self):
        with pytest.raises(ValueError):
            density(BETA_MIXTURE, 0.0, 2.0)

    @pytest.mark.parametrize("family", [BETA_MIXTURE, GAUSSIAN_MIXTURE])
    def test_normalization_by_quadrature(self, family):
        rng = np.random.default_rng(42)
        mus = family.mu_null + rng.uniform(0.05, 3.0, size=20)
        for mu in mus:
            total, _ = quad(lambda p: family.h(p, mu), 0.0, 1.0, limit=200)
            assert total == pytest.approx(1.0, abs=1e-6)

    @pytest.mark.parametrize("family", [BETA_MIXTURE, GAUSSIAN_MIXTURE])
    def test_mean_identity(self, family):
        # E[g(p)] under h(.; mu) equals mu
        rng = np.random.default_rng(7)
        mus = family.mu_null + rng.uniform(0.1, 2.5, size=6)
        for mu in mus:
            val, _ = quad(lambda p: family.g(p) * family.h(p, mu), 0.0, 1.0,
                          limit=300)
            assert val == pytest.approx(mu, abs=1e-6)

    @pytest.mark.parametrize("family", [BETA_MIXTURE, GAUSSIAN_MIXTURE])
    def test_strictly_decreasing_above_null(self, family):
        mu = family.mu_null + 0.8
        ps = np.linspace(0.01, 0.99, 40)
        vals = family.h(ps, mu)
        assert np.all(np.diff(vals) < 0)

    def test_h_at_one_limits(self):
        assert BETA_MIXTURE.h_at_one(2.0) == pytest.approx(0.5)
        assert GAUSSIAN_MIXTURE.h_at_one(1.3) == 0.0
        assert GAUSSIAN_MIXTURE.h_at_one(0.0) == 1.0


class TestInvertMixtureDensity:
    def test_derived_beta_point(self):
        # f(p) = 0.5 * (1/2) p^{-1/2} + 0.5 = 1.75  =>  p = 0.04
        res = invert_mixture_density(BETA_MIXTURE, 1.75, 0.5, 2.0)
        assert not res.degenerate
        assert res.p == pytest.approx(0.04, abs=1e-9)

    def test_whole_interval_level_caps_at_half(self):
        # target f(1): the level set is the whole interval; cap at 0.5
        target = mixture_density(BETA_MIXTURE, 1.0 - 1e-12, 0.5, 2.0)
        res = invert_mixture_density(BETA_MIXTURE, float(target), 0.5, 2.0)
        assert res.p == 0.5

    def test_pure_null_degenerate(self):
        res = invert_mixture_density(BETA_MIXTURE, 1.2, 0.0, 2.0)
        assert res.degenerate and res.p == 0.5

    def test_huge_target_caps_at_floor(self):
        res = invert_mixture_density(BETA_MIXTURE, 1e300, 0.5, 2.0)
        assert res.p == pytest.approx(1e-15)

    @pytest.mark.parametrize("family,mu", [(BETA_MIXTURE, 2.0),
                                           (GAUSSIAN_MIXTURE, 1.5)])
    def test_right_inverse(self, family, mu):
        rng = np.random.default_rng(3)
        for _ in range(25):
            pi1 = rng.uniform(0.05, 0.95)
            p0 = rng.uniform(1e-6, 0.499)
            target = float(mixture_density(family, p0, pi1, mu))
            res = invert_mixture_density(family, target, pi1, mu)
            back = float(mixture_density(family, res.p, pi1, mu))
            assert back == pytest.approx(target, abs=1e-9)

    @pytest.mark.parametrize("family,mu", [(BETA_MIXTURE, 2.5),
                                           (GAUSSIAN_MIXTURE, 1.2)])
    def test_bisection_matches_closed_form(self, family, mu):
        rng = np.random.default_rng(9)
        for _ in range(10):
            pi1 = rng.uniform(0.1, 0.9)
            p0 = rng.uniform(1e-4, 0.49)
            target = float(mixture_density(family, p0, pi1, mu))
            closed = invert_mixture_density(family, target, pi1, mu)
            bis = invert_mixture_density(family, target, pi1, mu,
                                         method="bisect")
            assert closed.p == pytest.approx(bis.p, abs=1e-9)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(11)
        pi1 = rng.uniform(0.1, 0.9, size=30)
        mu = 1.2 + rng.uniform(0.0, 2.0, size=30)
        p0 = rng.uniform(1e-5, 0.49, size=30)
        target = mixture_density(BETA_MIXTURE, p0, pi1, mu)
        vec = invert_mixture_density_vec(BETA_MIXTURE, target, pi1, mu)
        for i in range(30):
            scalar = invert_mixture_density(BETA_MIXTURE, float(target[i]),
                                            float(pi1[i]), float(mu[i]))
            assert vec[i] == pytest.approx(scalar.p, abs=1e-12)

    def test_get_family_unknown(self):
        with pytest.raises(ValueError, match="unknown family"):
            get_family("cauchy")
