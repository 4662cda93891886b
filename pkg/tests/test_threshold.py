import numpy as np
import pytest

from adaptfdr.core import ThresholdSurface, ingest, mask
from adaptfdr.em import TwoGroupsFit, fit_pair
from adaptfdr.families import BETA_MIXTURE
from adaptfdr.glm import Featurization
from adaptfdr.threshold import (ProtocolComplete, lfdr_profile, local_fdr,
                                monotone_equivalence_check, reveal_one_update)

INTERCEPT = (Featurization("subset", indices=()),
             Featurization("subset", indices=()))


def constant_fit(n, pi1, mu, family="beta_mixture"):
    pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
    return TwoGroupsFit(pi1=np.full(n, float(pi1)), mu=np.full(n, float(mu)),
                        theta=np.zeros(1), beta=np.zeros(1), family=family,
                        expected_loglik=float("nan"), pair=pair)


def random_fit(n, seed, family=BETA_MIXTURE):
    rng = np.random.default_rng(seed)
    pair = fit_pair(INTERCEPT, np.zeros((n, 1)))
    return TwoGroupsFit(
        pi1=rng.uniform(0.05, 0.95, size=n),
        mu=family.mu_null + rng.uniform(0.1, 2.5, size=n),
        theta=np.zeros(1), beta=np.zeros(1), family=family.name,
        expected_loglik=float("nan"), pair=pair)


class TestLocalFdr:
    def test_pure_null_is_one(self):
        fit = constant_fit(1, 1e-12, 2.0)
        for p in (0.001, 0.2, 0.9):
            assert local_fdr(fit, p, 0) == pytest.approx(1.0)

    def test_p_equal_one_is_one(self):
        fit = constant_fit(1, 0.5, 2.0)
        assert local_fdr(fit, 1.0 - 1e-15, 0) == pytest.approx(1.0, abs=1e-9)

    def test_derived_value(self):
        # f(1) = 0.75, f(0.04) = 1.75
        fit = constant_fit(1, 0.5, 2.0)
        assert local_fdr(fit, 0.04, 0) == pytest.approx(0.75 / 1.75, abs=1e-12)

    def test_profile_monotone_in_p(self):
        fit = constant_fit(1, 0.4, 2.5)
        vals = [local_fdr(fit, p, 0) for p in np.linspace(0.001, 0.999, 30)]
        assert np.all(np.diff(vals) >= 0)

    def test_profile_clamped_to_unit(self):
        fit = random_fit(50, 1)
        h = ingest(np.random.default_rng(2).uniform(size=50),
                   np.zeros((50, 1)))
        prof = lfdr_profile(fit, mask(h, ThresholdSurface.constant(0.3, 50)))
        assert np.all(prof.lfdr > 0) and np.all(prof.lfdr <= 1.0)


class TestRevealOneUpdate:
    def _setup(self, pvalues, s0=0.3, fit=None, seed=0):
        n = len(pvalues)
        h = ingest(pvalues, np.zeros((n, 1)))
        s = ThresholdSurface.constant(s0, n)
        m = mask(h, s)
        fit = fit if fit is not None else random_fit(n, seed)
        return h, s, m, fit

    def test_reveals_exactly_the_argmax(self):
        # masked p' = 0.25, 0.1, 0.02: the largest lfdr (largest p') goes
        h, s, m, fit = self._setup([0.25, 0.1, 0.02, 0.4],
                                   fit=constant_fit(4, 0.5, 2.0))
        prof = lfdr_profile(fit, m)
        masked_idx = np.flatnonzero(m.masked)
        worst = masked_idx[np.argmax(prof.lfdr[m.masked])]
        s2 = reveal_one_update(s, fit, m)
        m2 = mask(h, s2)
        newly = np.flatnonzero(m.masked & m2.revealed)
        assert np.array_equal(newly, [worst])
        assert m2.n_masked == m.n_masked - 1

    def test_ties_reveal_together(self):
        h, s, m, fit = self._setup([0.2, 0.2, 0.01],
                                   fit=constant_fit(3, 0.5, 2.0))
        s2 = reveal_one_update(s, fit, m)
        m2 = mask(h, s2)
        newly = np.flatnonzero(m.masked & m2.revealed)
        assert np.array_equal(newly, [0, 1])

    def test_single_masked_gets_revealed(self):
        h, s, m, fit = self._setup([0.05, 0.45, 0.6])
        assert m.n_masked == 1
        s2 = reveal_one_update(s, fit, m)
        m2 = mask(h, s2)
        assert m2.n_masked == 0
        assert s2.values[0] < m.pprime[0]

    def test_surface_never_increases(self):
        rng = np.random.default_rng(5)
        h, s, m, fit = self._setup(rng.uniform(size=40), seed=7)
        s2 = reveal_one_update(s, fit, m)
        assert np.all(s2.values <= s.values + 1e-15)

    def test_masked_count_strictly_decreases_until_empty(self):
        rng = np.random.default_rng(9)
        h, s, m, fit = self._setup(rng.uniform(size=30), seed=11)
        count = m.n_masked
        while m.n_masked:
            s = reveal_one_update(s, fit, m)
            m = mask(h, s)
            assert m.n_masked < count
            count = m.n_masked

    def test_terminal_state_raises(self):
        h, s, m, fit = self._setup([0.4, 0.5], s0=0.05)
        assert m.n_masked == 0
        with pytest.raises(ProtocolComplete):
            reveal_one_update(s, fit, m)


class TestMonotoneEquivalence:
    def test_random_fits_pass(self):
        rng = np.random.default_rng(13)
        for seed in range(5):
            n = 100
            h = ingest(rng.uniform(size=n), np.zeros((n, 1)))
            m = mask(h, ThresholdSurface.constant(0.35, n))
            assert monotone_equivalence_check(random_fit(n, seed), m)

    def test_gaussian_family_passes(self):
        from adaptfdr.families import GAUSSIAN_MIXTURE

        rng = np.random.default_rng(17)
        n = 80
        h = ingest(rng.uniform(size=n), np.zeros((n, 1)))
        m = mask(h, ThresholdSurface.constant(0.35, n))
        assert monotone_equivalence_check(random_fit(n, 3, GAUSSIAN_MIXTURE), m)

    def test_empty_masked_trivially_true(self):
        h = ingest([0.5], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 1))
        assert monotone_equivalence_check(constant_fit(1, 0.5, 2.0), m)
