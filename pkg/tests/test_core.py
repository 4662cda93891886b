import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptfdr.core import (ThresholdSurface, compute_fdp_hat, ingest, mask,
                           mirror_conservatism_score)
from adaptfdr.sim import (fuzzy_mlr_pvalue, grid_uniform_pvalues,
                          shifted_bernoulli_pvalues)

from conftest import dyadic


class TestIngest:
    def test_boundary_clamp(self):
        h = ingest([0.0], [[1.0]])
        assert h.pvalues[0] == 1e-15
        h = ingest([1.0], [[1.0]])
        assert h.pvalues[0] == 1.0 - 1e-15

    def test_interior_unchanged(self):
        h = ingest([0.3, 0.7], [[0.0], [1.0]])
        assert np.array_equal(h.pvalues, [0.3, 0.7])

    def test_midpoint_always_revealed_below_half(self):
        h = ingest([0.5], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.45, 1))
        assert m.revealed[0]

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="match"):
            ingest([0.1, 0.2], [[0.0]])

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="0, 1"):
            ingest([1.2], [[0.0]])

    def test_nonfinite_covariate(self):
        with pytest.raises(ValueError, match="finite"):
            ingest([0.1], [[np.nan]])


class TestMask:
    def test_masked_pair_visibility(self):
        # p = 0.01 under s = 0.1: analyst sees only the {0.01, 0.99} pair
        h = ingest([0.01], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 1))
        assert not m.revealed[0]
        assert m.pprime[0] == pytest.approx(0.01)
        assert m.visible[0] == pytest.approx(0.01)
        assert (m.R, m.A) == (1, 0)

    def test_middle_band_revealed(self):
        h = ingest([0.3], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 1))
        assert m.revealed[0] and m.visible[0] == 0.3

    def test_upper_tail_counted_in_a(self):
        h = ingest([0.95], [[0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 1))
        assert not m.revealed[0]
        assert m.A == 1 and m.R == 0
        assert m.pprime[0] == pytest.approx(0.05)

    def test_tie_goes_to_tail(self):
        h = ingest([0.1, 0.9], [[0.0], [0.0]])
        m = mask(h, ThresholdSurface.constant(0.1, 2))
        assert m.R == 1 and m.A == 1

    def test_counts_partition(self):
        rng = np.random.default_rng(0)
        h = ingest(rng.uniform(size=100), rng.normal(size=(100, 2)))
        m = mask(h, ThresholdSurface.constant(0.2, 100))
        assert m.A + m.R + int(m.revealed.sum()) == 100

    def test_masked_serialization_mirror_invariant(self):
        rng = np.random.default_rng(1)
        p = dyadic(rng.uniform(size=50))
        x = rng.normal(size=(50, 2))
        h = ingest(p, x)
        s = ThresholdSurface.constant(0.3, 50)
        m = mask(h, s)
        flipped = np.where(m.masked, 1.0 - p, p)
        m2 = mask(ingest(flipped, x), s)
        assert m.masked_entry_bytes(x) == m2.masked_entry_bytes(x)
        assert np.array_equal(m.revealed, m2.revealed)
        assert np.array_equal(m.visible[m.masked], m2.visible[m2.masked])

    @given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.45),
           st.floats(0.01, 0.45))
    @settings(max_examples=40, deadline=None)
    def test_monotone_refinement(self, seed, s_a, s_b):
        # shrinking the surface only reveals; A and R only shrink
        rng = np.random.default_rng(seed)
        h = ingest(rng.uniform(size=40), rng.normal(size=(40, 1)))
        s_hi, s_lo = max(s_a, s_b), min(s_a, s_b)
        m_hi = mask(h, ThresholdSurface.constant(s_hi, 40))
        m_lo = mask(h, ThresholdSurface.constant(s_lo, 40))
        assert np.all(m_hi.revealed <= m_lo.revealed)
        assert m_lo.A <= m_hi.A and m_lo.R <= m_hi.R


class TestFdpHat:
    def test_paper_figure_counts(self):
        assert compute_fdp_hat(4, 11) == pytest.approx(5 / 11)

    def test_empty(self):
        assert compute_fdp_hat(0, 0) == 1.0

    def test_plain_ratio(self):
        assert compute_fdp_hat(0, 20) == pytest.approx(0.05)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            compute_fdp_hat(-1, 3)

    @given(st.integers(0, 500), st.integers(0, 500))
    @settings(max_examples=60, deadline=None)
    def test_lower_bound(self, a, r):
        assert compute_fdp_hat(a, r) >= 1.0 / max(r, 1)
        if a == 0:
            assert compute_fdp_hat(a, r) == 1.0 / max(r, 1)


class TestMirrorConservatism:
    def test_grid_uniform_passes(self):
        rep = mirror_conservatism_score(grid_uniform_pvalues(37), bins=8,
                                        draws=20000, seed=5)
        assert rep.passes(3.0)

    def test_exact_uniform_passes(self):
        rep = mirror_conservatism_score(lambda n, rng: rng.uniform(size=n),
                                        bins=8, draws=20000, seed=7)
        assert rep.passes(3.0)

    def test_conservative_counterexample_fails(self):
        # conservative but mass at 0.1 has no mirror mass at 0.9
        rep = mirror_conservatism_score(shifted_bernoulli_pvalues(0.1, 0.9),
                                        bins=10, draws=20000, seed=3)
        assert not rep.passes(3.0)
        assert rep.max_violation == pytest.approx(0.1, abs=0.02)
        assert rep.interval[0] <= 0.1 <= rep.interval[1]

    def test_degenerate_sampler_is_legal(self):
        rep = mirror_conservatism_score(lambda n, rng: np.full(n, 0.75),
                                        bins=4, draws=2000, seed=0)
        assert rep.max_violation <= 0.0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            mirror_conservatism_score(grid_uniform_pvalues(5), bins=1)
        with pytest.raises(ValueError):
            mirror_conservatism_score(grid_uniform_pvalues(5), draws=10)


class TestThresholdSurface:
    def test_range_validation(self):
        with pytest.raises(ValueError):
            ThresholdSurface(np.array([0.6]))

    def test_refine_rejects_increase(self):
        s = ThresholdSurface.constant(0.2, 3)
        with pytest.raises(ValueError, match="non-increasing"):
            s.refine(np.array([0.25, 0.1, 0.1]))

    def test_refine_takes_minimum(self):
        s = ThresholdSurface.constant(0.2, 2)
        s2 = s.refine(np.array([0.1, 0.2]))
        assert np.array_equal(s2.values, [0.1, 0.2])
