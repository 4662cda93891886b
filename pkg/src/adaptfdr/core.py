"""Domain types and the p-value masking rule.

The masking rule splits hypotheses into a revealed middle band and a
masked tail pair: a p-value is visible to the analyst only when
``s(x_i) < p_i < 1 - s(x_i)``; otherwise the analyst sees the unordered
pair ``{p_i, 1 - p_i}``, i.e. only ``p' = min(p, 1 - p)`` plus a masked
flag.  ``A`` counts masked p-values in the upper tail, ``R`` in the
lower (rejectable) tail, and ``(1 + A) / max(R, 1)`` estimates the false
discovery proportion of the lower tail.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .validation import P_MIN, check_covariates, check_pvalues, readonly


@dataclass(frozen=True)
class HypothesisSet:
    """Immutable covariate / p-value records, plus optional ground truth.

    Attributes
    ----------
    covariates : (n, d) ndarray
        Side-information vectors, one row per hypothesis.
    pvalues : (n,) ndarray
        P-values, clamped into [P_MIN, 1 - P_MIN] at ingestion.
    truth : (n,) bool ndarray or None
        Non-null indicators, available only for simulated data.
    """

    covariates: np.ndarray
    pvalues: np.ndarray
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.covariates.shape[0] != self.pvalues.shape[0]:
            raise ValueError("covariates and pvalues must have equal length")
        if np.any(self.pvalues < P_MIN) or np.any(self.pvalues > 1.0 - P_MIN):
            raise ValueError("pvalues must be pre-clamped; use ingest()")
        if self.truth is not None and self.truth.shape[0] != self.pvalues.shape[0]:
            raise ValueError("truth must have one entry per hypothesis")

    @property
    def n(self) -> int:
        return int(self.pvalues.shape[0])

    @property
    def d(self) -> int:
        return int(self.covariates.shape[1])


def ingest(raw_pvalues, covariates, truth=None) -> HypothesisSet:
    """Validate and normalize raw inputs into a HypothesisSet.

    P-values exactly 0 or 1 are clamped to P_MIN / 1 - P_MIN; covariates
    are stored row-major as a dense float matrix.
    """
    p = check_pvalues(raw_pvalues)
    x = check_covariates(covariates, n_expected=p.shape[0])
    t = None
    if truth is not None:
        t = np.asarray(truth, dtype=bool)
    return HypothesisSet(
        covariates=readonly(x),
        pvalues=readonly(p),
        truth=None if t is None else readonly(t),
    )


@dataclass(frozen=True)
class ThresholdSurface:
    """Rejection threshold evaluated pointwise at the observed covariates.

    The surface is only ever compared against the observed p-values, so a
    pointwise representation is exact.  Updates must be pointwise
    non-increasing, which is enforced by :meth:`refine`.
    """

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if np.any(v < 0.0) or np.any(v > 0.5):
            raise ValueError("threshold values must lie in [0, 0.5]")

    @classmethod
    def constant(cls, s0: float, n: int) -> "ThresholdSurface":
        return cls(readonly(np.full(n, float(s0))))

    def refine(self, proposed) -> "ThresholdSurface":
        """Return min(self, proposed); reject any pointwise increase."""
        proposed = np.asarray(proposed, dtype=float)
        if proposed.shape != self.values.shape:
            raise ValueError("proposed surface has wrong shape")
        if np.any(proposed > self.values + 1e-12):
            raise ValueError("threshold updates must be pointwise non-increasing")
        return ThresholdSurface(readonly(np.minimum(proposed, self.values)))


@dataclass(frozen=True)
class MaskState:
    """Analyst-visible view of the data under a threshold surface.

    ``revealed`` flags the middle band; for masked entries only
    ``pprime = min(p, 1 - p)`` is visible.  ``A`` and ``R`` count the
    upper and lower masked tails.  A p-value tied with a tail boundary is
    masked (closed comparisons); a p-value equal to 0.5 under s = 0.5 is
    assigned to the lower tail so each masked entry contributes to
    exactly one of A and R.
    """

    surface: ThresholdSurface
    revealed: np.ndarray
    pprime: np.ndarray
    visible: np.ndarray
    in_r: np.ndarray
    A: int
    R: int

    @property
    def n(self) -> int:
        return int(self.revealed.shape[0])

    def subset(self, idx) -> "MaskState":
        """Row subset (used for cross-validation folds)."""
        idx = np.asarray(idx)
        low = self.in_r[idx]
        high = self.masked[idx] & ~low
        return MaskState(
            surface=ThresholdSurface(readonly(self.surface.values[idx])),
            revealed=readonly(self.revealed[idx]),
            pprime=readonly(self.pprime[idx]),
            visible=readonly(self.visible[idx]),
            in_r=readonly(low),
            A=int(np.count_nonzero(high)),
            R=int(np.count_nonzero(low)),
        )

    @property
    def masked(self) -> np.ndarray:
        return ~self.revealed

    @property
    def n_masked(self) -> int:
        return self.n - int(np.count_nonzero(self.revealed))

    def masked_entry_bytes(self, covariates: np.ndarray) -> bytes:
        """Canonical serialization of the masked entries.

        Contains only (index, covariates, p') per masked hypothesis, so it
        is invariant under replacing any masked p by its mirror 1 - p.
        """
        idx = np.flatnonzero(self.masked)
        return b"".join(
            [idx.astype(np.int64).tobytes(),
             np.ascontiguousarray(covariates[idx]).tobytes(),
             np.ascontiguousarray(self.pprime[idx]).tobytes()]
        )


def mask(h: HypothesisSet, s: ThresholdSurface) -> MaskState:
    """Apply the masking rule for surface ``s`` to the hypotheses.

    Tail membership is evaluated on the folded scale (p' <= s with
    p' = min(p, 1 - p)) so that thresholds sitting one ulp below a tiny
    p' behave identically for both tails.
    """
    p = h.pvalues
    sv = s.values
    pprime = np.minimum(p, 1.0 - p)
    masked = pprime <= sv
    low = masked & (p <= 0.5)
    revealed = ~masked
    return MaskState(
        surface=s,
        revealed=readonly(revealed),
        pprime=readonly(pprime),
        visible=readonly(np.where(revealed, p, pprime)),
        in_r=readonly(low),
        A=int(np.count_nonzero(masked & ~low)),
        R=int(np.count_nonzero(low)),
    )


def compute_fdp_hat(A: int, R: int) -> float:
    """FDP estimate for the lower masked tail: (1 + A) / max(R, 1)."""
    if A < 0 or R < 0:
        raise ValueError("A and R must be non-negative counts")
    return (1.0 + A) / max(R, 1)


@dataclass(frozen=True)
class MirrorReport:
    """Largest estimated violation of mirror-conservatism over bin pairs."""

    max_violation: float
    se: float
    interval: tuple
    mirror_interval: tuple
    draws: int
    table: np.ndarray = field(repr=False, default=None)

    def passes(self, n_se: float = 3.0) -> bool:
        return self.max_violation <= n_se * max(self.se, 1e-300)


def mirror_conservatism_score(
    sampler: Callable[[int, np.random.Generator], np.ndarray],
    bins: int = 10,
    draws: int = 100_000,
    seed: int = 0,
) -> MirrorReport:
    """Monte Carlo scan for mirror-conservatism violations.

    For every interval [a1, a2] on an equi-spaced grid of [0, 0.5],
    estimates P(p in [a1, a2]) - P(p in [1 - a2, 1 - a1]).  A
    mirror-conservative distribution keeps every such difference <= 0.
    Returns the largest difference together with its Monte Carlo standard
    error and the offending interval.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if draws < 1000:
        raise ValueError("draws must be >= 1000")
    rng = np.random.default_rng(seed)
    p = np.asarray(sampler(draws, rng), dtype=float)
    if p.shape != (draws,):
        raise ValueError("sampler must return one p-value per draw")
    p_sorted = np.sort(p)

    def prob_closed(a, b):
        # P(a <= p <= b) with closed endpoints, exact for atoms.
        lo = np.searchsorted(p_sorted, a, side="left")
        hi = np.searchsorted(p_sorted, b, side="right")
        return (hi - lo) / draws

    edges = np.linspace(0.0, 0.5, bins + 1)
    best = (-np.inf, 0.0, (0.0, 0.0), (0.0, 0.0))
    rows = []
    for i in range(bins + 1):
        for j in range(i + 1, bins + 1):
            a1, a2 = edges[i], edges[j]
            p_low = prob_closed(a1, a2)
            p_high = prob_closed(1.0 - a2, 1.0 - a1)
            diff = p_low - p_high
            var = p_low * (1 - p_low) + p_high * (1 - p_high) + 2 * p_low * p_high
            se = float(np.sqrt(max(var, 0.0) / draws))
            rows.append((a1, a2, diff, se))
            if diff > best[0]:
                best = (diff, se, (a1, a2), (1.0 - a2, 1.0 - a1))
    return MirrorReport(
        max_violation=float(best[0]),
        se=float(best[1]),
        interval=best[2],
        mirror_interval=best[3],
        draws=draws,
        table=np.asarray(rows),
    )
