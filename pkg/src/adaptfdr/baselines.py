"""Reference multiple-testing procedures for power and FDR comparisons."""

from dataclasses import dataclass

import numpy as np

from .core import HypothesisSet, ThresholdSurface, mask
from .validation import check_alpha, check_pvalues


@dataclass(frozen=True)
class BaselineResult:
    method: str
    rejections: np.ndarray
    threshold: float

    @property
    def n_rejections(self) -> int:
        return int(self.rejections.size)


def bh(pvalues, alpha) -> BaselineResult:
    """Benjamini-Hochberg step-up at level alpha."""
    alpha = check_alpha(alpha)
    p = np.asarray(pvalues, dtype=float)
    n = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ok = ranked <= alpha * np.arange(1, n + 1) / n
    if not np.any(ok):
        return BaselineResult("bh", np.empty(0, dtype=int), 0.0)
    k_star = int(np.max(np.flatnonzero(ok))) + 1
    cutoff = float(ranked[k_star - 1])
    return BaselineResult("bh", np.sort(order[:k_star]), cutoff)


def storey_bh(pvalues, alpha, lam: float = 0.5) -> BaselineResult:
    """BH at level alpha / pi0_hat with Storey's null-proportion estimate.

    pi0_hat = (1 + #{p > lam}) / (n (1 - lam)), capped at 1; the adjusted
    level is capped at 1.
    """
    alpha = check_alpha(alpha)
    if not 0.0 < lam < 1.0:
        raise ValueError("lambda must lie in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    n = p.size
    pi0 = min((1.0 + np.count_nonzero(p > lam)) / (n * (1.0 - lam)), 1.0)
    inner = bh(p, min(alpha / pi0, 1.0))
    return BaselineResult("storey_bh", inner.rejections, inner.threshold)


def barber_candes(pvalues, alpha) -> BaselineResult:
    """Largest constant threshold s with (1 + A(s)) / max(R(s), 1) <= alpha.

    Candidates are the observed p' = min(p, 1 - p) values; the estimator
    is piecewise constant between them.  Tail membership at ties uses the
    same closed comparisons as the masking rule, so this coincides with
    the thresholding protocol run with a constant-threshold strategy.
    """
    alpha = check_alpha(alpha)
    p = check_pvalues(pvalues)
    n = p.size
    h = HypothesisSet(covariates=np.zeros((n, 1)), pvalues=p)
    for s in sorted(set(np.minimum(p, 1.0 - p)), reverse=True):
        m = mask(h, ThresholdSurface.constant(s, n))
        if (1.0 + m.A) / max(m.R, 1) <= alpha:
            return BaselineResult("barber_candes",
                                  np.flatnonzero(m.masked & m.in_r), float(s))
    return BaselineResult("barber_candes", np.empty(0, dtype=int), 0.0)
