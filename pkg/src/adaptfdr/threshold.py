"""Local-FDR evaluation and the reveal-one threshold update.

Under the fitted two-groups model the estimated local FDR at (p, x) is

    lfdr(p | x) = f(1 | x) / f(p | x),

with f the mixture density and f(1 | x) standing in for the null weight
(the conservative identification that attributes as much mass as
possible to the null).  Because the non-null density is decreasing in p,
level sets of the local FDR are p-value thresholds, and shrinking the
threshold to the level c just below the largest masked local FDR reveals
exactly the weakest masked hypothesis (or the whole tied group).
"""

from dataclasses import dataclass, field

import numpy as np

from .core import MaskState, ThresholdSurface
from .em import TwoGroupsFit
from .families import get_family, invert_mixture_density_vec
from .validation import readonly

C_MARGIN = 1e-15


class ProtocolComplete(RuntimeError):
    """Raised when an update is requested but nothing is masked."""


@dataclass(frozen=True)
class LfdrProfile:
    """Estimated local FDR at the visible p-value of every hypothesis."""

    lfdr: np.ndarray = field(repr=False)
    masked_flags: np.ndarray = field(repr=False)
    clamp_hits: int = 0

    def max_masked(self) -> float:
        return float(np.max(self.lfdr[self.masked_flags]))


def _mixture_parts(fit: TwoGroupsFit):
    family = get_family(fit.family)
    f_one = fit.pi1 * family.h_at_one(fit.mu) + (1.0 - fit.pi1)
    return family, f_one


def local_fdr(fit: TwoGroupsFit, p: float, i: int) -> float:
    """lfdr estimate for hypothesis ``i`` at p-value ``p``, clamped to (0, 1]."""
    family, f_one = _mixture_parts(fit)
    f_p = fit.pi1[i] * float(family.h(p, fit.mu[i])) + (1.0 - fit.pi1[i])
    return float(min(f_one[i] / f_p, 1.0))


def lfdr_profile(fit: TwoGroupsFit, mask: MaskState) -> LfdrProfile:
    """Vectorized lfdr at each hypothesis's visible p-value.

    Ratios above 1 (possible from round-off near p = 1) are clamped and
    counted.
    """
    family, f_one = _mixture_parts(fit)
    f_p = fit.pi1 * family.h(mask.visible, fit.mu) + (1.0 - fit.pi1)
    raw = f_one / f_p
    hits = int(np.count_nonzero(raw > 1.0))
    return LfdrProfile(
        lfdr=readonly(np.minimum(raw, 1.0)),
        masked_flags=readonly(mask.masked.copy()),
        clamp_hits=hits,
    )


def level_surface(fit: TwoGroupsFit, c: float) -> np.ndarray:
    """Pointwise threshold s(x_i; c): the p where lfdr(p | x_i) = c."""
    family, f_one = _mixture_parts(fit)
    return invert_mixture_density_vec(family, f_one / c, fit.pi1, fit.mu)


def reveal_one_update(s: ThresholdSurface, fit: TwoGroupsFit,
                      mask: MaskState) -> ThresholdSurface:
    """Shrink the surface so the worst masked hypothesis becomes revealed.

    The level c is set a hair below the largest masked lfdr, the new
    surface is min(s, s(.; c)), and the argmax group (all ties within the
    margin) is forced below its own p' so at least one hypothesis leaves
    the masked set even in degenerate numerics.
    """
    if mask.n_masked == 0:
        raise ProtocolComplete("no masked hypotheses remain")
    prof = lfdr_profile(fit, mask)
    c = prof.max_masked() - C_MARGIN
    new_vals = np.minimum(s.values, level_surface(fit, c))
    argmax = mask.masked & (prof.lfdr >= c)
    forced = np.nextafter(mask.pprime[argmax], -np.inf)
    new_vals[argmax] = np.minimum(new_vals[argmax], np.maximum(forced, 0.0))
    return s.refine(new_vals)


def monotone_equivalence_check(fit: TwoGroupsFit, mask: MaskState) -> bool:
    """Verify the ordering shortcut: revealing by lfdr-argmax equals
    revealing by surface inversion.

    For level values c strictly between the observed masked lfdr values,
    the set {masked i : p'_i <= s(x_i; c)} must equal
    {masked i : lfdr_i <= c}.
    """
    if mask.n_masked == 0:
        return True
    prof = lfdr_profile(fit, mask)
    masked = mask.masked
    vals = np.unique(prof.lfdr[masked])
    probes = [max(vals[0] - 0.01, 1e-6), vals[-1] - C_MARGIN, min(vals[-1] + 0.01, 1.0)]
    probes += list(0.5 * (vals[1:] + vals[:-1]))
    for c in probes:
        if c <= 0:
            continue
        s_c = level_surface(fit, c)
        by_surface = mask.pprime[masked] <= s_c[masked]
        by_lfdr = prof.lfdr[masked] <= c
        if not np.array_equal(by_surface, by_lfdr):
            return False
    return True
