"""One-parameter exponential families on p-values, mean-parameterized.

Each non-null p-value density has the form

    h(p; mu) = exp(eta(mu) * g(p) - A(mu)),

with sufficient statistic ``g`` chosen so that E[g(p)] = mu.  Two
members are shipped:

* ``beta_mixture``: g(p) = -log(p), h(p; mu) = (1/mu) p^(1/mu - 1).
  Monotone decreasing in p for mu > 1; the uniform member is mu = 1.
* ``gaussian_mixture``: g(p) = Phi^{-1}(1 - p), h(p; mu) =
  exp(mu g(p) - mu^2 / 2) with unit variance.  Uniform member mu = 0.

All mean functions accept scalars or arrays.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr, ndtri

from .validation import P_MIN

# Fitted means are clamped above the uniform member by this margin so the
# density stays strictly decreasing in p (needed to invert level surfaces).
MU_MARGIN = 1e-6


class InvertResult(NamedTuple):
    p: float
    degenerate: bool


@dataclass(frozen=True)
class ExponentialFamily:
    """Spec of one mean-parameterized family; see the module docstring."""

    name: str
    mu_null: float  # mean of the uniform member
    glm_family: str  # response family for the mean-model fit
    glm_link: str  # canonical link for that fit

    @property
    def mu_min(self) -> float:
        """Lower clamp for fitted means (strictly decreasing region)."""
        return self.mu_null + MU_MARGIN

    def clamp_mu(self, mu):
        return np.maximum(mu, self.mu_min)

    def g(self, p):
        raise NotImplementedError

    def eta(self, mu):
        raise NotImplementedError

    def log_partition(self, mu):
        raise NotImplementedError

    def log_h(self, p, mu):
        return self.eta(mu) * self.g(p) - self.log_partition(mu)

    def h(self, p, mu):
        return np.exp(self.log_h(p, mu))

    def h_at_one(self, mu):
        """h(1; mu), taking the p -> 1 limit exactly."""
        raise NotImplementedError

    def inv_h(self, h_target, mu):
        """p in (0, 1) with h(p; mu) = h_target, for mu > mu_null."""
        raise NotImplementedError


class _BetaMixture(ExponentialFamily):
    def g(self, p):
        return -np.log(p)

    def eta(self, mu):
        return 1.0 - 1.0 / np.asarray(mu, dtype=float)

    def log_partition(self, mu):
        return np.log(mu)

    def log_h(self, p, mu):
        mu = np.asarray(mu, dtype=float)
        return (1.0 / mu - 1.0) * np.log(p) - np.log(mu)

    def h_at_one(self, mu):
        return 1.0 / np.asarray(mu, dtype=float)

    def inv_h(self, h_target, mu):
        mu = np.asarray(mu, dtype=float)
        # (1/mu) p^(1/mu - 1) = h  =>  p = (mu h)^(mu / (1 - mu))
        expo = mu / (1.0 - mu)
        return np.exp(expo * np.log(np.asarray(h_target, dtype=float) * mu))


class _GaussianMixture(ExponentialFamily):
    def g(self, p):
        return -ndtri(p)

    def eta(self, mu):
        return np.asarray(mu, dtype=float)

    def log_partition(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 0.5 * mu * mu

    def log_h(self, p, mu):
        mu = np.asarray(mu, dtype=float)
        gp = self.g(p)
        out = mu * gp - 0.5 * mu * mu
        # mu == 0 is the uniform member even where g(p) diverges.
        if np.ndim(out) == 0:
            return 0.0 if mu == 0.0 else float(out)
        return np.where(mu == 0.0, 0.0, out)

    def h_at_one(self, mu):
        mu = np.asarray(mu, dtype=float)
        out = np.where(mu == 0.0, 1.0, 0.0)
        return float(out) if np.ndim(mu) == 0 else out

    def inv_h(self, h_target, mu):
        mu = np.asarray(mu, dtype=float)
        g_star = (np.log(np.asarray(h_target, dtype=float)) + 0.5 * mu * mu) / mu
        return ndtr(-g_star)


BETA_MIXTURE = _BetaMixture(
    name="beta_mixture", mu_null=1.0, glm_family="gamma", glm_link="inverse"
)
GAUSSIAN_MIXTURE = _GaussianMixture(
    name="gaussian_mixture", mu_null=0.0, glm_family="gaussian", glm_link="identity"
)

_FAMILIES = {f.name: f for f in (BETA_MIXTURE, GAUSSIAN_MIXTURE)}


def get_family(name) -> ExponentialFamily:
    if isinstance(name, ExponentialFamily):
        return name
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(_FAMILIES)}")


def density(family, p, mu):
    """Evaluate h(p; mu); raises if mu is below the family's uniform member."""
    family = get_family(family)
    mu_arr = np.asarray(mu, dtype=float)
    if np.any(mu_arr < family.mu_null):
        raise ValueError(
            f"mu must be >= {family.mu_null} for family {family.name}"
        )
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("p must lie in (0, 1)")
    out = family.h(p, mu_arr)
    return float(out) if np.ndim(out) == 0 else out


def mixture_density(family, p, pi1, mu):
    """f(p | x) = pi1 * h(p; mu) + (1 - pi1)."""
    family = get_family(family)
    return pi1 * family.h(p, mu) + (1.0 - pi1)


PI_DEGENERATE = 1e-12
_BISECT_TOL = 1e-12


def invert_mixture_density(family, target_density, pi1, mu, method="auto"):
    """Solve f(p) = target for the mixture f(p) = pi1 h(p; mu) + 1 - pi1.

    The mixture is strictly decreasing in p for mu above the uniform
    member, so the solution is unique.  The result is clamped into
    [P_MIN, 0.5]: targets at or below f(0.5) return the 0.5 cap, targets
    at or above f(P_MIN) return P_MIN.  A pure-null mixture (pi1 ~ 0) is
    flat; it returns the cap with the degenerate flag set.
    """
    family = get_family(family)
    pi1 = float(pi1)
    mu = float(mu)
    target = float(target_density)
    if pi1 <= PI_DEGENERATE:
        return InvertResult(0.5, True)
    if mu <= family.mu_null:
        raise ValueError("mixture is not strictly decreasing at the uniform member")

    def f(p):
        return pi1 * float(family.h(p, mu)) + (1.0 - pi1)

    if target <= f(0.5):
        return InvertResult(0.5, False)
    if target >= f(P_MIN):
        return InvertResult(P_MIN, False)
    if method == "bisect":
        lo, hi = P_MIN, 0.5
        while hi - lo > _BISECT_TOL:
            mid = 0.5 * (lo + hi)
            if f(mid) > target:
                lo = mid
            else:
                hi = mid
        return InvertResult(0.5 * (lo + hi), False)
    h_target = (target - (1.0 - pi1)) / pi1
    p = float(family.inv_h(h_target, mu))
    return InvertResult(min(max(p, P_MIN), 0.5), False)


def invert_mixture_density_vec(family, target_density, pi1, mu):
    """Vectorized closed-form mixture inversion; degenerate entries cap at 0.5."""
    family = get_family(family)
    target = np.asarray(target_density, dtype=float)
    pi1 = np.asarray(pi1, dtype=float)
    mu_c = np.maximum(np.asarray(mu, dtype=float), family.mu_min)
    ok = pi1 > PI_DEGENERATE
    pi_safe = np.where(ok, pi1, 0.5)
    h_target = (target - (1.0 - pi_safe)) / pi_safe
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        p = family.inv_h(np.maximum(h_target, 1e-300), mu_c)
    p = np.where(ok & (h_target > 0.0), p, 0.5)
    p = np.where(np.isfinite(p), p, 0.5)
    f_half = pi1 * family.h(0.5, mu_c) + (1.0 - pi1)
    p = np.where(target <= f_half, 0.5, p)
    return np.clip(p, P_MIN, 0.5)
