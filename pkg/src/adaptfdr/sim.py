"""Data generators, scoring, and small exhaustive checks for the theory.

Two synthetic benchmarks ship: a two-dimensional grid with a geometric
non-null region and one-sided normal tests, and a 100-dimensional sparse
logistic / truncated-linear design whose non-null p-values follow the
beta-mixture family.  Both are pure functions of (parameters, seed).
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr

from .core import HypothesisSet, ingest

GRID_SIDE = 50
GRID_EXTENT = 100.0
SIGNAL_MEAN = 2.0

# Non-null region geometry for the 2-d benchmark (the shapes only set
# problem difficulty): disc of radius 30 at the origin; ellipse with
# semi-axes (50, 20) rotated 30 degrees; ring spanning radii 40..55.
CIRCLE_RADIUS = 30.0
ELLIPSE_AXES = (50.0, 20.0)
ELLIPSE_ANGLE = math.pi / 6
RING_RADII = (40.0, 55.0)


@dataclass(frozen=True)
class Scenario:
    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def generate(self) -> HypothesisSet:
        if self.name.startswith("example1"):
            case = self.name.split("-", 1)[1] if "-" in self.name else \
                self.params.get("case", "circle")
            return generate_example1(case=case, seed=self.seed, **{
                k: v for k, v in self.params.items() if k in ("grid_side",)})
        if self.name == "example2":
            kwargs = {k: v for k, v in self.params.items() if k in ("n", "d")}
            return generate_example2(seed=self.seed, **kwargs)
        raise ValueError(f"unknown scenario {self.name!r}")


def _region_mask(case, x1, x2):
    if case == "circle":
        return x1 ** 2 + x2 ** 2 <= CIRCLE_RADIUS ** 2
    if case == "ellipse":
        c, s = math.cos(ELLIPSE_ANGLE), math.sin(ELLIPSE_ANGLE)
        u = c * x1 + s * x2
        v = -s * x1 + c * x2
        a, b = ELLIPSE_AXES
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if case == "ring":
        r2 = x1 ** 2 + x2 ** 2
        return (RING_RADII[0] ** 2 <= r2) & (r2 <= RING_RADII[1] ** 2)
    if case == "null":
        return np.zeros_like(x1, dtype=bool)
    raise ValueError(f"unknown region case {case!r}")


def generate_example1(case="circle", grid_side=GRID_SIDE, seed=0) -> HypothesisSet:
    """Equi-spaced grid over [-100, 100]^2 with one-sided normal p-values.

    Non-null z-scores are shifted by 2; p = 1 - Phi(z), so non-null
    p-values follow the unit-variance gaussian mixture family exactly.
    """
    axis = np.linspace(-GRID_EXTENT, GRID_EXTENT, grid_side)
    x1, x2 = np.meshgrid(axis, axis, indexing="ij")
    x1, x2 = x1.ravel(), x2.ravel()
    truth = _region_mask(case, x1, x2)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(x1.size) + SIGNAL_MEAN * truth
    p = 1.0 - ndtr(z)
    return ingest(p, np.column_stack([x1, x2]), truth=truth)


def example2_intercept(covariates, theta, target=0.3, tol=1e-10) -> float:
    """Intercept making the average non-null prior hit ``target`` exactly."""
    lin = covariates @ theta

    def gap(theta0):
        return float(np.mean(expit(theta0 + lin)) - target)

    return float(brentq(gap, -60.0, 60.0, xtol=tol))


def generate_example2(n=3000, d=100, seed=0, target_pi=0.3) -> HypothesisSet:
    """Sparse 100-dimensional design with beta-mixture non-null p-values.

    theta = (3, 3, 0, ...) on the logistic scale with the intercept
    solved so mean(pi1) = 0.3; mu = max(x' beta, 1) with beta = (2, 2,
    0, ...).  Non-null p-values are U^mu, so E[-log p] = mu.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, d))
    theta = np.zeros(d)
    theta[:2] = 3.0
    beta = np.zeros(d)
    beta[:2] = 2.0
    theta0 = example2_intercept(x, theta, target=target_pi)
    pi1 = expit(theta0 + x @ theta)
    mu = np.maximum(x @ beta, 1.0)
    truth = rng.uniform(size=n) < pi1
    u = rng.uniform(size=n)
    p = np.where(truth, u ** mu, u)
    return ingest(p, x, truth=truth)


def score(rejections, truth):
    """Realized FDP and power of a rejection set against ground truth.

    FDP is 0 for an empty rejection set; power is NaN when there are no
    non-nulls to detect.
    """
    truth = np.asarray(truth, dtype=bool)
    rej = np.zeros(truth.size, dtype=bool)
    rej[np.asarray(rejections, dtype=int)] = True
    n_rej = int(np.count_nonzero(rej))
    n_signal = int(np.count_nonzero(truth))
    fdp = float(np.count_nonzero(rej & ~truth)) / n_rej if n_rej else 0.0
    power = float(np.count_nonzero(rej & truth)) / n_signal if n_signal else float("nan")
    return fdp, power


# ---------------------------------------------------------------------------
# Exhaustive check of the Bernoulli super-martingale bound


@dataclass(frozen=True)
class Lemma2Report:
    lhs: float
    bound: float
    holds: bool


def _measurable_state(c_t, b, u_t, outside):
    """The information a shrink rule may legally use."""
    return {
        "candidates": tuple(sorted(c_t)),
        "revealed": {i: int(b[i]) for i in outside},
        "hidden_sum": int(u_t),
    }


def _rule_drop_max(state):
    return set(state["candidates"][:-1])


def _rule_drop_by_hidden_sum(state):
    cand = state["candidates"]
    k = state["hidden_sum"] % len(cand)
    return set(cand[:k] + cand[k + 1:])


def _rule_drop_half(state):
    cand = state["candidates"]
    keep = len(cand) // 2
    return set(cand[:keep])


def _rule_parity_directed(state):
    cand = state["candidates"]
    if sum(state["revealed"].values()) % 2 == 0:
        return set(cand[1:])
    return set(cand[:-1])


SHRINK_RULES = {
    "drop_max": (_rule_drop_max, False),
    "drop_by_hidden_sum": (_rule_drop_by_hidden_sum, False),
    "drop_half": (_rule_drop_half, False),
    "parity_directed": (_rule_parity_directed, False),
    # a rule that would peek at individual hidden bits; registered only so
    # the checker can demonstrate the rejection path
    "peek_hidden": (None, True),
}


def _stop_hidden_sum_le(limit):
    def stop(state):
        return state["hidden_sum"] <= limit
    return stop


def _stop_size_le(limit):
    def stop(state):
        return len(state["candidates"]) <= limit
    return stop


STOPPING_RULES = {
    "sum_le_0": _stop_hidden_sum_le(0),
    "sum_le_1": _stop_hidden_sum_le(1),
    "size_le_1": _stop_size_le(1),
    "never": lambda state: False,
}


def lemma2_check(n: int, rho, rule: str, stopping: str,
                 c0: Optional[set] = None) -> Lemma2Report:
    """Exhaustively verify E[(1 + |C|) / (1 + sum b over C)] <= 1 / rho.

    Enumerates all 2^n outcomes of independent Bernoulli(rho) bits, runs
    the named shrink rule until the named stopping rule fires (or the
    candidate set empties), and computes the expectation in exact
    rational arithmetic.  Rules see only the candidate set, the bits
    outside it, and the sum of bits inside it; a rule flagged as peeking
    at individual hidden bits is rejected.
    """
    if n > 12:
        raise ValueError("exhaustive enumeration is limited to n <= 12")
    rule_fn, peeks = SHRINK_RULES[rule]
    if peeks:
        raise ValueError(f"rule {rule!r} is not measurable: it references "
                         "hidden bits of candidate hypotheses individually")
    stop_fn = STOPPING_RULES[stopping]
    rho_frac = Fraction(rho).limit_denominator(10**9)
    if not 0 < rho_frac <= 1:
        raise ValueError("rho must lie in (0, 1]")
    start = frozenset(range(n)) if c0 is None else frozenset(c0)

    total = Fraction(0)
    for bits in range(2 ** n):
        b = [(bits >> i) & 1 for i in range(n)]
        weight = Fraction(1)
        for bi in b:
            weight *= rho_frac if bi else (1 - rho_frac)
        c_t = set(start)
        for _ in range(n + 1):
            outside = [i for i in range(n) if i not in c_t]
            u_t = sum(b[i] for i in c_t)
            state = _measurable_state(c_t, b, u_t, outside)
            if stop_fn(state) or not c_t:
                break
            nxt = rule_fn(state)
            if not nxt < c_t:
                nxt = set(list(sorted(c_t))[:-1])  # force strict shrinkage
            c_t = nxt
        u_final = sum(b[i] for i in c_t)
        total += weight * Fraction(1 + len(c_t), 1 + u_final)
    bound = 1 / rho_frac
    return Lemma2Report(lhs=float(total), bound=float(bound),
                        holds=total <= bound)


# ---------------------------------------------------------------------------
# Null p-value samplers for the mirror-conservatism checks


def grid_uniform_pvalues(m: int) -> Callable:
    """Uniform on the grid {1/m, 2/m, ..., 1}: permutation-test p-values."""

    def sampler(size, rng):
        return rng.integers(1, m + 1, size=size) / m

    return sampler


def shifted_bernoulli_pvalues(a=0.1, q=0.9) -> Callable:
    """p = a + (1 - a) * Bernoulli(q): conservative but not mirror-conservative."""

    def sampler(size, rng):
        return a + (1.0 - a) * (rng.uniform(size=size) < q)

    return sampler


def fuzzy_mlr_pvalue(theta: float, theta0: float, family: str = "gaussian",
                     trials: int = 20, seed: Optional[int] = None) -> Callable:
    """One-sided p-value sampler for a monotone-likelihood-ratio test.

    For a continuous gaussian location statistic the p-value is
    1 - Phi(T - theta0).  For a discrete binomial statistic the atom at
    the observed T is smoothed uniformly between the survival function
    at T and just above T, which makes the p-value exactly uniform at
    theta = theta0 and mirror-conservative below it.
    """
    if theta > theta0:
        raise ValueError("the null requires theta <= theta0")

    if family == "gaussian":
        def sampler(size, rng=None):
            rng = np.random.default_rng(seed) if rng is None else rng
            t = theta + rng.standard_normal(size)
            return 1.0 - ndtr(t - theta0)

        return sampler

    if family == "binomial":
        if not 0.0 < theta <= theta0 < 1.0:
            raise ValueError("binomial rates must lie in (0, 1)")
        support = np.arange(trials + 1)
        from scipy.stats import binom

        sf_at = binom.sf(support - 1, trials, theta0)   # P(T >= t)
        sf_above = binom.sf(support, trials, theta0)    # P(T >= t + 1)

        def sampler(size, rng=None):
            rng = np.random.default_rng(seed) if rng is None else rng
            t = rng.binomial(trials, theta, size=size)
            u = rng.uniform(size=size)
            return sf_above[t] + u * (sf_at[t] - sf_above[t])

        return sampler

    raise ValueError(f"unknown family {family!r}")
