"""Protocol driver: iterative threshold shrinking with FDP monitoring.

The engine maintains the candidate rejection state (equivalently, the
threshold surface evaluated at the observed covariates), records one
trace step per state, and supports two update strategies:

* ``lfdr`` (default): model-guided reveal-one updates; the two-groups
  model is refit on the visible data every ``ceil(n / 20)`` reveals.
* ``constant``: covariate-blind constant thresholds stepping down
  through the observed p' values; with this strategy the procedure
  coincides with the Barber-Candes procedure.

The run stops as soon as the FDP estimate (1 + A) / max(R, 1) drops to
the target level, rejecting the hypotheses below the surface; without a
target it runs to full unmasking and reports q-values instead.  Every
updater input is routed through the masked view, so the decision path
never depends on which element of a masked pair is the true p-value.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import HypothesisSet, ThresholdSurface, compute_fdp_hat, mask
from .em import (EmDivergence, MStepFitter, TwoGroupsFit, fit_pair,
                 make_candidate_fitter, run_em)
from .families import get_family
from .glm import Featurization, SelectionResult, select_featurization
from .threshold import lfdr_profile, reveal_one_update
from .validation import check_alpha, readonly


@dataclass(frozen=True)
class StepRecord:
    t: int
    A: int
    R: int
    fdp_hat: float
    revealed: tuple  # indices revealed by the update leading into state t
    refit: bool

    def as_row(self):
        return [self.t, self.A, self.R, self.fdp_hat, list(self.revealed),
                self.refit]


@dataclass(frozen=True)
class ProtocolTrace:
    """Per-step protocol history.

    ``reveal_time[i]`` is the state index at which hypothesis i first
    became visible (0 when already visible at the initial surface, -1
    when still masked at an early stop).
    """

    steps: tuple
    reveal_time: np.ndarray = field(repr=False)
    final_alpha_reached: float
    complete: bool

    def fdp_path(self) -> np.ndarray:
        return np.array([s.fdp_hat for s in self.steps])

    def to_jsonable(self) -> dict:
        return {
            "schema": 1,
            "steps": [s.as_row() for s in self.steps],
            "reveal_time": self.reveal_time.tolist(),
            "final_alpha_reached": self.final_alpha_reached,
            "complete": self.complete,
        }

    def to_bytes(self) -> bytes:
        import json

        return json.dumps(self.to_jsonable(), sort_keys=True).encode()


@dataclass(frozen=True)
class AdaptResult:
    """Outcome of one protocol run."""

    rejections: np.ndarray
    qvalues: Optional[np.ndarray]
    trace: ProtocolTrace
    final_fit: Optional[TwoGroupsFit]
    lfdr: Optional[np.ndarray]
    alpha: Optional[float]
    selection: tuple = ()
    fit_snapshots: tuple = ()

    def rejections_at(self, alpha) -> np.ndarray:
        if self.qvalues is None:
            raise ValueError("q-values require a run to full unmasking (alpha=None)")
        return np.flatnonzero(self.qvalues <= alpha)


@dataclass
class AdaptConfig:
    family: str = "beta_mixture"
    featurization: object = "auto"
    selection: str = "bic"  # bic | cv
    selection_cv_folds: int = 5
    s0: float = 0.45
    refit_every: object = "auto"
    alpha: Optional[float] = None
    em_iterations: int = 10
    em_tolerance: float = 1e-6
    weighted_mu_fit: bool = False
    fitter: str = "glm"  # glm | lasso
    lambda_grid: object = None
    lasso_cv_folds: int = 5
    strategy: str = "lfdr"  # lfdr | constant
    seed: int = 0
    store_fits: bool = False

    def validate(self, n: int):
        if self.strategy not in ("lfdr", "constant"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "lfdr" and not (0.0 < self.s0 < 0.5):
            raise ValueError("s0 must lie in (0, 0.5)")
        if self.alpha is not None:
            check_alpha(self.alpha)
        if self.selection not in ("bic", "cv"):
            raise ValueError(f"unknown selection criterion {self.selection!r}")
        if self.fitter not in ("glm", "lasso"):
            raise ValueError(f"unknown fitter {self.fitter!r}")
        if n < 1:
            raise ValueError("need at least one hypothesis")

    def cadence(self, n: int) -> int:
        if self.refit_every == "auto":
            return max(1, math.ceil(n / 20))
        return max(1, int(self.refit_every))


def default_candidates(covariates: np.ndarray):
    """Featurization pairs scored at the initial step.

    Univariate covariates get natural cubic splines over a 6..15 knot
    range; low-dimensional covariates get matched additive splines plus
    the identity; high-dimensional covariates get the identity only
    (pair with the lasso fitter there).
    """
    n, d = covariates.shape
    feasible_knots = []
    distinct = [np.unique(covariates[:, j]).size for j in range(d)]
    if d == 1:
        candidates_k = range(6, 16)
    elif d <= 6:
        candidates_k = (4, 6, 8)
    else:
        candidates_k = ()
    for k in candidates_k:
        if all(dv >= k + 4 for dv in distinct):
            feasible_knots.append(k)
    pairs = [(Featurization("spline", knots=k), Featurization("spline", knots=k))
             for k in feasible_knots]
    if d > 1 or not pairs:
        ident = Featurization("identity")
        pairs.append((ident, ident))
    return pairs


def resolve_candidates(spec, covariates):
    if spec == "auto":
        return default_candidates(covariates)
    if isinstance(spec, tuple) and len(spec) == 2 and isinstance(spec[0], Featurization):
        return [spec]
    return list(spec)


_INTERCEPT_PAIR = (Featurization("subset", indices=()),
                   Featurization("subset", indices=()))


class AdaptEngine:
    """Stateful protocol machine; one instance per analysis session.

    All analyst-facing quantities derive from the masked view plus the
    tail counts, so any steering decision made on top of :meth:`public_view`
    is automatically measurable with respect to the protocol filtration.
    """

    def __init__(self, h: HypothesisSet, config: AdaptConfig):
        config.validate(h.n)
        self.h = h
        self.config = config
        self.family = get_family(config.family)
        self._refit_cadence = config.cadence(h.n)
        self._reveals_since_refit = 0
        self._em_failures = 0
        self.fit = None
        self.selection: Optional[SelectionResult] = None
        self.fit_snapshots = []
        self.steps = []

        if config.strategy == "constant":
            pprime = np.minimum(h.pvalues, 1.0 - h.pvalues)
            s_start = float(np.max(pprime))
            self.surface = ThresholdSurface.constant(s_start, h.n)
        else:
            self.surface = ThresholdSurface.constant(config.s0, h.n)
        self.mask = mask(h, self.surface)
        self.reveal_time = np.where(self.mask.revealed, 0, -1)

        refit0 = False
        if config.strategy == "lfdr":
            self._select_and_fit(resolve_candidates(config.featurization,
                                                    h.covariates))
            refit0 = True
        self.steps.append(StepRecord(0, self.mask.A, self.mask.R,
                                     compute_fdp_hat(self.mask.A, self.mask.R),
                                     (), refit0))

    # -- model fitting ----------------------------------------------------

    def _new_fitter(self) -> MStepFitter:
        cfg = self.config
        return MStepFitter(
            kind=cfg.fitter,
            weighted_mu=cfg.weighted_mu_fit,
            lambda_grid=cfg.lambda_grid,
            cv_folds=cfg.lasso_cv_folds,
            seed=cfg.seed,
        )

    def _select_and_fit(self, candidates):
        cfg = self.config
        self.fitter = self._new_fitter()
        fit_candidate = make_candidate_fitter(
            self.mask, self.h.covariates, self.family,
            iterations=cfg.em_iterations, tolerance=cfg.em_tolerance,
            fitter_config=self.fitter,
        )

        def fallback():
            return fit_candidate(_INTERCEPT_PAIR)

        if len(candidates) == 1:
            try:
                best = fit_candidate(candidates[0])
                self.selection = SelectionResult(
                    0, best, ((best.label, best.df, best.fit.expected_loglik,
                               float("nan")),), cfg.selection)
            except (np.linalg.LinAlgError, ValueError, EmDivergence):
                best = fallback()
                self.selection = SelectionResult(-1, best, (), cfg.selection)
        else:
            self.selection = select_featurization(
                candidates, fit_candidate, self.h.n, criterion=cfg.selection,
                cv_folds=cfg.selection_cv_folds, seed=cfg.seed,
                fallback=fallback,
            )
        self.fit = self.selection.best.fit
        self._snapshot_fit()

    def _snapshot_fit(self):
        if self.config.store_fits:
            self.fit_snapshots.append((self.t, self.fit))

    def _refit(self):
        cfg = self.config
        try:
            self.fit = run_em(self.mask, self.fit.pair, self.family,
                              iterations=cfg.em_iterations,
                              tolerance=cfg.em_tolerance,
                              fitter=self.fitter, init=self.fit)
        except (EmDivergence, np.linalg.LinAlgError, ValueError):
            self._em_failures += 1  # keep the last good fit; validity is unaffected
        self._reveals_since_refit = 0
        self._snapshot_fit()

    # -- state accessors ---------------------------------------------------

    @property
    def t(self) -> int:
        return max(len(self.steps) - 1, 0)

    @property
    def fdp_hat(self) -> float:
        return self.steps[-1].fdp_hat

    @property
    def masked_count(self) -> int:
        return self.mask.n_masked

    def rejections_now(self) -> np.ndarray:
        return np.flatnonzero(self.mask.masked & self.mask.in_r)

    # -- protocol steps ----------------------------------------------------

    def step_once(self) -> bool:
        """One update: refit on cadence, shrink, record.  False when terminal."""
        if self.mask.n_masked == 0:
            return False
        refit_now = False
        if self.config.strategy == "lfdr":
            if self.t > 0 and self._reveals_since_refit >= self._refit_cadence:
                self._refit()
                refit_now = True
            new_surface = reveal_one_update(self.surface, self.fit, self.mask)
        else:
            masked_p = self.mask.pprime[self.mask.masked]
            drop_to = np.nextafter(float(np.max(masked_p)), -np.inf)
            new_surface = self.surface.refine(
                np.minimum(self.surface.values, max(drop_to, 0.0)))
        new_mask = mask(self.h, new_surface)
        newly = np.flatnonzero(self.mask.masked & new_mask.revealed)
        self.surface = new_surface
        self.mask = new_mask
        self.reveal_time[newly] = self.t + 1
        self._reveals_since_refit += newly.size
        self.steps.append(StepRecord(
            self.t + 1, new_mask.A, new_mask.R,
            compute_fdp_hat(new_mask.A, new_mask.R),
            tuple(int(i) for i in newly), refit_now))
        return True

    def run_until(self, alpha: float) -> bool:
        """Advance until the FDP estimate reaches ``alpha``; True if reached."""
        alpha = check_alpha(alpha)
        while True:
            if self.fdp_hat <= alpha:
                return True
            if not self.step_once():
                return self.fdp_hat <= alpha

    def run_full(self):
        while self.step_once():
            pass

    def step(self, k: int = 1) -> int:
        done = 0
        for _ in range(k):
            if not self.step_once():
                break
            done += 1
        return done

    # -- analyst actions beyond stepping ------------------------------------

    def refit_now(self):
        if self.config.strategy != "lfdr":
            raise ValueError("constant strategy has no model to refit")
        self._refit()

    def set_family(self, name: str):
        self.family = get_family(name)
        self.config.family = self.family.name
        self._select_and_fit([(self.fit.pair.pi.spec, self.fit.pair.mu.spec)])

    def set_featurization(self, candidates):
        self._select_and_fit(resolve_candidates(candidates, self.h.covariates))

    # -- outputs -------------------------------------------------------------

    def build_trace(self) -> ProtocolTrace:
        fdp = [s.fdp_hat for s in self.steps]
        return ProtocolTrace(
            steps=tuple(self.steps),
            reveal_time=readonly(self.reveal_time.copy()),
            final_alpha_reached=float(np.min(fdp)),
            complete=self.mask.n_masked == 0,
        )

    def current_lfdr(self) -> Optional[np.ndarray]:
        if self.fit is None:
            return None
        return lfdr_profile(self.fit, self.mask).lfdr

    def public_view(self) -> dict:
        """The analyst-visible snapshot: masked view, tail counts, estimates.

        Masked entries expose only (x, p', masked flag); the hidden tail
        membership of a masked p-value influences nothing here except the
        aggregate counters A and R, which the protocol explicitly reveals.
        """
        lf = self.current_lfdr()
        fit_summary = None
        if self.fit is not None:
            fit_summary = {
                "family": self.fit.family,
                "featurization": self.fit.label,
                "theta": [float(v) for v in self.fit.theta],
                "beta": [float(v) for v in self.fit.beta],
                "expected_loglik": float(self.fit.expected_loglik),
            }
        selection_rows = []
        if self.selection is not None:
            selection_rows = [
                {"label": r[0], "df": int(r[1]), "loglik": float(r[2]),
                 "score": float(r[3])}
                for r in self.selection.scores
            ]
        return {
            "schema": 1,
            "step": self.t,
            "masked_count": int(self.mask.n_masked),
            "counters": {
                "A": int(self.mask.A),
                "R": int(self.mask.R),
                "fdp_hat": float(self.fdp_hat),
                "history": [[s.t, s.A, s.R, s.fdp_hat] for s in self.steps],
            },
            "hypotheses": [
                {
                    "i": int(i),
                    "x": [float(v) for v in self.h.covariates[i]],
                    "value": float(self.mask.visible[i]),
                    "masked": bool(self.mask.masked[i]),
                }
                for i in range(self.h.n)
            ],
            "lfdr": None if lf is None else [float(v) for v in lf],
            "threshold": [float(v) for v in self.surface.values],
            "fit": fit_summary,
            "selection": selection_rows,
        }


def q_values(trace: ProtocolTrace, pvalues: np.ndarray) -> np.ndarray:
    """Per-hypothesis q-values from a complete trace.

    q_i is the running minimum of the FDP estimate over the steps before
    hypothesis i was revealed, capped at 1.  Upper-tail hypotheses
    (p > 0.5) can never sit below a threshold and report 1.
    """
    if not trace.complete:
        raise ValueError("q-values require a trace run to full unmasking")
    fdp = trace.fdp_path()
    prefix_min = np.minimum.accumulate(fdp)
    q = np.ones(pvalues.shape[0])
    low = pvalues <= 0.5
    t_star = trace.reveal_time
    positive = t_star > 0
    sel = low & positive
    q[sel] = np.minimum(prefix_min[t_star[sel] - 1], 1.0)
    return q


def run_adapt(h: HypothesisSet, config: Optional[AdaptConfig] = None,
              **overrides) -> AdaptResult:
    """Run the full protocol on a hypothesis set.

    With ``alpha`` set, stops at the first state whose FDP estimate is
    below the target and rejects everything under the surface.  With
    ``alpha=None``, runs to full unmasking and reports q-values, from
    which the rejection set at any level can be read off.
    """
    if config is None:
        config = AdaptConfig(**overrides)
    elif overrides:
        config = replace(config, **overrides)
    engine = AdaptEngine(h, config)
    if config.alpha is not None:
        engine.run_until(config.alpha)
        rejections = engine.rejections_now() if engine.fdp_hat <= config.alpha \
            else np.empty(0, dtype=int)
    else:
        engine.run_full()
        rejections = np.empty(0, dtype=int)
    trace = engine.build_trace()
    qvals = q_values(trace, h.pvalues) if trace.complete else None
    return AdaptResult(
        rejections=readonly(np.asarray(rejections, dtype=int)),
        qvalues=None if qvals is None else readonly(qvals),
        trace=trace,
        final_fit=engine.fit,
        lfdr=engine.current_lfdr(),
        alpha=config.alpha,
        selection=() if engine.selection is None else engine.selection.scores,
        fit_snapshots=tuple(engine.fit_snapshots),
    )


def pearson_or_nan(a, b) -> float:
    """Pearson correlation; NaN when either vector is (numerically) constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.std(a) < 1e-15 or np.std(b) < 1e-15:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def info_loss_correlation(h: HypothesisSet, result: AdaptResult, alphas,
                          config: AdaptConfig):
    """Correlation between masked-data and full-data lfdr estimates.

    The full-data estimate refits the selected model with every p-value
    revealed.  For each target level, the masked-data estimate is taken
    at the first step whose FDP estimate reached that level, using the
    fit that was active then.  Returns (alpha, pearson_r) pairs; r is
    NaN when the level was never reached or an estimate is constant.
    """
    if not result.fit_snapshots:
        raise ValueError("run with store_fits=True to measure information loss")
    family = get_family(config.family)
    full_mask = mask(h, ThresholdSurface.constant(0.0, h.n))
    pair = result.final_fit.pair
    fitter = MStepFitter(kind=config.fitter, weighted_mu=config.weighted_mu_fit,
                         lambda_grid=config.lambda_grid,
                         cv_folds=config.lasso_cv_folds, seed=config.seed)
    # warm-start from the run's final fit: with nothing masked the
    # conservative initializer degenerates to pi1 = 1 everywhere
    fit_star = run_em(full_mask, pair, family, iterations=config.em_iterations,
                      tolerance=config.em_tolerance, fitter=fitter,
                      init=result.final_fit)
    lfdr_star = lfdr_profile(fit_star, full_mask).lfdr

    fdp = result.trace.fdp_path()
    snapshot_steps = np.array([s for s, _ in result.fit_snapshots])
    reveal_time = result.trace.reveal_time
    p = h.pvalues
    pprime = np.minimum(p, 1.0 - p)
    out = []
    for alpha in alphas:
        reached = np.flatnonzero(fdp <= alpha)
        if reached.size == 0:
            out.append((float(alpha), float("nan")))
            continue
        t_alpha = int(reached[0])
        fit_idx = int(np.searchsorted(snapshot_steps, t_alpha, side="right")) - 1
        fit_t = result.fit_snapshots[max(fit_idx, 0)][1]
        visible_t = np.where((reveal_time >= 0) & (reveal_time <= t_alpha),
                             p, pprime)
        family_t = get_family(fit_t.family)
        f_one = fit_t.pi1 * family_t.h_at_one(fit_t.mu) + (1.0 - fit_t.pi1)
        f_p = fit_t.pi1 * family_t.h(visible_t, fit_t.mu) + (1.0 - fit_t.pi1)
        lfdr_t = np.minimum(f_one / f_p, 1.0)
        out.append((float(alpha), pearson_or_nan(lfdr_star, lfdr_t)))
    return out


def moving_window_fdp(trace: ProtocolTrace, t: int, w):
    """Windowed FDP estimates ((A_t - A_{t+w}) / max(1, R_t - R_{t+w}), +1 variant).

    ``w`` may be ``math.inf`` to use the remainder of the trace, in which
    case the +1 variant coincides with the global FDP estimate at t.
    """
    last = len(trace.steps) - 1
    if not 0 <= t <= last:
        raise ValueError(f"step {t} outside trace")
    tw = last if math.isinf(w) else t + int(w)
    if tw > last:
        raise ValueError("window exceeds trace length")
    dA = trace.steps[t].A - trace.steps[tw].A
    dR = trace.steps[t].R - trace.steps[tw].R
    return dA / max(1, dR), (1.0 + dA) / max(1, dR)
