"""Covariate-adaptive p-value thresholding with finite-sample FDR control."""

from .baselines import BaselineResult, barber_candes, bh, storey_bh
from .core import (HypothesisSet, MaskState, ThresholdSurface, compute_fdp_hat,
                   ingest, mask, mirror_conservatism_score)
from .em import TwoGroupsFit, e_step, initialize, m_step, run_em
from .engine import (AdaptConfig, AdaptEngine, AdaptResult, ProtocolTrace,
                     info_loss_correlation, moving_window_fdp, q_values,
                     run_adapt)
from .families import (BETA_MIXTURE, GAUSSIAN_MIXTURE, density, get_family,
                       invert_mixture_density)
from .glm import (Featurization, GlmFit, fit_l1_glm, fit_weighted_glm,
                  select_featurization, spline_basis)
from .sim import (Scenario, fuzzy_mlr_pvalue, generate_example1,
                  generate_example2, lemma2_check, score)
from .threshold import (LfdrProfile, lfdr_profile, local_fdr,
                        monotone_equivalence_check, reveal_one_update)

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptEngine", "AdaptEstimator", "AdaptResult",
    "BETA_MIXTURE", "BaselineResult", "Featurization", "GAUSSIAN_MIXTURE",
    "GlmFit", "HypothesisSet", "LfdrProfile", "MaskState", "ProtocolTrace",
    "Scenario", "ThresholdSurface", "TwoGroupsFit", "barber_candes", "bh",
    "compute_fdp_hat", "density", "e_step", "fit_l1_glm", "fit_weighted_glm",
    "fuzzy_mlr_pvalue", "generate_example1", "generate_example2", "get_family",
    "info_loss_correlation", "ingest", "initialize", "invert_mixture_density",
    "lemma2_check", "lfdr_profile", "local_fdr", "m_step", "mask",
    "mirror_conservatism_score", "monotone_equivalence_check",
    "moving_window_fdp", "q_values", "reveal_one_update", "run_adapt",
    "run_em", "score", "select_featurization", "spline_basis", "storey_bh",
]


def __getattr__(name):
    # sklearn import is deferred so CLI startup stays light
    if name == "AdaptEstimator":
        from .estimator import AdaptEstimator

        return AdaptEstimator
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
