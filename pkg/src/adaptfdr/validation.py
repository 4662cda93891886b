"""Input validation helpers shared by the estimator facade and ingestion."""

import numpy as np

P_MIN = 1e-15


def as_float_array(values, name, ndim=1):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != ndim:
        if ndim == 2 and arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        else:
            raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


def check_pvalues(pvalues):
    """Validate raw p-values and clamp them into [P_MIN, 1 - P_MIN].

    Values exactly 0 or 1 are legal on input but are pulled off the
    boundary so that transforms like -log(p) stay finite.
    """
    p = as_float_array(pvalues, "pvalues")
    if not np.all(np.isfinite(p)):
        raise ValueError("pvalues must be finite")
    if np.any(p < 0.0) or np.any(p > 1.0):
        bad = int(np.argmax((p < 0.0) | (p > 1.0)))
        raise ValueError(f"pvalues must lie in [0, 1]; offending entry {bad}: {p[bad]}")
    return np.clip(p, P_MIN, 1.0 - P_MIN)


def check_covariates(covariates, n_expected=None):
    x = as_float_array(covariates, "covariates", ndim=2)
    if not np.all(np.isfinite(x)):
        raise ValueError("covariates must be finite")
    if n_expected is not None and x.shape[0] != n_expected:
        raise ValueError(
            f"covariate row count {x.shape[0]} does not match p-value count {n_expected}"
        )
    return x


def check_alpha(alpha):
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    return alpha


def readonly(arr):
    """Return ``arr`` with the writeable flag cleared (shared-safe view)."""
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr
