"""Self-contained GLM stack: spline featurization, weighted IRLS,
L1-penalized fits, and information-criterion featurization selection.

Only the pieces the thresholding engine needs are implemented: logistic
regression with fractional responses, Gamma regression (inverse or log
link), and Gaussian least squares, all with observation weights and a
step-halving IRLS loop whose deviance never increases across accepted
iterations.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 25
RIDGE_SCALE = 1e-8
_MU_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# Featurization


def spline_basis(covariate, knots: int, breakpoints=None):
    """Natural cubic spline design for one covariate, intercept included.

    Knot locations are equi-quantile points of the training covariate
    (``knots + 1`` breakpoints), and the returned matrix has exactly
    ``knots + 1`` columns counting the intercept, matching the convention
    that a spline featurization contributes ``knots`` model degrees of
    freedom plus one for the intercept.

    Returns ``(design, breakpoints)`` so the basis can be re-evaluated at
    new points deterministically.
    """
    x = np.asarray(covariate, dtype=float).reshape(-1)
    if knots < 2:
        raise ValueError("knots must be >= 2")
    if breakpoints is None:
        distinct = np.unique(x)
        if distinct.size < knots + 4:
            raise ValueError(
                f"need at least {knots + 4} distinct covariate values for "
                f"{knots} knots, got {distinct.size}"
            )
        breakpoints = np.quantile(x, np.linspace(0.0, 1.0, knots + 1))
        if np.unique(breakpoints).size != breakpoints.size:
            raise ValueError("equi-quantile knots collide; too few distinct values")
    xi = np.asarray(breakpoints, dtype=float)
    k = xi.size  # knots + 1 breakpoints

    def d(idx):
        num = np.maximum(x - xi[idx], 0.0) ** 3 - np.maximum(x - xi[k - 1], 0.0) ** 3
        return num / (xi[k - 1] - xi[idx])

    cols = [np.ones_like(x), x]
    d_last = d(k - 2)
    for j in range(k - 2):
        cols.append(d(j) - d_last)
    return np.column_stack(cols), xi


@dataclass(frozen=True)
class Featurization:
    """Recipe for turning raw covariates into a design matrix.

    kind:
      * ``identity``  -- intercept plus all raw columns.
      * ``spline``    -- intercept plus a natural cubic spline basis per
        covariate column, knots at equi-quantiles of the training data.
      * ``subset``    -- intercept plus the selected columns (an empty
        selection yields the intercept-only model).
    """

    kind: str = "identity"
    knots: int = 6
    indices: tuple = ()

    def label(self) -> str:
        if self.kind == "spline":
            return f"spline(knots={self.knots})"
        if self.kind == "subset":
            return f"subset({list(self.indices)})"
        return self.kind

    def fit(self, X) -> "FittedFeaturization":
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        if self.kind == "identity":
            design = np.column_stack([np.ones(n), X])
            return FittedFeaturization(self, design, d + 1, None)
        if self.kind == "subset":
            idx = tuple(int(i) for i in self.indices)
            design = np.column_stack([np.ones(n)] + [X[:, i] for i in idx])
            return FittedFeaturization(self, design, len(idx) + 1, None)
        if self.kind == "spline":
            blocks = [np.ones((n, 1))]
            breakpoints = []
            for j in range(d):
                basis, xi = spline_basis(X[:, j], self.knots)
                blocks.append(basis[:, 1:])  # drop per-column intercept
                breakpoints.append(xi)
            design = np.hstack(blocks)
            return FittedFeaturization(self, design, design.shape[1], tuple(breakpoints))
        raise ValueError(f"unknown featurization kind {self.kind!r}")


@dataclass(frozen=True)
class FittedFeaturization:
    spec: Featurization
    design: np.ndarray = field(repr=False)
    df: int
    breakpoints: Optional[tuple] = None

    def transform(self, X) -> np.ndarray:
        """Re-evaluate the basis at new points using the training knots."""
        X = np.asarray(X, dtype=float)
        spec = self.spec
        n = X.shape[0]
        if spec.kind == "identity":
            return np.column_stack([np.ones(n), X])
        if spec.kind == "subset":
            return np.column_stack([np.ones(n)] + [X[:, i] for i in spec.indices])
        blocks = [np.ones((n, 1))]
        for j, xi in enumerate(self.breakpoints):
            basis, _ = spline_basis(X[:, j], spec.knots, breakpoints=xi)
            blocks.append(basis[:, 1:])
        return np.hstack(blocks)


# ---------------------------------------------------------------------------
# IRLS


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    family: str
    link: str
    fitted: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    deviance: float
    ridge_fallback: bool = False


def _links(family, link):
    if family == "binomial" and link == "logit":
        def inv(eta):
            return np.clip(expit(eta), _MU_FLOOR, 1.0 - _MU_FLOOR)

        def to_eta(mu):
            mu = np.clip(mu, _MU_FLOOR, 1.0 - _MU_FLOOR)
            return np.log(mu / (1.0 - mu))

        def dmu_deta(mu):
            return mu * (1.0 - mu)

        def variance(mu):
            return mu * (1.0 - mu)

        def deviance(y, mu, w):
            # cross-entropy form: equals the usual binomial deviance up to
            # a constant in mu, and stays defined for responses outside
            # [0, 1] (the conservative initializer produces those)
            return -2.0 * float(np.sum(w * (y * np.log(mu)
                                            + (1 - y) * np.log(1 - mu))))

    elif family == "gamma" and link == "inverse":
        def inv(eta):
            return 1.0 / np.maximum(eta, _MU_FLOOR)

        def to_eta(mu):
            return 1.0 / np.maximum(mu, _MU_FLOOR)

        def dmu_deta(mu):
            return -(mu * mu)

        def variance(mu):
            return mu * mu

        def deviance(y, mu, w):
            return 2.0 * float(np.sum(w * ((y - mu) / mu - np.log(y / mu))))

    elif family == "gamma" and link == "log":
        def inv(eta):
            return np.exp(np.clip(eta, -300.0, 300.0))

        def to_eta(mu):
            return np.log(np.maximum(mu, _MU_FLOOR))

        def dmu_deta(mu):
            return mu

        def variance(mu):
            return mu * mu

        def deviance(y, mu, w):
            return 2.0 * float(np.sum(w * ((y - mu) / mu - np.log(y / mu))))

    elif family == "gaussian" and link == "identity":
        def inv(eta):
            return eta

        def to_eta(mu):
            return mu

        def dmu_deta(mu):
            return np.ones_like(mu)

        def variance(mu):
            return np.ones_like(mu)

        def deviance(y, mu, w):
            return float(np.sum(w * (y - mu) ** 2))

    else:
        raise ValueError(f"unsupported family/link: {family}/{link}")
    return inv, to_eta, dmu_deta, variance, deviance


def _solve_wls(X, W, z, ridge_state):
    XtW = X.T * W
    gram = XtW @ X
    rhs = XtW @ z
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        pass
    ridge_state["used"] = True
    lam = RIDGE_SCALE * max(np.trace(gram), 1.0)
    return np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)


def fit_weighted_glm(
    design,
    response,
    weights=None,
    family="binomial",
    link="logit",
    beta_init=None,
    tol=IRLS_TOL,
    max_iter=IRLS_MAX_ITER,
    unbounded_response=False,
) -> GlmFit:
    """Weighted GLM via IRLS with step-halving.

    The deviance is non-increasing across accepted iterations: a proposed
    step that raises the deviance is halved back toward the previous
    coefficients, and reverted outright if ten halvings do not help.
    A singular weighted Gram matrix falls back to a small ridge
    (1e-8 * trace) and flags the fit.

    ``unbounded_response`` admits fractional-logistic responses outside
    [0, 1]; the objective stays concave, and fitted means still live in
    (0, 1).  Conservative initialization relies on this.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n, k = X.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or y.shape[0] != n:
        raise ValueError("design, response, and weights must align")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if family == "binomial" and not unbounded_response and (
            np.any(y < 0) or np.any(y > 1)):
        raise ValueError("binomial responses must lie in [0, 1]")
    if family == "gamma" and np.any(y <= 0):
        raise ValueError("gamma responses must be positive")

    inv, to_eta, dmu_deta, variance, dev_fn = _links(family, link)
    ridge_state = {"used": False}

    if beta_init is not None:
        beta = np.asarray(beta_init, dtype=float).copy()
        eta = X @ beta
        mu = inv(eta)
    else:
        beta = None
        if family == "binomial":
            mu0 = (y + 0.5) / 2.0
        elif family == "gamma":
            mu0 = np.maximum((y + np.mean(y)) / 2.0, _MU_FLOOR)
        else:
            mu0 = y.astype(float)
        eta = to_eta(mu0)
        mu = inv(eta)
    dev = dev_fn(y, mu, w) if beta is not None else np.inf

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        dmu = dmu_deta(mu)
        sign = np.where(dmu < 0, -1.0, 1.0)
        dmu = sign * np.maximum(np.abs(dmu), _MU_FLOOR)
        W = w * dmu * dmu / np.maximum(variance(mu), _MU_FLOOR)
        z = eta + (y - mu) / dmu
        proposal = _solve_wls(X, W, z, ridge_state)
        if beta is None:
            beta = proposal
            eta = X @ beta
            mu = inv(eta)
            dev = dev_fn(y, mu, w)
            continue
        accepted = False
        cand = proposal
        for _ in range(10):
            eta_c = X @ cand
            mu_c = inv(eta_c)
            dev_c = dev_fn(y, mu_c, w)
            if np.isfinite(dev_c) and dev_c <= dev + 1e-12:
                accepted = True
                break
            cand = 0.5 * (cand + beta)
        if not accepted:
            converged = True
            break
        rel = abs(dev - dev_c) / (abs(dev) + 0.1)
        beta, eta, mu, dev = cand, eta_c, mu_c, dev_c
        if rel < tol:
            converged = True
            break
    return GlmFit(
        coefficients=beta,
        family=family,
        link=link,
        fitted=mu,
        converged=converged,
        iterations=it,
        deviance=float(dev),
        ridge_fallback=ridge_state["used"],
    )


# ---------------------------------------------------------------------------
# L1-penalized GLM (coordinate descent on the IRLS working response)


def _cd_lasso(X, W, z, lam, beta, penalize, max_pass=40, tol=1e-6):
    """Coordinate descent for 0.5*sum(W (z - X b)^2)/sum(W) + lam*||b_pen||_1.

    Works in the Gram domain (covariance updates), so one sweep costs
    O(d^2) instead of O(n d); full sweeps alternate with sweeps over the
    active set only.
    """
    wsum = float(np.sum(W))
    Xw = X * W[:, None]
    gram = (X.T @ Xw) / wsum
    c = (Xw.T @ z) / wsum
    diag = np.maximum(np.diag(gram).copy(), 1e-12)
    grad = gram @ beta

    def sweep(indices):
        nonlocal grad
        max_delta = 0.0
        for j in indices:
            rho = c[j] - grad[j] + diag[j] * beta[j]
            if penalize[j]:
                if rho > lam:
                    bj = (rho - lam) / diag[j]
                elif rho < -lam:
                    bj = (rho + lam) / diag[j]
                else:
                    bj = 0.0
            else:
                bj = rho / diag[j]
            delta = bj - beta[j]
            if delta != 0.0:
                grad += delta * gram[:, j]
                beta[j] = bj
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        return max_delta

    all_idx = range(X.shape[1])
    for _ in range(max_pass):
        grad = gram @ beta  # refresh to clear incremental round-off
        if sweep(all_idx) < tol:
            break
        active = [j for j in all_idx if beta[j] != 0.0 or not penalize[j]]
        for _ in range(max_pass):
            if sweep(active) < tol:
                break
    return beta


def fit_l1_glm(
    design,
    response,
    weights=None,
    family="binomial",
    link="logit",
    lambda_grid=None,
    cv_folds=5,
    seed=0,
    fixed_lambda=None,
    beta_init=None,
    outer_iter=8,
) -> GlmFit:
    """L1-penalized GLM: outer IRLS loop, inner coordinate descent.

    The intercept (first column) is never penalized.  When
    ``fixed_lambda`` is None the penalty level is chosen by K-fold
    cross-validated deviance over ``lambda_grid`` (a data-driven
    logarithmic grid by default).  The chosen level is available as
    ``fit.lambda_`` on the returned object.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    penalize = np.ones(X.shape[1], dtype=bool)
    penalize[0] = False

    # center and scale penalized columns: the penalty becomes scale-free
    # and decorrelating from the intercept keeps coordinate descent fast
    scales = np.ones(X.shape[1])
    centers = np.zeros(X.shape[1])
    for j in range(1, X.shape[1]):
        centers[j] = float(np.mean(X[:, j]))
        sd = float(np.std(X[:, j]))
        scales[j] = sd if sd > 1e-12 else 1.0
    Xs = (X - centers) / scales

    inv, to_eta, dmu_deta, variance, dev_fn = _links(family, link)

    def lasso_path_fit(Xm, ym, wm, lam, beta0, n_outer=None):
        beta = beta0.copy()
        if np.any(beta != 0.0):
            eta = Xm @ beta
            mu = inv(eta)
        else:
            if family == "binomial":
                mu = np.clip((ym + 0.5) / 2.0, _MU_FLOOR, 1 - _MU_FLOOR)
            elif family == "gamma":
                mu = np.maximum((ym + np.mean(ym)) / 2.0, _MU_FLOOR)
            else:
                mu = ym.astype(float)
            eta = to_eta(mu)
        for _ in range(n_outer or outer_iter):
            dmu = dmu_deta(mu)
            sign = np.where(dmu < 0, -1.0, 1.0)
            dmu = sign * np.maximum(np.abs(dmu), _MU_FLOOR)
            W = wm * dmu * dmu / np.maximum(variance(mu), _MU_FLOOR)
            z = eta + (ym - mu) / dmu
            old = beta.copy()
            beta = _cd_lasso(Xm, W, z, lam, beta, penalize)
            eta = Xm @ beta
            mu = inv(eta)
            if np.max(np.abs(beta - old)) < 1e-6:
                break
        return beta, mu

    if lambda_grid is None:
        mu_bar = float(np.average(y, weights=np.maximum(w, 1e-12)))
        if family == "binomial":
            mu_bar = float(np.clip(mu_bar, _MU_FLOOR, 1 - _MU_FLOOR))
        resid0 = y - mu_bar
        lam_max = float(np.max(np.abs((w * resid0) @ Xs[:, 1:]))) / max(float(np.sum(w)), 1.0)
        lam_max = max(lam_max, 1e-6)
        lambda_grid = np.geomspace(lam_max, lam_max * 1e-2, 20)
    lambda_grid = np.asarray(sorted(set(float(l) for l in lambda_grid), reverse=True))

    if fixed_lambda is None:
        if lambda_grid.size == 1:
            lam_best = float(lambda_grid[0])
        else:
            rng = np.random.default_rng(seed)
            folds = rng.permutation(n) % cv_folds
            cv_dev = np.zeros(lambda_grid.size)
            for kf in range(cv_folds):
                test = folds == kf
                train = ~test
                beta = np.zeros(X.shape[1])
                for li, lam in enumerate(lambda_grid):
                    # fold fits only rank the penalty levels; with warm
                    # starts a few reweighting rounds are enough
                    beta, _ = lasso_path_fit(Xs[train], y[train], w[train],
                                             lam, beta, n_outer=3)
                    mu_test = inv(Xs[test] @ beta)
                    if family == "gamma":
                        mu_test = np.maximum(mu_test, _MU_FLOOR)
                    cv_dev[li] += dev_fn(y[test], mu_test, w[test])
            lam_best = float(lambda_grid[int(np.argmin(cv_dev))])
    else:
        lam_best = float(fixed_lambda)

    if beta_init is not None:
        # refit at a known penalty from a previous solution; no path needed
        b0 = np.asarray(beta_init, dtype=float)
        start = b0 * scales
        start[0] = b0[0] + float(b0 @ centers)
        beta, mu = lasso_path_fit(Xs, y, w, lam_best, start)
    else:
        # warm-started path from above down to the chosen penalty
        beta = np.zeros(X.shape[1])
        for lam in lambda_grid[lambda_grid > lam_best]:
            beta, _ = lasso_path_fit(Xs, y, w, lam, beta)
        beta, mu = lasso_path_fit(Xs, y, w, lam_best, beta)

    coef = beta / scales
    coef[0] = beta[0] - float(coef @ centers)
    fitted = inv(X @ coef)
    if family == "gamma":
        fitted = np.maximum(fitted, _MU_FLOOR)
    fit = GlmFit(
        coefficients=coef,
        family=family,
        link=link,
        fitted=fitted,
        converged=True,
        iterations=outer_iter,
        deviance=dev_fn(y, fitted, w),
        ridge_fallback=False,
    )
    object.__setattr__(fit, "lambda_", lam_best)
    return fit


# ---------------------------------------------------------------------------
# Featurization selection


def bic_score(loglik: float, df: int, n: int) -> float:
    return float(np.log(n) * df - 2.0 * loglik)


@dataclass(frozen=True)
class SelectionResult:
    best_index: int
    best: object
    scores: tuple  # rows: (label, df, loglik, score)
    criterion: str


def select_featurization(
    candidates,
    fitter: Callable,
    n_obs: int,
    criterion: str = "bic",
    cv_folds: int = 5,
    seed: int = 0,
    fallback: Optional[Callable] = None,
) -> SelectionResult:
    """Score candidate featurization pairs and return the winner.

    ``fitter(candidate, train_idx=None)`` must fit the model (one EM
    pass on the currently visible data) and return an object exposing
    ``df``, ``expected_loglik(idx=None)``, and ``fit``.  BIC picks the
    candidate minimizing log(n)*df - 2*loglik; CV picks the candidate
    maximizing the summed held-out expected log-likelihood over K folds.
    If every candidate fails, ``fallback`` (an intercept-only fitter) is
    used and a warning is emitted.
    """
    rows = []
    results = []
    rng = np.random.default_rng(seed)
    folds = rng.permutation(n_obs) % max(cv_folds, 2)
    for cand in candidates:
        try:
            res = fitter(cand)
            loglik = res.expected_loglik()
            if not np.isfinite(loglik):
                raise FloatingPointError("non-finite expected log-likelihood")
            if criterion == "bic":
                score = bic_score(loglik, res.df, n_obs)
            elif criterion == "cv":
                heldout = 0.0
                for kf in range(max(cv_folds, 2)):
                    test = np.flatnonzero(folds == kf)
                    train = np.flatnonzero(folds != kf)
                    res_k = fitter(cand, train_idx=train)
                    heldout += res_k.expected_loglik(idx=test)
                score = -heldout  # lower is better, to share the argmin
            else:
                raise ValueError(f"unknown criterion {criterion!r}")
            rows.append((res.label, res.df, float(loglik), float(score)))
            results.append(res)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            rows.append((getattr(cand, "label", str(cand)), -1, float("nan"),
                         float("inf")))
            results.append(exc)
    finite = [i for i, r in enumerate(rows) if np.isfinite(r[3])]
    if not finite:
        if fallback is None:
            raise RuntimeError("all featurization candidates failed to fit")
        warnings.warn("all featurization candidates failed; using intercept-only")
        res = fallback()
        return SelectionResult(-1, res, tuple(rows), criterion)
    best = min(finite, key=lambda i: rows[i][3])
    return SelectionResult(best, results[best], tuple(rows), criterion)
