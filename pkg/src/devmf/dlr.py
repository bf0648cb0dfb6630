"""Weighted linear regression with noise-derived weights.

For samples y_i = w*.x_i + eps_i with heteroscedastic noise, weighting
each squared residual by 1/Var(eps_i) is the Gauss-Markov-optimal linear
estimator.  Here the variance is approximated by the squared sampled
noise eps_i^2 (floored to keep the objective finite), and the synthetic
demo compares the resulting fit against ordinary least squares on a
noisy line.

Samples are kept as plain arrays (design matrix X, labels y, optional
noise eps) rather than wrapped in classes; the functions validate what
they need.
"""

import numpy as np
import scipy.linalg

from .errors import SingularSystemError

WEIGHT_FLOOR = 1e-12


def deviation_weights(eps):
    """Per-sample weights eps_i^2 + floor; the floor keeps a zero-noise
    sample from zeroing a denominator."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 1:
        raise ValueError("eps must be a 1-D array of sampled noise")
    if not np.all(np.isfinite(eps)):
        raise ValueError("eps must be finite")
    return eps * eps + WEIGHT_FLOOR


def wls_solve(X, y, weights):
    """argmin_w sum_i (y_i - w.x_i)^2 / W_i via the weighted normal
    equations (X' diag(1/W) X) w = X' diag(1/W) y, solved by Cholesky.

    Raises SingularSystemError when the weighted Gram matrix is not
    positive definite (rank-deficient design).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    W = np.asarray(weights, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],) or W.shape != (X.shape[0],):
        raise ValueError("X must be (n, d) with matching y and weights")
    if np.any(W <= 0.0):
        raise ValueError("weights must be positive")
    Xw = X / W[:, None]
    gram = X.T @ Xw
    rhs = Xw.T @ y
    try:
        cho = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError as exc:
        raise SingularSystemError(f"weighted normal equations are singular: {exc}") from None
    return scipy.linalg.cho_solve(cho, rhs)


def ols_solve(X, y):
    """Ordinary least squares: uniform-weight special case of wls_solve."""
    return wls_solve(X, y, np.ones(len(np.asarray(y))))


def weighted_objective(X, y, weights, w):
    resid = np.asarray(y) - np.asarray(X) @ np.asarray(w)
    return float(np.sum(resid * resid / np.asarray(weights)))


def figure2_experiment(n, seed):
    """Fit a noisy line two ways and report slope errors.

    Draws x on a uniform grid over [0, 1], y = x + eps with
    eps ~ Normal(0, 0.01), then fits slope + intercept by OLS and by
    weighted least squares with weights from the true sampled noise.
    Returns {"ols_param_error": |slope-1|, "dlr_param_error": |slope-1|}.
    """
    if n < 3:
        raise ValueError("need at least 3 samples to fit slope + intercept")
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, n)
    eps = rng.normal(0.0, np.sqrt(0.01), n)
    y = x + eps
    X = np.column_stack([x, np.ones(n)])
    w_ols = ols_solve(X, y)
    w_dlr = wls_solve(X, y, deviation_weights(eps))
    return {"ols_param_error": abs(w_ols[0] - 1.0),
            "dlr_param_error": abs(w_dlr[0] - 1.0)}
