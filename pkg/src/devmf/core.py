"""Matrix model core: observations, mean/variance models, objective and gradients.

The model predicts every cell of a partially observed matrix with a biased
low-rank mean

    rhat_ij = U_i . V_j + u_i + v_j + mu

and a per-cell variance built from a second, non-negative low-rank
factorization with a strictly positive floor

    s_ij = P_i . Q_j + delta_sigma2.

The training loss is the negative log posterior of the Gaussian
heteroscedastic likelihood with Gaussian priors on U, V and exponential
priors on P, Q (hyperparameter-only constants dropped):

    sum over observed (i, j, r) of  (r - rhat_ij)^2 / (2 s_ij) + ln(s_ij) / 2
    + sum_i |U_i|^2 / (2 sigma_u2) + sum_j |V_j|^2 / (2 sigma_v2)
    + lambda_p * sum(P) + lambda_q * sum(Q)

Biases are unregularized and mu is frozen at the training mean.  All
functions here are pure; models are plain data safe to share read-only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DuplicateEntryError

HALF_LN_2PI = 0.5 * math.log(2.0 * math.pi)

PRIOR_SCALINGS = ("unbiased", "per_sample")


@dataclass
class ObservationSet:
    """Sparse (indices, value) samples over a matrix or 3-mode tensor.

    Parameters
    ----------
    mode_sizes : tuple of int
        Dimension sizes; length 2 for a matrix, 3 for a tensor.
    idx : (n, len(mode_sizes)) int64 array
        Cell indices, one row per observation.
    values : (n,) float64 array
        Observed values (ratings or z-scored readings).
    """

    mode_sizes: tuple
    idx: np.ndarray
    values: np.ndarray
    id_maps: list | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mode_sizes = tuple(int(s) for s in self.mode_sizes)
        if len(self.mode_sizes) not in (2, 3):
            raise ConfigError(f"mode_sizes must have length 2 or 3, got {self.mode_sizes}")
        if any(s <= 0 for s in self.mode_sizes):
            raise ConfigError(f"mode sizes must be positive, got {self.mode_sizes}")
        self.idx = np.ascontiguousarray(np.asarray(self.idx, dtype=np.int64).reshape(-1, len(self.mode_sizes)))
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64).ravel())
        if self.idx.shape[0] != self.values.shape[0]:
            raise ConfigError("idx and values length mismatch")
        if self.idx.size:
            if self.idx.min() < 0 or np.any(self.idx >= np.asarray(self.mode_sizes)):
                raise IndexError("observation index out of range")
            flat = np.ravel_multi_index(self.idx.T, self.mode_sizes)
            if np.unique(flat).size != flat.size:
                seen = set()
                for k, f in enumerate(flat.tolist()):
                    if f in seen:
                        raise DuplicateEntryError(tuple(self.idx[k]))
                    seen.add(f)

    @classmethod
    def from_entries(cls, mode_sizes, entries):
        """Build from a list of ((i, j[, t]), value) pairs."""
        m = len(mode_sizes)
        if entries:
            idx = np.array([e[0] for e in entries], dtype=np.int64)
            values = np.array([e[1] for e in entries], dtype=np.float64)
        else:
            idx = np.empty((0, m), dtype=np.int64)
            values = np.empty(0, dtype=np.float64)
        return cls(mode_sizes, idx, values)

    @property
    def n_modes(self):
        return len(self.mode_sizes)

    @property
    def entries(self):
        return [(tuple(row), float(v)) for row, v in zip(self.idx, self.values)]

    def __len__(self):
        return self.values.shape[0]

    def subset(self, positions):
        return ObservationSet(self.mode_sizes, self.idx[positions], self.values[positions])

    def mode_counts(self, mode):
        """Observation count per index along one mode (zeros for untouched rows)."""
        return np.bincount(self.idx[:, mode], minlength=self.mode_sizes[mode]).astype(np.float64)


@dataclass
class MeanModel:
    """Biased low-rank mean: factors U, V, biases u, v, global mean mu."""

    U: np.ndarray
    V: np.ndarray
    u: np.ndarray
    v: np.ndarray
    mu: float

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.mu = float(self.mu)
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError("U and V rank mismatch")
        if self.u.shape[0] != self.U.shape[0] or self.v.shape[0] != self.V.shape[0]:
            raise ValueError("bias length mismatch")

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0])

    def copy(self):
        return MeanModel(self.U.copy(), self.V.copy(), self.u.copy(), self.v.copy(), self.mu)


@dataclass
class DeviationModel:
    """Non-negative low-rank variance factors P, Q with floor delta_sigma2."""

    P: np.ndarray
    Q: np.ndarray
    delta_sigma2: float

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        self.delta_sigma2 = float(self.delta_sigma2)
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValueError("P and Q rank mismatch")
        if self.delta_sigma2 <= 0.0:
            raise ValueError("delta_sigma2 must be positive")
        if (self.P.size and self.P.min() < 0.0) or (self.Q.size and self.Q.min() < 0.0):
            raise ValueError("deviation factors must be non-negative")

    @property
    def rank(self):
        return self.P.shape[1]

    def copy(self):
        return DeviationModel(self.P.copy(), self.Q.copy(), self.delta_sigma2)


@dataclass
class Hyperparams:
    """Training hyperparameters.

    sigma_u2 / sigma_v2 are the Gaussian prior variances of the mean
    factors, lambda_p / lambda_q the exponential prior rates of the
    deviation factors.  sigma_w2 and lambda_s cover the third tensor mode
    and default to sigma_v2 / lambda_q.  dev_learning_rate overrides the
    base rate for deviation factors only (None = shared rate).
    ``prior_scaling="unbiased"`` divides each per-row prior gradient by
    that row's observation count so an epoch of stochastic steps sums to
    the full-objective gradient; ``"per_sample"`` applies it unscaled.
    """

    rank_mean: int = 10
    rank_dev: int | None = None
    sigma_u2: float = 1.0
    sigma_v2: float = 1.0
    sigma_w2: float | None = None
    lambda_p: float = 0.01
    lambda_q: float = 0.01
    lambda_s: float | None = None
    delta_sigma2: float = 0.01
    learning_rate: float = 0.05
    dev_learning_rate: float | None = None
    epochs: int = 100
    seed: int = 0
    prior_scaling: str = "unbiased"

    def __post_init__(self):
        if self.rank_dev is None:
            self.rank_dev = self.rank_mean
        if self.sigma_w2 is None:
            self.sigma_w2 = self.sigma_v2
        if self.lambda_s is None:
            self.lambda_s = self.lambda_q
        if self.rank_mean <= 0 or self.rank_dev <= 0:
            raise ConfigError("ranks must be positive")
        if self.sigma_u2 <= 0 or self.sigma_v2 <= 0 or self.sigma_w2 <= 0:
            raise ConfigError("prior variances must be positive")
        if self.lambda_p < 0 or self.lambda_q < 0 or self.lambda_s < 0:
            raise ConfigError("exponential prior rates must be non-negative")
        if self.delta_sigma2 <= 0:
            raise ConfigError("delta_sigma2 must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.dev_learning_rate is not None and self.dev_learning_rate < 0:
            raise ConfigError("dev_learning_rate must be non-negative")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.prior_scaling not in PRIOR_SCALINGS:
            raise ConfigError(f"prior_scaling must be one of {PRIOR_SCALINGS}")

    @property
    def dev_rate(self):
        return self.learning_rate if self.dev_learning_rate is None else self.dev_learning_rate


@dataclass
class GradientBundle:
    """Gradients of the negative log posterior at one observation.

    Descent direction is the negative of these.  Prior terms are divided
    by the supplied row/column observation counts (1 = full prior, as in
    the single-observation objective).
    """

    dU_i: np.ndarray
    dV_j: np.ndarray
    du_i: float
    dv_j: float
    dP_i: np.ndarray
    dQ_j: np.ndarray


def predict_mean(mean: MeanModel, i: int, j: int) -> float:
    """rhat_ij = U_i . V_j + u_i + v_j + mu."""
    n1, n2 = mean.shape
    if not (0 <= i < n1 and 0 <= j < n2):
        raise IndexError(f"index ({i}, {j}) out of range for {n1}x{n2} model")
    return float(mean.U[i] @ mean.V[j] + mean.u[i] + mean.v[j] + mean.mu)


def predict_variance(dev: DeviationModel, i: int, j: int) -> float:
    """s_ij = P_i . Q_j + delta_sigma2 (>= delta_sigma2 > 0)."""
    if not (0 <= i < dev.P.shape[0] and 0 <= j < dev.Q.shape[0]):
        raise IndexError(f"index ({i}, {j}) out of range for deviation model")
    return float(dev.P[i] @ dev.Q[j] + dev.delta_sigma2)


def predict_mean_many(mean: MeanModel, idx: np.ndarray) -> np.ndarray:
    """Vectorized predict_mean over an (n, 2) index array."""
    i, j = idx[:, 0], idx[:, 1]
    return np.einsum("nk,nk->n", mean.U[i], mean.V[j]) + mean.u[i] + mean.v[j] + mean.mu


def predict_variance_many(dev: DeviationModel, idx: np.ndarray) -> np.ndarray:
    i, j = idx[:, 0], idx[:, 1]
    return np.einsum("nk,nk->n", dev.P[i], dev.Q[j]) + dev.delta_sigma2


def instance_nll(r: float, mean_pred: float, var_pred: float) -> float:
    """Per-observation data loss (r - m)^2 / (2 v) + ln(v) / 2."""
    if var_pred <= 0.0:
        raise ValueError(f"var_pred must be positive, got {var_pred}")
    return (r - mean_pred) ** 2 / (2.0 * var_pred) + 0.5 * math.log(var_pred)


def nll_to_likelihood_check(r: float, mean_pred: float, var_pred: float) -> float:
    """Gaussian negative log density; equals instance_nll + ln(2 pi)/2."""
    if var_pred <= 0.0:
        raise ValueError(f"var_pred must be positive, got {var_pred}")
    return (r - mean_pred) ** 2 / (2.0 * var_pred) + 0.5 * math.log(2.0 * math.pi * var_pred)


def objective(mean: MeanModel, dev: DeviationModel, hp: Hyperparams, obs: ObservationSet) -> float:
    """Negative log posterior over an observation set (constants dropped).

    Hyperparameter-only terms are omitted, so values are comparable only
    at fixed hyperparameters.
    """
    if obs.n_modes != 2:
        raise ValueError("objective expects matrix observations; see tensor.cp_objective")
    n1, n2 = mean.shape
    if obs.mode_sizes != (n1, n2) or dev.P.shape[0] != n1 or dev.Q.shape[0] != n2:
        raise ValueError(f"model {mean.shape} incompatible with observations {obs.mode_sizes}")
    total = 0.0
    if len(obs):
        pred = predict_mean_many(mean, obs.idx)
        var = predict_variance_many(dev, obs.idx)
        if np.any(var <= 0.0):
            raise ValueError("non-positive predicted variance")
        resid = obs.values - pred
        total += float(np.sum(resid * resid / (2.0 * var)) + 0.5 * np.sum(np.log(var)))
    total += float(np.sum(mean.U * mean.U) / (2.0 * hp.sigma_u2))
    total += float(np.sum(mean.V * mean.V) / (2.0 * hp.sigma_v2))
    total += hp.lambda_p * float(np.sum(dev.P)) + hp.lambda_q * float(np.sum(dev.Q))
    return total


def gradient_at(mean, dev, hp, observation, n_i=1.0, n_j=1.0) -> GradientBundle:
    """Analytic gradient of the negative log posterior at one observation.

    n_i / n_j are the prior-scaling divisors: the number of training
    observations touching row i / column j under ``unbiased`` scaling,
    1 under ``per_sample``.  With n = 1 the bundle matches finite
    differences of ``objective`` on a single-observation set.
    """
    i, j, r = observation
    e = r - predict_mean(mean, i, j)
    s = predict_variance(dev, i, j)
    es = e / s
    dU_i = -es * mean.V[j] + mean.U[i] / (hp.sigma_u2 * n_i)
    dV_j = -es * mean.U[i] + mean.V[j] / (hp.sigma_v2 * n_j)
    c = 0.5 / s - 0.5 * e * e / (s * s)
    dP_i = c * dev.Q[j] + hp.lambda_p / n_i
    dQ_j = c * dev.P[i] + hp.lambda_q / n_j
    return GradientBundle(dU_i=dU_i, dV_j=dV_j, du_i=-es, dv_j=-es, dP_i=dP_i, dQ_j=dQ_j)
