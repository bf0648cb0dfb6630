"""3-mode CP generalization of the mean and variance models.

A cell (i, j, t) gets the mean sum_k U_ik V_jk W_tk + u_i + v_j + w_t + mu
and the variance sum_k P_ik Q_jk S_tk + delta_sigma2 with non-negative
P, Q, S.  With mode-3 size 1 and all-ones W/S rows this reduces exactly
to the matrix model, which the tests rely on.
"""

from dataclasses import dataclass

import numpy as np

from .core import Hyperparams, ObservationSet


@dataclass
class CpMeanModel:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    mu: float

    def __post_init__(self):
        self.U = np.ascontiguousarray(self.U, dtype=np.float64)
        self.V = np.ascontiguousarray(self.V, dtype=np.float64)
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        self.w = np.ascontiguousarray(self.w, dtype=np.float64)
        self.mu = float(self.mu)
        if not (self.U.shape[1] == self.V.shape[1] == self.W.shape[1]):
            raise ValueError("factor rank mismatch")

    @property
    def rank(self):
        return self.U.shape[1]

    @property
    def shape(self):
        return (self.U.shape[0], self.V.shape[0], self.W.shape[0])

    def copy(self):
        return CpMeanModel(self.U.copy(), self.V.copy(), self.W.copy(),
                           self.u.copy(), self.v.copy(), self.w.copy(), self.mu)


@dataclass
class CpDeviationModel:
    P: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    delta_sigma2: float

    def __post_init__(self):
        self.P = np.ascontiguousarray(self.P, dtype=np.float64)
        self.Q = np.ascontiguousarray(self.Q, dtype=np.float64)
        self.S = np.ascontiguousarray(self.S, dtype=np.float64)
        self.delta_sigma2 = float(self.delta_sigma2)
        if not (self.P.shape[1] == self.Q.shape[1] == self.S.shape[1]):
            raise ValueError("factor rank mismatch")
        if self.delta_sigma2 <= 0.0:
            raise ValueError("delta_sigma2 must be positive")
        for m in (self.P, self.Q, self.S):
            if m.size and m.min() < 0.0:
                raise ValueError("deviation factors must be non-negative")

    @property
    def rank(self):
        return self.P.shape[1]

    def copy(self):
        return CpDeviationModel(self.P.copy(), self.Q.copy(), self.S.copy(), self.delta_sigma2)


@dataclass
class CpGradientBundle:
    dU_i: np.ndarray
    dV_j: np.ndarray
    dW_t: np.ndarray
    du_i: float
    dv_j: float
    dw_t: float
    dP_i: np.ndarray
    dQ_j: np.ndarray
    dS_t: np.ndarray


def cp_predict_mean(mean: CpMeanModel, i: int, j: int, t: int) -> float:
    n1, n2, n3 = mean.shape
    if not (0 <= i < n1 and 0 <= j < n2 and 0 <= t < n3):
        raise IndexError(f"index ({i}, {j}, {t}) out of range for {n1}x{n2}x{n3} model")
    return float(np.sum(mean.U[i] * mean.V[j] * mean.W[t]) + mean.u[i] + mean.v[j] + mean.w[t] + mean.mu)


def cp_predict_variance(dev: CpDeviationModel, i: int, j: int, t: int) -> float:
    if not (0 <= i < dev.P.shape[0] and 0 <= j < dev.Q.shape[0] and 0 <= t < dev.S.shape[0]):
        raise IndexError(f"index ({i}, {j}, {t}) out of range for deviation model")
    return float(np.sum(dev.P[i] * dev.Q[j] * dev.S[t]) + dev.delta_sigma2)


def cp_predict_mean_many(mean: CpMeanModel, idx: np.ndarray) -> np.ndarray:
    i, j, t = idx[:, 0], idx[:, 1], idx[:, 2]
    core = np.einsum("nk,nk,nk->n", mean.U[i], mean.V[j], mean.W[t])
    return core + mean.u[i] + mean.v[j] + mean.w[t] + mean.mu


def cp_predict_variance_many(dev: CpDeviationModel, idx: np.ndarray) -> np.ndarray:
    i, j, t = idx[:, 0], idx[:, 1], idx[:, 2]
    return np.einsum("nk,nk,nk->n", dev.P[i], dev.Q[j], dev.S[t]) + dev.delta_sigma2


def cp_objective(mean: CpMeanModel, dev: CpDeviationModel, hp: Hyperparams,
                 obs: ObservationSet) -> float:
    """Tensor negative log posterior; mirrors core.objective with a W prior
    (variance hp.sigma_w2) and an exponential prior on S (rate hp.lambda_s)."""
    if obs.n_modes != 3:
        raise ValueError("cp_objective expects 3-mode observations")
    if obs.mode_sizes != mean.shape:
        raise ValueError(f"model {mean.shape} incompatible with observations {obs.mode_sizes}")
    total = 0.0
    if len(obs):
        pred = cp_predict_mean_many(mean, obs.idx)
        var = cp_predict_variance_many(dev, obs.idx)
        if np.any(var <= 0.0):
            raise ValueError("non-positive predicted variance")
        resid = obs.values - pred
        total += float(np.sum(resid * resid / (2.0 * var)) + 0.5 * np.sum(np.log(var)))
    total += float(np.sum(mean.U * mean.U) / (2.0 * hp.sigma_u2))
    total += float(np.sum(mean.V * mean.V) / (2.0 * hp.sigma_v2))
    total += float(np.sum(mean.W * mean.W) / (2.0 * hp.sigma_w2))
    total += hp.lambda_p * float(np.sum(dev.P))
    total += hp.lambda_q * float(np.sum(dev.Q))
    total += hp.lambda_s * float(np.sum(dev.S))
    return total


def cp_gradient_at(mean, dev, hp, observation, n_i=1.0, n_j=1.0, n_t=1.0) -> CpGradientBundle:
    """Analytic single-observation gradient; chain rule through the CP forms.

    Prior-scaling divisors per mode as in core.gradient_at.
    """
    i, j, t, r = observation
    e = r - cp_predict_mean(mean, i, j, t)
    s = cp_predict_variance(dev, i, j, t)
    es = e / s
    dU_i = -es * (mean.V[j] * mean.W[t]) + mean.U[i] / (hp.sigma_u2 * n_i)
    dV_j = -es * (mean.U[i] * mean.W[t]) + mean.V[j] / (hp.sigma_v2 * n_j)
    dW_t = -es * (mean.U[i] * mean.V[j]) + mean.W[t] / (hp.sigma_w2 * n_t)
    c = 0.5 / s - 0.5 * e * e / (s * s)
    dP_i = c * (dev.Q[j] * dev.S[t]) + hp.lambda_p / n_i
    dQ_j = c * (dev.P[i] * dev.S[t]) + hp.lambda_q / n_j
    dS_t = c * (dev.P[i] * dev.Q[j]) + hp.lambda_s / n_t
    return CpGradientBundle(dU_i=dU_i, dV_j=dV_j, dW_t=dW_t, du_i=-es, dv_j=-es, dw_t=-es,
                            dP_i=dP_i, dQ_j=dQ_j, dS_t=dS_t)
