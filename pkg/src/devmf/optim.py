"""Per-observation SGD trainer with AdaGrad scheduling and projection.

Supports four model kinds on sparse observations:

  * ``dmf``       joint mean + variance matrix factorization
  * ``biased_mf`` squared-error baseline (deviation frozen at zero,
                  variance pinned to 1), loss SSE + |U|^2/sigma_u2 + ...
  * ``dtf``/``ptf`` the 3-mode CP counterparts

After every single step the touched deviation-factor rows are projected
onto the non-negative orthant.  ``schedule="constant"`` replaces AdaGrad
with a fixed step; with it, a biased baseline at half the learning rate
reproduces the frozen-deviation model's mean iterates exactly (the data
gradients differ by exactly a factor of two), which the acceptance suite
exercises.

Training is deterministic given (seed, config, observations): the visit
order reshuffles each epoch from seed XOR epoch, and all other draws come
from the seed.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .core import (DeviationModel, Hyperparams, MeanModel, ObservationSet,
                   predict_mean_many)
from .errors import ConfigError, DivergenceError
from .tensor import CpDeviationModel, CpMeanModel, cp_predict_mean_many

MODEL_KINDS = ("biased_mf", "dmf", "ptf", "dtf")
SCHEDULES = ("adagrad", "constant")

_DEVIATION_KINDS = ("dmf", "dtf")
_TENSOR_KINDS = ("ptf", "dtf")


@dataclass
class AdaGradState:
    """One squared-gradient accumulator per parameter id, all starting at 0."""

    base_rate: float
    epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)


def adagrad_step(state: AdaGradState, param_id, grad: float) -> float:
    """Accumulate grad^2 and return -base_rate * grad / sqrt(acc + eps).

    A zero gradient returns 0 and leaves the accumulator untouched; a
    non-finite gradient aborts the step.
    """
    if not math.isfinite(grad):
        raise FloatingPointError(f"non-finite gradient for parameter {param_id!r}")
    if grad == 0.0:
        return 0.0
    acc = state.accumulators.get(param_id, 0.0) + grad * grad
    state.accumulators[param_id] = acc
    return -state.base_rate * grad / math.sqrt(acc + state.epsilon)


def project_nonneg(x):
    """Elementwise max(x, 0); idempotent."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


@dataclass
class TrainConfig:
    hp: Hyperparams
    model_kind: str = "dmf"
    shuffle: bool = True
    early_stop_patience: int = 10
    val_fraction: float = 0.0
    schedule: str = "adagrad"
    adagrad_epsilon: float = 1e-8
    use_biases: bool = True
    max_param: float = 1e8

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in [0, 1)")
        if self.early_stop_patience < 0:
            raise ConfigError("early_stop_patience must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_rmse: float
    val_rmse: float | None
    objective: float
    dev_sparsity: float
    seconds: float


@dataclass
class TrainReport:
    records: list
    best_epoch: int

    def to_csv(self, path, zero_seconds=False):
        """Write `epoch,train_rmse,val_rmse,objective,dev_sparsity,seconds`.

        zero_seconds replaces wall-clock timings with 0 so identical runs
        produce byte-identical files.
        """
        with open(path, "w") as fh:
            fh.write("epoch,train_rmse,val_rmse,objective,dev_sparsity,seconds\n")
            for rec in self.records:
                val = "" if rec.val_rmse is None else f"{rec.val_rmse:.12g}"
                secs = 0.0 if zero_seconds else rec.seconds
                fh.write(f"{rec.epoch},{rec.train_rmse:.12g},{val},"
                         f"{rec.objective:.12g},{rec.dev_sparsity:.12g},{secs:.6g}\n")


def initialize(mode_sizes, hp: Hyperparams, seed: int, mu: float = 0.0):
    """Draw fresh mean/deviation models: U, V (, W) uniform in
    +-0.5/sqrt(D), biases zero, P, Q (, S) uniform in [0, 0.1]."""
    rng = np.random.default_rng(seed)
    D, Dp = hp.rank_mean, hp.rank_dev
    scale = 0.5 / math.sqrt(D)
    facs = [rng.uniform(-scale, scale, (n, D)) for n in mode_sizes]
    devs = [rng.uniform(0.0, 0.1, (n, Dp)) for n in mode_sizes]
    if len(mode_sizes) == 2:
        n1, n2 = mode_sizes
        mean = MeanModel(facs[0], facs[1], np.zeros(n1), np.zeros(n2), mu)
        dev = DeviationModel(devs[0], devs[1], hp.delta_sigma2)
    else:
        n1, n2, n3 = mode_sizes
        mean = CpMeanModel(facs[0], facs[1], facs[2],
                           np.zeros(n1), np.zeros(n2), np.zeros(n3), mu)
        dev = CpDeviationModel(devs[0], devs[1], devs[2], hp.delta_sigma2)
    return mean, dev


def _mean_rmse(mean, obs):
    if obs.n_modes == 2:
        pred = predict_mean_many(mean, obs.idx)
    else:
        pred = cp_predict_mean_many(mean, obs.idx)
    resid = pred - obs.values
    return float(np.sqrt(np.mean(resid * resid)))


def _prior_value(mean, dev, hp, deviation):
    """Parameter-prior part of the epoch objective.  For deviation kinds
    this matches objective()/cp_objective(); for the squared-error
    baselines the loss is SSE + |U|^2/sigma_u2 + |V|^2/sigma_v2 (+ the
    W term), i.e. the Gaussian priors at twice the deviation weight and
    no exponential terms."""
    half = 2.0 if deviation else 1.0
    total = float(np.sum(mean.U * mean.U)) / (half * hp.sigma_u2)
    total += float(np.sum(mean.V * mean.V)) / (half * hp.sigma_v2)
    if hasattr(mean, "W"):
        total += float(np.sum(mean.W * mean.W)) / (half * hp.sigma_w2)
    if deviation:
        total += hp.lambda_p * float(np.sum(dev.P)) + hp.lambda_q * float(np.sum(dev.Q))
        if hasattr(dev, "S"):
            total += hp.lambda_s * float(np.sum(dev.S))
    return total


def _dev_sparsity(dev):
    mats = [dev.P, dev.Q] + ([dev.S] if hasattr(dev, "S") else [])
    total = sum(m.size for m in mats)
    zeros = sum(int(np.count_nonzero(m == 0.0)) for m in mats)
    return zeros / total if total else 0.0


def _check_finite(epoch, mean, dev, max_param):
    arrays = [mean.U, mean.V, mean.u, mean.v, dev.P, dev.Q]
    if hasattr(mean, "W"):
        arrays += [mean.W, mean.w, dev.S]
    for a in arrays:
        if a.size and (not np.all(np.isfinite(a)) or np.max(np.abs(a)) > max_param):
            raise DivergenceError(epoch, "parameter magnitude exceeded guard")


def _split_validation(obs, val_fraction, seed):
    n = len(obs)
    n_val = int(round(n * val_fraction))
    if n_val == 0:
        return obs, None
    if n_val >= n:
        raise ConfigError("val_fraction leaves no training data")
    perm = np.random.default_rng([seed, 1]).permutation(n)
    return obs.subset(perm[n_val:]), obs.subset(perm[:n_val])


def train(obs: ObservationSet, cfg: TrainConfig, val: ObservationSet | None = None,
          init=None):
    """Train cfg.model_kind on obs; returns (mean, dev, TrainReport).

    If val is None and cfg.val_fraction > 0 a validation set is split off
    internally.  With early stopping enabled (patience > 0 and a
    validation set present) the returned parameters come from the best
    validation epoch, otherwise from the final epoch.  `init` overrides
    the seeded initialization (models are copied, never mutated).
    """
    if len(obs) == 0:
        raise ConfigError("training requires at least one observation")
    hp = cfg.hp
    is_tensor = obs.n_modes == 3
    if is_tensor != (cfg.model_kind in _TENSOR_KINDS):
        raise ConfigError(f"model_kind {cfg.model_kind} incompatible with "
                          f"{obs.n_modes}-mode observations")
    train_obs, val_obs = (obs, val) if val is not None else \
        _split_validation(obs, cfg.val_fraction, hp.seed)

    deviation = cfg.model_kind in _DEVIATION_KINDS
    if init is not None:
        mean, dev = init[0].copy(), init[1].copy()
    else:
        mu = float(np.mean(train_obs.values))
        mean, dev = initialize(obs.mode_sizes, hp, hp.seed, mu)
    if not deviation:
        # squared-error baseline: variance pinned to 1, deviation frozen at 0
        zeros = [np.zeros((n, hp.rank_dev)) for n in obs.mode_sizes]
        dev = DeviationModel(zeros[0], zeros[1], 1.0) if not is_tensor \
            else CpDeviationModel(zeros[0], zeros[1], zeros[2], 1.0)

    report = TrainReport(records=[], best_epoch=-1)
    if hp.epochs == 0:
        return mean, dev, report

    counts = [train_obs.mode_counts(m) for m in range(obs.n_modes)]
    if hp.prior_scaling == "unbiased":
        divisors = [np.maximum(c, 1.0) for c in counts]
    else:
        divisors = [np.ones_like(c) for c in counts]
    sigmas = [hp.sigma_u2, hp.sigma_v2, hp.sigma_w2]
    dens = [sigmas[m] * divisors[m] for m in range(obs.n_modes)]

    grad_scale = 1.0 if deviation else 2.0
    use_adagrad = cfg.schedule == "adagrad"
    lr, lr_dev, eps = hp.learning_rate, hp.dev_rate, cfg.adagrad_epsilon

    acc_mean = [np.zeros_like(m) for m in ([mean.U, mean.V, mean.W] if is_tensor
                                           else [mean.U, mean.V])]
    acc_bias = [np.zeros(n) for n in obs.mode_sizes]
    acc_dev = [np.zeros_like(m) for m in ([dev.P, dev.Q, dev.S] if is_tensor
                                          else [dev.P, dev.Q])]

    idx = [np.ascontiguousarray(train_obs.idx[:, m]) for m in range(obs.n_modes)]
    vals = train_obs.values
    n = len(train_obs)
    best_val = math.inf
    best_params = None
    early_stop = cfg.early_stop_patience > 0 and val_obs is not None

    for epoch in range(hp.epochs):
        t0 = time.perf_counter()
        if cfg.shuffle:
            order = np.random.default_rng(hp.seed ^ epoch).permutation(n)
        else:
            order = np.arange(n, dtype=np.int64)
        if is_tensor:
            _kernels.tensor_epoch(
                order, idx[0], idx[1], idx[2], vals,
                mean.U, mean.V, mean.W, mean.u, mean.v, mean.w, mean.mu,
                dev.P, dev.Q, dev.S, dev.delta_sigma2,
                acc_mean[0], acc_mean[1], acc_mean[2],
                acc_bias[0], acc_bias[1], acc_bias[2],
                acc_dev[0], acc_dev[1], acc_dev[2],
                dens[0], dens[1], dens[2],
                divisors[0], divisors[1], divisors[2],
                hp.lambda_p, hp.lambda_q, hp.lambda_s,
                lr, lr_dev, eps,
                grad_scale, deviation, use_adagrad, cfg.use_biases)
        else:
            _kernels.matrix_epoch(
                order, idx[0], idx[1], vals,
                mean.U, mean.V, mean.u, mean.v, mean.mu,
                dev.P, dev.Q, dev.delta_sigma2,
                acc_mean[0], acc_mean[1], acc_bias[0], acc_bias[1],
                acc_dev[0], acc_dev[1],
                dens[0], dens[1], divisors[0], divisors[1],
                hp.lambda_p, hp.lambda_q,
                lr, lr_dev, eps,
                grad_scale, deviation, use_adagrad, cfg.use_biases)

        _check_finite(epoch, mean, dev, cfg.max_param)
        if is_tensor:
            sse, nll = _kernels.tensor_eval(
                idx[0], idx[1], idx[2], vals,
                mean.U, mean.V, mean.W, mean.u, mean.v, mean.w, mean.mu,
                dev.P, dev.Q, dev.S, dev.delta_sigma2)
        else:
            sse, nll = _kernels.matrix_eval(
                idx[0], idx[1], vals,
                mean.U, mean.V, mean.u, mean.v, mean.mu,
                dev.P, dev.Q, dev.delta_sigma2)
        obj = (nll if deviation else sse) + _prior_value(mean, dev, hp, deviation)
        if not math.isfinite(obj):
            raise DivergenceError(epoch, "objective is not finite")

        train_rmse = math.sqrt(sse / n)
        val_rmse = _mean_rmse(mean, val_obs) if val_obs is not None and len(val_obs) else None
        seconds = time.perf_counter() - t0
        report.records.append(EpochRecord(epoch, train_rmse, val_rmse, obj,
                                          _dev_sparsity(dev), seconds))

        if val_rmse is not None and val_rmse < best_val:
            best_val = val_rmse
            report.best_epoch = epoch
            if early_stop:
                best_params = (mean.copy(), dev.copy())
        if early_stop and epoch - report.best_epoch >= cfg.early_stop_patience:
            break

    if report.best_epoch < 0:
        report.best_epoch = report.records[-1].epoch
    if early_stop and best_params is not None:
        mean, dev = best_params
    return mean, dev, report


def warm_up():
    """Compile (or load from cache) both kernels on a toy problem."""
    hp = Hyperparams(rank_mean=2, rank_dev=2, epochs=1, seed=0)
    for kind, sizes in (("dmf", (3, 3)), ("biased_mf", (3, 3)),
                        ("dtf", (3, 3, 2)), ("ptf", (3, 3, 2))):
        idx = [(0, 0), (1, 1), (2, 2)] if len(sizes) == 2 else [(0, 0, 0), (1, 1, 1), (2, 2, 0)]
        toy = ObservationSet.from_entries(sizes, [(ix, 1.0) for ix in idx])
        train(toy, TrainConfig(hp=replace(hp), model_kind=kind))
