"""Metrics, model evaluation with cold-start handling, and sweeps.

Cold-start tuples are those whose row/column (or tube) index is outside
the trained model, negative (an unmapped raw id), or flagged unseen by
the caller-provided per-mode masks; they receive the configured default
prediction and are counted separately.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.stats

from .core import ObservationSet, predict_mean_many, predict_variance_many
from .errors import ConfigError
from .optim import TrainConfig, train
from .tensor import cp_predict_mean_many, cp_predict_variance_many


@dataclass
class MetricReport:
    rmse: float
    mse: float
    n: int
    cold_start_count: int


def mse(predictions, truths):
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: predictions {p.shape} vs truths {t.shape}")
    if p.size == 0:
        raise ValueError("need at least one prediction")
    d = p - t
    return float(np.mean(d * d))


def rmse(predictions, truths):
    """sqrt(mean squared error)."""
    return float(np.sqrt(mse(predictions, truths)))


def _predict(mean, idx):
    if idx.shape[1] == 2:
        return predict_mean_many(mean, idx)
    return cp_predict_mean_many(mean, idx)


def evaluate_model(mean, test, cold_start_value=None, seen_masks=None):
    """Predict every test tuple and return a MetricReport.

    test is an ObservationSet or an (idx, values) pair — the latter may
    contain -1 / out-of-range indices for unmapped raw ids.  seen_masks,
    when given, is one boolean array per mode marking indices that
    actually occurred in training; tuples failing either check predict
    cold_start_value (required if any such tuple exists).
    """
    if isinstance(test, ObservationSet):
        idx, values = test.idx, test.values
    else:
        idx, values = test
        idx = np.asarray(idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("test set must be non-empty")
    shape = mean.shape
    if idx.shape[1] != len(shape):
        raise ValueError(f"test tuples have {idx.shape[1]} modes, model has {len(shape)}")

    cold = np.zeros(len(values), dtype=bool)
    for m, size in enumerate(shape):
        col = idx[:, m]
        cold |= (col < 0) | (col >= size)
        if seen_masks is not None:
            in_range = (col >= 0) & (col < size)
            unseen = np.zeros_like(cold)
            unseen[in_range] = ~seen_masks[m][col[in_range]]
            cold |= unseen

    n_cold = int(np.count_nonzero(cold))
    if n_cold and cold_start_value is None:
        raise ConfigError(f"{n_cold} cold-start tuples but no cold-start default configured")
    predictions = np.empty(len(values))
    if n_cold:
        predictions[cold] = cold_start_value
    if n_cold < len(values):
        predictions[~cold] = _predict(mean, idx[~cold])
    err = mse(predictions, values)
    return MetricReport(rmse=float(np.sqrt(err)), mse=err, n=len(values),
                        cold_start_count=n_cold)


def seen_masks_from(obs: ObservationSet):
    """Per-mode boolean masks of indices with at least one training entry."""
    return [obs.mode_counts(m) > 0 for m in range(obs.n_modes)]


def variance_recovery(dev, true_variance, idx):
    """Spearman rank correlation between predicted and true per-cell
    variance over the given cells.

    true_variance is the full field array; returns (correlation,
    degenerate) with correlation 0 and degenerate=True when either side
    is constant (no ordering to compare).
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[1] == 2:
        predicted = predict_variance_many(dev, idx)
    else:
        predicted = cp_predict_variance_many(dev, idx)
    truth = np.asarray(true_variance)[tuple(idx.T)]
    if np.ptp(predicted) == 0.0 or np.ptp(truth) == 0.0:
        return 0.0, True
    rho = scipy.stats.spearmanr(predicted, truth).statistic
    return float(rho), False


@dataclass
class SweepRow:
    method: str
    fraction: float
    repeat: int
    rmse: float
    mse: float
    n: int
    cold_start_count: int


@dataclass
class SweepResult:
    rows: list

    def median_mse(self, method, fraction):
        vals = [r.mse for r in self.rows
                if r.method == method and r.fraction == fraction]
        return float(np.median(vals))

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("method,fraction,repeat,rmse,mse,n,cold_start_count\n")
            for r in self.rows:
                fh.write(f"{r.method},{r.fraction:.12g},{r.repeat},"
                         f"{r.rmse:.12g},{r.mse:.12g},{r.n},{r.cold_start_count}\n")


def sweep_train_fraction(obs, fractions, methods, repeats, seed, hp,
                         test_fraction=0.1):
    """Hold out a fixed test split, then for each (fraction, method,
    repeat) train on a fraction-sized subsample of the remaining pool
    and evaluate on the held-out observations.

    Cold-start tuples (indices absent from the subsample) predict the
    subsample mean.  Deterministic given seed.
    """
    from .data import SplitSpec, split  # local import: data imports core only

    fractions = list(fractions)
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError("fractions must lie in (0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ConfigError("fractions must be strictly increasing")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")

    pool, _, test = split(obs, SplitSpec(test_fraction=test_fraction,
                                         val_fraction_of_train=0.0, seed=seed))
    rows = []
    for fi, fraction in enumerate(fractions):
        n_sub = max(1, int(round(fraction * len(pool))))
        for repeat in range(repeats):
            pos = np.random.default_rng([seed, fi, repeat]).choice(
                len(pool), size=n_sub, replace=False)
            sub = pool.subset(pos)
            for method in methods:
                cfg = TrainConfig(hp=replace(hp), model_kind=method)
                mean, _, _ = train(sub, cfg)
                report = evaluate_model(
                    mean, test,
                    cold_start_value=float(np.mean(sub.values)),
                    seen_masks=seen_masks_from(sub))
                rows.append(SweepRow(method, fraction, repeat, report.rmse,
                                     report.mse, report.n, report.cold_start_count))
    return SweepResult(rows)
