"""devmf: low-rank mean + non-negative low-rank variance factorization.

Fits sparse matrices (and 3-mode tensors) with a jointly learned mean
model and per-instance variance model by projected per-observation SGD,
so unevenly noisy entries are down-weighted where the data say they are
noisy.  Includes a squared-error baseline, synthetic data with known
noise structure, evaluation utilities, a weighted-linear-regression
demo, and a command-line pipeline.
"""

from .core import (DeviationModel, Hyperparams, MeanModel, ObservationSet,
                   instance_nll, objective, predict_mean, predict_mean_many,
                   predict_variance, predict_variance_many)
from .data import (SplitSpec, SyntheticSpec, load_observations,
                   normalize_per_sensor, split, synthesize)
from .dlr import deviation_weights, figure2_experiment, ols_solve, wls_solve
from .errors import (ConfigError, DegenerateSliceError, DevmfError,
                     DivergenceError, DuplicateEntryError, ParseError,
                     SingularSystemError)
from .evaluate import (MetricReport, evaluate_model, rmse,
                       sweep_train_fraction, variance_recovery)
from .optim import TrainConfig, TrainReport, initialize, train
from .serialize import load_model, save_model
from .tensor import CpDeviationModel, CpMeanModel, cp_objective

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CpDeviationModel", "CpMeanModel", "DegenerateSliceError",
    "DeviationModel", "DevmfError", "DivergenceError", "DuplicateEntryError",
    "Hyperparams", "MeanModel", "MetricReport", "ObservationSet", "ParseError",
    "SingularSystemError", "SplitSpec", "SyntheticSpec", "TrainConfig",
    "TrainReport", "cp_objective", "deviation_weights", "evaluate_model",
    "figure2_experiment", "initialize", "instance_nll", "load_model",
    "load_observations", "normalize_per_sensor", "objective", "ols_solve",
    "predict_mean", "predict_mean_many", "predict_variance",
    "predict_variance_many", "rmse", "save_model", "split",
    "sweep_train_fraction", "synthesize", "train", "variance_recovery",
    "wls_solve",
]
