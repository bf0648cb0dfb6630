"""Command-line interface: split / train / eval / synth / demo-dlr.

Every command is deterministic given its full flag set (all randomness
flows from --seed); the train metrics CSV writes zeros in the seconds
column by default so repeated runs are byte-identical (opt into wall
times with --timing wall).

Train flags may also come from a plain-text config file of `key=value`
lines (keys named like the long flags); explicit flags win over file
values, which win over built-in defaults.
"""

import argparse
import sys

import numpy as np

from . import data as dat
from . import dlr, serialize
from .core import Hyperparams, ObservationSet
from .errors import ConfigError, DevmfError
from .evaluate import evaluate_model
from .optim import MODEL_KINDS, SCHEDULES, TrainConfig, train

FORMAT_ALIASES = {"movielens": "movielens_dat", "csv3": "csv_triplet",
                  "csv4": "csv_quad"}

# train option -> (type converter, built-in default); config-file values
# pass through the same converters as the flags.
TRAIN_OPTION_SPEC = {
    "model": (str, "dmf"),
    "rank": (int, 10),
    "dev-rank": (int, None),
    "lr": (float, 0.05),
    "dev-lr": (float, None),
    "epochs": (int, 100),
    "sigma-u2": (float, 1.0),
    "sigma-v2": (float, 1.0),
    "sigma-w2": (float, None),
    "lambda-p": (float, 0.01),
    "lambda-q": (float, 0.01),
    "lambda-s": (float, None),
    "delta-sigma2": (float, 0.01),
    "prior-scaling": (str, "unbiased"),
    "patience": (int, 10),
    "val-fraction": (float, 0.0),
    "schedule": (str, "adagrad"),
    "seed": (int, 0),
    "timing": (str, "zero"),
}


def _fmt(name):
    return FORMAT_ALIASES[name]


def _load_config_file(path):
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, raw = line.partition("=")
            key = key.strip().replace("_", "-")
            if not eq or key not in TRAIN_OPTION_SPEC:
                raise ConfigError(f"{path}:{line_no}: unknown config entry {line!r}")
            values[key] = TRAIN_OPTION_SPEC[key][0](raw.strip())
    return values


def _resolve_train_options(args):
    file_values = _load_config_file(args.config) if args.config else {}
    resolved = {}
    for key, (_, default) in TRAIN_OPTION_SPEC.items():
        flag_value = getattr(args, key.replace("-", "_"))
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_values:
            resolved[key] = file_values[key]
        else:
            resolved[key] = default
    if resolved["model"] not in MODEL_KINDS:
        raise ConfigError(f"model must be one of {MODEL_KINDS}")
    if resolved["schedule"] not in SCHEDULES:
        raise ConfigError(f"schedule must be one of {SCHEDULES}")
    if resolved["timing"] not in ("zero", "wall"):
        raise ConfigError("timing must be zero or wall")
    return resolved


# ---------------------------------------------------------------------------
# subcommands

def cmd_split(args):
    fmt = _fmt(args.format)
    entries = dat.load_raw_entries(args.input, fmt)
    dat.load_observations(args.input, fmt)  # full validation incl. duplicates
    spec = dat.SplitSpec(test_fraction=args.test_fraction,
                         val_fraction_of_train=args.val_fraction,
                         seed=args.seed)
    train_pos, val_pos, test_pos = dat.split_positions(len(entries), spec)
    parts = {"train": train_pos, "val": val_pos, "test": test_pos}
    for name, positions in parts.items():
        dat.write_entries(f"{args.out_prefix}.{name}", fmt,
                          [entries[p] for p in positions])
    with open(f"{args.out_prefix}.manifest.txt", "w") as fh:
        fh.write("command split\n")
        fh.write(f"input {args.input}\n")
        fh.write(f"format {fmt}\n")
        fh.write(f"seed {args.seed}\n")
        fh.write(f"test_fraction {args.test_fraction:.12g}\n")
        fh.write(f"val_fraction_of_train {args.val_fraction:.12g}\n")
        fh.write(f"n_total {len(entries)}\n")
        for name, positions in parts.items():
            fh.write(f"n_{name} {len(positions)}\n")
    print(f"split {len(entries)} entries -> train={len(train_pos)} "
          f"val={len(val_pos)} test={len(test_pos)}")
    return 0


def _load_val_against(train_obs, path, fmt):
    raw = dat.load_raw_entries(path, fmt)
    idx, values, mapped = dat.map_through(raw, train_obs.id_maps)
    dropped = len(raw) - int(np.count_nonzero(mapped))
    if dropped:
        print(f"dropped {dropped} validation entries with ids unseen in training")
    if not np.any(mapped):
        return None
    return ObservationSet(train_obs.mode_sizes, idx[mapped], values[mapped])


def cmd_train(args):
    opt = _resolve_train_options(args)
    fmt = _fmt(args.format)
    train_obs = dat.load_observations(args.train, fmt)
    hp = Hyperparams(rank_mean=opt["rank"], rank_dev=opt["dev-rank"],
                     sigma_u2=opt["sigma-u2"], sigma_v2=opt["sigma-v2"],
                     sigma_w2=opt["sigma-w2"],
                     lambda_p=opt["lambda-p"], lambda_q=opt["lambda-q"],
                     lambda_s=opt["lambda-s"],
                     delta_sigma2=opt["delta-sigma2"],
                     learning_rate=opt["lr"], dev_learning_rate=opt["dev-lr"],
                     epochs=opt["epochs"], seed=opt["seed"],
                     prior_scaling=opt["prior-scaling"].replace("-", "_"))
    cfg = TrainConfig(hp=hp, model_kind=opt["model"],
                      early_stop_patience=opt["patience"],
                      val_fraction=opt["val-fraction"],
                      schedule=opt["schedule"])
    val_obs = _load_val_against(train_obs, args.val, fmt) if args.val else None
    mean, dev, report = train(train_obs, cfg, val=val_obs)

    if args.model_out:
        serialize.save_model(args.model_out, mean, dev, kind=opt["model"])
        dat.save_id_maps(args.model_out, train_obs.id_maps)
    if args.metrics_out:
        report.to_csv(args.metrics_out, zero_seconds=opt["timing"] == "zero")

    last = report.records[-1] if report.records else None
    best_val = min((r.val_rmse for r in report.records if r.val_rmse is not None),
                   default=None)
    pieces = [f"model={opt['model']}", f"epochs_run={len(report.records)}",
              f"best_epoch={report.best_epoch}"]
    if last is not None:
        pieces.append(f"final_train_rmse={last.train_rmse:.6f}")
    if best_val is not None:
        pieces.append(f"best_val_rmse={best_val:.6f}")
    print(" ".join(pieces))
    return 0


def cmd_eval(args):
    mean, _, kind = serialize.load_model(args.model)
    n_modes = len(mean.shape)
    fmt = _fmt(args.format)
    if dat.FORMATS[fmt][1] != n_modes:
        raise ConfigError(f"format {args.format} has {dat.FORMATS[fmt][1]} index "
                          f"modes but the model has {n_modes}")
    maps = dat.load_id_maps(args.model, n_modes)
    raw = dat.load_raw_entries(args.test, fmt)
    idx, values, _ = dat.map_through(raw, maps)
    policy = args.cold_start or ("rating" if args.format == "movielens" else "mean")
    cold_value = dat.cold_start_default(policy, mean.mu)
    report = evaluate_model(mean, (idx, values), cold_start_value=cold_value)
    print(f"rmse={report.rmse:.6f} mse={report.mse:.6f} n={report.n} "
          f"cold_start_count={report.cold_start_count}")
    if args.metrics_out:
        with open(args.metrics_out, "w") as fh:
            fh.write("method,fraction,repeat,rmse,mse,n,cold_start_count\n")
            fh.write(f"{kind},1,0,{report.rmse:.12g},{report.mse:.12g},"
                     f"{report.n},{report.cold_start_count}\n")
    return 0


def cmd_synth(args):
    try:
        shape = tuple(int(n) for n in args.shape.split("x"))
    except ValueError:
        raise ConfigError(f"bad --shape {args.shape!r}; use e.g. 200x200 or 10x12x7") from None
    spec = dat.SyntheticSpec(mode_sizes=shape, rank_mean=args.rank,
                             rank_dev=args.dev_rank,
                             observed_fraction=args.observed_fraction,
                             noise_kind=args.noise.replace("-", "_"),
                             noise_param=args.noise_param, seed=args.seed)
    made = dat.synthesize(spec)
    fmt = "csv_triplet" if len(shape) == 2 else "csv_quad"
    obs_entries = [(tuple(str(i) for i in row), v)
                   for row, v in zip(made.obs.idx, made.obs.values)]
    dat.write_entries(f"{args.out_prefix}.observed.csv", fmt, obs_entries)
    dat.write_dense_field(f"{args.out_prefix}.clean.csv", made.clean)
    dat.write_dense_field(f"{args.out_prefix}.variance.csv", made.variance)
    with open(f"{args.out_prefix}.manifest.txt", "w") as fh:
        fh.write("command synth\n")
        fh.write(f"shape {args.shape}\n")
        fh.write(f"rank_mean {spec.rank_mean}\n")
        fh.write(f"rank_dev {spec.rank_dev}\n")
        fh.write(f"observed_fraction {spec.observed_fraction:.12g}\n")
        fh.write(f"noise_kind {spec.noise_kind}\n")
        fh.write(f"noise_param {spec.noise_param:.12g}\n")
        fh.write(f"seed {spec.seed}\n")
        fh.write(f"n_observed {len(made.obs)}\n")
    print(f"synthesized {len(made.obs)} observations over shape {args.shape}")
    return 0


def cmd_demo_dlr(args):
    rows = [(seed, dlr.figure2_experiment(args.n, seed)) for seed in range(args.seeds)]
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("seed,n,ols_error,dlr_error\n")
            for seed, res in rows:
                fh.write(f"{seed},{args.n},{res['ols_param_error']:.12g},"
                         f"{res['dlr_param_error']:.12g}\n")
    ols = np.array([res["ols_param_error"] for _, res in rows])
    dev = np.array([res["dlr_param_error"] for _, res in rows])
    wins = int(np.count_nonzero(dev < ols))
    ratio = float(np.median(dev) / np.median(ols))
    print(f"median_ols={np.median(ols):.6g} median_dlr={np.median(dev):.6g} "
          f"median_ratio={ratio:.6g} dlr_wins={wins}/{len(rows)}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser():
    parser = argparse.ArgumentParser(
        prog="devmf",
        description="Matrix/tensor factorization with a jointly learned "
                    "per-instance variance model.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split an observation file into train/val/test")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=sorted(FORMAT_ALIASES), required=True)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="fraction of the non-test remainder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and export metrics")
    p.add_argument("--train", required=True)
    p.add_argument("--val")
    p.add_argument("--format", choices=sorted(FORMAT_ALIASES), required=True)
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.add_argument("--model", type=lambda s: s.replace("-", "_"),
                   choices=list(MODEL_KINDS), metavar="{biased-mf,dmf,ptf,dtf}")
    p.add_argument("--rank", type=int)
    p.add_argument("--dev-rank", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dev-lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--sigma-u2", type=float)
    p.add_argument("--sigma-v2", type=float)
    p.add_argument("--sigma-w2", type=float)
    p.add_argument("--lambda-p", type=float)
    p.add_argument("--lambda-q", type=float)
    p.add_argument("--lambda-s", type=float)
    p.add_argument("--delta-sigma2", type=float)
    p.add_argument("--prior-scaling", choices=["unbiased", "per-sample"])
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float,
                   help="held-out fraction when no --val file is given")
    p.add_argument("--schedule", choices=list(SCHEDULES))
    p.add_argument("--seed", type=int)
    p.add_argument("--timing", choices=["zero", "wall"],
                   help="seconds column content in the metrics CSV")
    p.add_argument("--model-out")
    p.add_argument("--metrics-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a test file")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--format", choices=sorted(FORMAT_ALIASES), required=True)
    p.add_argument("--cold-start", choices=["rating", "mean"],
                   help="default: rating for movielens, mean otherwise")
    p.add_argument("--metrics-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    p.add_argument("--shape", required=True, help="e.g. 200x200 or 10x12x7")
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--dev-rank", type=int, default=2)
    p.add_argument("--observed-fraction", type=float, default=0.3)
    p.add_argument("--noise", choices=["none", "homoscedastic", "lowrank-hetero"],
                   default="none")
    p.add_argument("--noise-param", type=float, default=0.01,
                   help="variance (homoscedastic) or variance floor (lowrank-hetero)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("demo-dlr", help="noise-weighted vs ordinary least squares demo")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_demo_dlr)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DevmfError, OSError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
