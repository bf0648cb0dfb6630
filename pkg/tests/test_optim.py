import math

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from devmf.core import (DeviationModel, Hyperparams, ObservationSet,
                        gradient_at)
from devmf.errors import ConfigError, DivergenceError
from devmf.optim import (AdaGradState, TrainConfig, TrainReport, EpochRecord,
                         adagrad_step, initialize, project_nonneg, train)
from devmf.tensor import CpDeviationModel, cp_gradient_at


# ---------------------------------------------------------------------------
# AdaGrad step

def test_adagrad_first_step():
    st = AdaGradState(base_rate=0.1, epsilon=0.0)
    assert adagrad_step(st, "p", 2.0) == pytest.approx(-0.1, abs=1e-15)
    assert st.accumulators["p"] == 4.0


def test_adagrad_equal_gradients_shrink():
    st = AdaGradState(base_rate=1.0, epsilon=0.0)
    assert adagrad_step(st, "p", 1.0) == pytest.approx(-1.0, abs=1e-15)
    assert adagrad_step(st, "p", 1.0) == pytest.approx(-1.0 / math.sqrt(2), abs=1e-15)


def test_adagrad_zero_gradient_is_inert():
    st = AdaGradState(base_rate=0.5)
    adagrad_step(st, "p", 3.0)
    acc = st.accumulators["p"]
    assert adagrad_step(st, "p", 0.0) == 0.0
    assert st.accumulators["p"] == acc


def test_adagrad_rejects_nonfinite():
    st = AdaGradState(base_rate=0.5)
    with pytest.raises(FloatingPointError):
        adagrad_step(st, "p", float("nan"))
    with pytest.raises(FloatingPointError):
        adagrad_step(st, "p", float("inf"))


def test_adagrad_independent_parameters():
    st = AdaGradState(base_rate=1.0, epsilon=0.0)
    adagrad_step(st, "a", 10.0)
    # a huge gradient on "a" must not dampen "b"
    assert adagrad_step(st, "b", 1.0) == pytest.approx(-1.0, abs=1e-15)


def test_project_nonneg():
    x = np.array([-1.0, 0.0, 2.5, -1e-300])
    p = project_nonneg(x)
    assert_array_equal(p, [0.0, 0.0, 2.5, 0.0])
    assert_array_equal(project_nonneg(p), p)


# ---------------------------------------------------------------------------
# config validation

def test_train_config_validation():
    hp = Hyperparams(rank_mean=2)
    with pytest.raises(ConfigError):
        TrainConfig(hp=hp, model_kind="svd")
    with pytest.raises(ConfigError):
        TrainConfig(hp=hp, schedule="nesterov")
    with pytest.raises(ConfigError):
        TrainConfig(hp=hp, val_fraction=1.0)
    with pytest.raises(ConfigError):
        TrainConfig(hp=hp, early_stop_patience=-1)


# ---------------------------------------------------------------------------
# initialization

def test_initialize_ranges_and_determinism():
    hp = Hyperparams(rank_mean=4, rank_dev=3, delta_sigma2=0.07)
    m1, d1 = initialize((20, 30), hp, seed=9, mu=2.5)
    m2, d2 = initialize((20, 30), hp, seed=9, mu=2.5)
    assert_array_equal(m1.U, m2.U)
    assert_array_equal(d1.P, d2.P)
    bound = 0.5 / math.sqrt(4)
    assert np.all(np.abs(m1.U) <= bound) and np.all(np.abs(m1.V) <= bound)
    assert np.all(m1.u == 0.0) and np.all(m1.v == 0.0)
    assert m1.mu == 2.5
    assert np.all((d1.P >= 0) & (d1.P <= 0.1))
    assert d1.delta_sigma2 == 0.07
    m3, _ = initialize((20, 30), hp, seed=10, mu=2.5)
    assert not np.array_equal(m1.U, m3.U)


def test_initialize_tensor_shapes():
    hp = Hyperparams(rank_mean=3, rank_dev=2)
    mean, dev = initialize((4, 5, 6), hp, seed=0)
    assert mean.shape == (4, 5, 6)
    assert mean.W.shape == (6, 3)
    assert dev.S.shape == (6, 2)


# ---------------------------------------------------------------------------
# pure-python replay of the compiled epoch (matrix)

def replay_matrix(obs, hp, cfg):
    """Mirror the compiled per-observation loop scalar for scalar."""
    deviation = cfg.model_kind == "dmf"
    mu = float(np.mean(obs.values))
    mean, dev = initialize(obs.mode_sizes, hp, hp.seed, mu)
    n1, n2 = obs.mode_sizes
    if not deviation:
        dev = DeviationModel(np.zeros((n1, hp.rank_dev)),
                             np.zeros((n2, hp.rank_dev)), 1.0)
    counts = [obs.mode_counts(0), obs.mode_counts(1)]
    if hp.prior_scaling == "unbiased":
        div = [np.maximum(c, 1.0) for c in counts]
    else:
        div = [np.ones_like(c) for c in counts]
    den_u, den_v = hp.sigma_u2 * div[0], hp.sigma_v2 * div[1]
    sc_p, sc_q = div
    gs = 1.0 if deviation else 2.0
    lr, lrd, eps = hp.learning_rate, hp.dev_rate, cfg.adagrad_epsilon
    adagrad = cfg.schedule == "adagrad"
    D, Dp = hp.rank_mean, hp.rank_dev
    aU, aV = np.zeros_like(mean.U), np.zeros_like(mean.V)
    abu, abv = np.zeros(n1), np.zeros(n2)
    aP, aQ = np.zeros_like(dev.P), np.zeros_like(dev.Q)

    for epoch in range(hp.epochs):
        if cfg.shuffle:
            order = np.random.default_rng(hp.seed ^ epoch).permutation(len(obs))
        else:
            order = np.arange(len(obs))
        for o in order:
            i, j = int(obs.idx[o, 0]), int(obs.idx[o, 1])
            r = obs.values[o]
            pred = mean.mu + mean.u[i] + mean.v[j]
            for k in range(D):
                pred += mean.U[i, k] * mean.V[j, k]
            s = dev.delta_sigma2
            for k in range(Dp):
                s += dev.P[i, k] * dev.Q[j, k]
            e = r - pred
            es = e / s

            gu = gs * (-es * mean.V[j] + mean.U[i] / den_u[i])
            gv = gs * (-es * mean.U[i] + mean.V[j] / den_v[j])
            if adagrad:
                mu_mask, mv_mask = gu != 0.0, gv != 0.0
                aU[i, mu_mask] += gu[mu_mask] ** 2
                mean.U[i, mu_mask] -= lr * gu[mu_mask] / np.sqrt(aU[i, mu_mask] + eps)
                aV[j, mv_mask] += gv[mv_mask] ** 2
                mean.V[j, mv_mask] -= lr * gv[mv_mask] / np.sqrt(aV[j, mv_mask] + eps)
            else:
                mean.U[i] -= lr * gu
                mean.V[j] -= lr * gv

            if cfg.use_biases:
                gb = gs * (-es)
                if adagrad:
                    if gb != 0.0:
                        abu[i] += gb * gb
                        mean.u[i] -= lr * gb / math.sqrt(abu[i] + eps)
                        abv[j] += gb * gb
                        mean.v[j] -= lr * gb / math.sqrt(abv[j] + eps)
                else:
                    mean.u[i] -= lr * gb
                    mean.v[j] -= lr * gb

            if deviation:
                c = 0.5 / s - 0.5 * e * e / (s * s)
                gp = c * dev.Q[j] + hp.lambda_p / sc_p[i]
                gq = c * dev.P[i] + hp.lambda_q / sc_q[j]
                if adagrad:
                    mp, mq = gp != 0.0, gq != 0.0
                    aP[i, mp] += gp[mp] ** 2
                    dev.P[i, mp] -= lrd * gp[mp] / np.sqrt(aP[i, mp] + eps)
                    aQ[j, mq] += gq[mq] ** 2
                    dev.Q[j, mq] -= lrd * gq[mq] / np.sqrt(aQ[j, mq] + eps)
                else:
                    dev.P[i] -= lrd * gp
                    dev.Q[j] -= lrd * gq
                np.maximum(dev.P[i], 0.0, out=dev.P[i])
                np.maximum(dev.Q[j], 0.0, out=dev.Q[j])
    return mean, dev


def dense_observations(n1, n2, seed, frac=0.8):
    rng = np.random.default_rng(seed)
    total = n1 * n2
    chosen = np.sort(rng.choice(total, int(frac * total), replace=False))
    idx = np.column_stack(np.unravel_index(chosen, (n1, n2)))
    values = rng.normal(size=len(chosen))
    return ObservationSet((n1, n2), idx, values)


@pytest.mark.parametrize("kind", ["dmf", "biased_mf"])
@pytest.mark.parametrize("schedule", ["adagrad", "constant"])
def test_compiled_epoch_matches_replay(kind, schedule):
    obs = dense_observations(6, 5, seed=3)
    hp = Hyperparams(rank_mean=3, rank_dev=2, learning_rate=0.05,
                     dev_learning_rate=0.1, lambda_p=0.02, lambda_q=0.01,
                     delta_sigma2=0.04, epochs=3, seed=11)
    cfg = TrainConfig(hp=hp, model_kind=kind, schedule=schedule,
                      early_stop_patience=0)
    got_mean, got_dev, _ = train(obs, cfg)
    exp_mean, exp_dev = replay_matrix(obs, hp, cfg)
    assert_array_equal(got_mean.U, exp_mean.U)
    assert_array_equal(got_mean.V, exp_mean.V)
    assert_array_equal(got_mean.u, exp_mean.u)
    assert_array_equal(got_mean.v, exp_mean.v)
    assert got_mean.mu == exp_mean.mu
    assert_array_equal(got_dev.P, exp_dev.P)
    assert_array_equal(got_dev.Q, exp_dev.Q)
    assert got_dev.delta_sigma2 == exp_dev.delta_sigma2


@pytest.mark.parametrize("scaling", ["unbiased", "per_sample"])
def test_compiled_epoch_matches_replay_prior_scaling(scaling):
    obs = dense_observations(5, 7, seed=4, frac=0.5)
    hp = Hyperparams(rank_mean=2, rank_dev=2, epochs=2, seed=5,
                     prior_scaling=scaling, lambda_p=0.1, lambda_q=0.1)
    cfg = TrainConfig(hp=hp, model_kind="dmf", early_stop_patience=0)
    got_mean, got_dev, _ = train(obs, cfg)
    exp_mean, exp_dev = replay_matrix(obs, hp, cfg)
    assert_array_equal(got_mean.U, exp_mean.U)
    assert_array_equal(got_dev.P, exp_dev.P)


# ---------------------------------------------------------------------------
# single-observation step pins the kernels to the analytic gradients

def test_matrix_step_equals_analytic_gradient_step():
    hp = Hyperparams(rank_mean=3, rank_dev=2, learning_rate=0.01,
                     dev_learning_rate=0.02, lambda_p=0.05, lambda_q=0.03,
                     delta_sigma2=0.5, epochs=1, seed=7,
                     prior_scaling="per_sample")
    obs = ObservationSet.from_entries((2, 2), [((0, 1), 0.9)])
    cfg = TrainConfig(hp=hp, model_kind="dmf", schedule="constant",
                      early_stop_patience=0)
    mean0, dev0 = initialize((2, 2), hp, hp.seed, mu=float(obs.values[0]))
    got_mean, got_dev, _ = train(obs, cfg, init=(mean0, dev0))
    g = gradient_at(mean0, dev0, hp, (0, 1, 0.9), n_i=1.0, n_j=1.0)
    lr, lrd = hp.learning_rate, hp.dev_rate
    np.testing.assert_allclose(got_mean.U[0], mean0.U[0] - lr * g.dU_i, rtol=1e-14)
    np.testing.assert_allclose(got_mean.V[1], mean0.V[1] - lr * g.dV_j, rtol=1e-14)
    assert got_mean.u[0] == pytest.approx(mean0.u[0] - lr * g.du_i, abs=1e-15)
    assert got_mean.v[1] == pytest.approx(mean0.v[1] - lr * g.dv_j, abs=1e-15)
    np.testing.assert_allclose(
        got_dev.P[0], np.maximum(dev0.P[0] - lrd * g.dP_i, 0.0), rtol=1e-14)
    np.testing.assert_allclose(
        got_dev.Q[1], np.maximum(dev0.Q[1] - lrd * g.dQ_j, 0.0), rtol=1e-14)
    # untouched rows stay put
    assert_array_equal(got_mean.U[1], mean0.U[1])
    assert_array_equal(got_dev.P[1], dev0.P[1])


def test_tensor_step_equals_analytic_gradient_step():
    hp = Hyperparams(rank_mean=2, rank_dev=2, learning_rate=0.01,
                     dev_learning_rate=0.02, lambda_p=0.05, lambda_q=0.03,
                     lambda_s=0.04, delta_sigma2=0.5, epochs=1, seed=3,
                     prior_scaling="per_sample")
    obs = ObservationSet.from_entries((2, 2, 2), [((1, 0, 1), -0.4)])
    cfg = TrainConfig(hp=hp, model_kind="dtf", schedule="constant",
                      early_stop_patience=0)
    mean0, dev0 = initialize((2, 2, 2), hp, hp.seed, mu=float(obs.values[0]))
    got_mean, got_dev, _ = train(obs, cfg, init=(mean0, dev0))
    g = cp_gradient_at(mean0, dev0, hp, (1, 0, 1, -0.4))
    lr, lrd = hp.learning_rate, hp.dev_rate
    np.testing.assert_allclose(got_mean.U[1], mean0.U[1] - lr * g.dU_i, rtol=1e-14)
    np.testing.assert_allclose(got_mean.V[0], mean0.V[0] - lr * g.dV_j, rtol=1e-14)
    np.testing.assert_allclose(got_mean.W[1], mean0.W[1] - lr * g.dW_t, rtol=1e-14)
    assert got_mean.w[1] == pytest.approx(mean0.w[1] - lr * g.dw_t, abs=1e-15)
    np.testing.assert_allclose(
        got_dev.S[1], np.maximum(dev0.S[1] - lrd * g.dS_t, 0.0), rtol=1e-14)


# ---------------------------------------------------------------------------
# training behaviour

def test_training_is_deterministic():
    obs = dense_observations(10, 8, seed=0)
    hp = Hyperparams(rank_mean=3, epochs=5, seed=21)
    cfg = TrainConfig(hp=hp, model_kind="dmf", early_stop_patience=0)
    m1, d1, r1 = train(obs, cfg)
    m2, d2, r2 = train(obs, cfg)
    assert_array_equal(m1.U, m2.U)
    assert_array_equal(d1.Q, d2.Q)
    assert [rec.objective for rec in r1.records] == \
        [rec.objective for rec in r2.records]


def test_training_reduces_objective():
    obs = dense_observations(15, 12, seed=1)
    hp = Hyperparams(rank_mean=3, epochs=20, seed=2, learning_rate=0.05)
    for kind in ("dmf", "biased_mf"):
        cfg = TrainConfig(hp=hp, model_kind=kind, early_stop_patience=0)
        _, _, report = train(obs, cfg)
        assert report.records[-1].objective < report.records[0].objective


def test_deviation_factors_stay_nonnegative():
    obs = dense_observations(12, 12, seed=6)
    hp = Hyperparams(rank_mean=3, rank_dev=2, epochs=10, seed=1,
                     dev_learning_rate=0.3)
    _, dev, _ = train(obs, TrainConfig(hp=hp, model_kind="dmf",
                                       early_stop_patience=0))
    assert dev.P.min() >= 0.0 and dev.Q.min() >= 0.0


def test_biased_kind_freezes_deviation():
    obs = dense_observations(6, 6, seed=2)
    hp = Hyperparams(rank_mean=2, epochs=3, seed=0)
    _, dev, _ = train(obs, TrainConfig(hp=hp, model_kind="biased_mf",
                                       early_stop_patience=0))
    assert_array_equal(dev.P, np.zeros_like(dev.P))
    assert dev.delta_sigma2 == 1.0


def test_epochs_zero_returns_initialization():
    obs = dense_observations(4, 4, seed=0)
    hp = Hyperparams(rank_mean=2, epochs=0, seed=5)
    mean, dev, report = train(obs, TrainConfig(hp=hp, model_kind="dmf"))
    exp_mean, exp_dev = initialize((4, 4), hp, 5, mu=float(np.mean(obs.values)))
    assert_array_equal(mean.U, exp_mean.U)
    assert_array_equal(dev.P, exp_dev.P)
    assert report.records == [] and report.best_epoch == -1


def test_mode_kind_mismatch_rejected():
    mat = dense_observations(4, 4, seed=0)
    hp = Hyperparams(rank_mean=2, epochs=1)
    with pytest.raises(ConfigError):
        train(mat, TrainConfig(hp=hp, model_kind="dtf"))
    tens = ObservationSet.from_entries((2, 2, 2), [((0, 0, 0), 1.0)])
    with pytest.raises(ConfigError):
        train(tens, TrainConfig(hp=hp, model_kind="dmf"))


def test_empty_observations_rejected():
    hp = Hyperparams(rank_mean=2, epochs=1)
    obs = ObservationSet((2, 2), np.empty((0, 2), dtype=np.int64), np.empty(0))
    with pytest.raises(ConfigError):
        train(obs, TrainConfig(hp=hp))


def test_divergence_guard_raises():
    obs = dense_observations(8, 8, seed=0)
    hp = Hyperparams(rank_mean=2, epochs=200, seed=0, learning_rate=8.0,
                     dev_learning_rate=8.0)
    cfg = TrainConfig(hp=hp, model_kind="dmf", schedule="constant",
                      early_stop_patience=0)
    with pytest.raises(DivergenceError):
        train(obs, cfg)


def test_internal_validation_split_and_early_stop():
    obs = dense_observations(20, 20, seed=3, frac=0.6)
    hp = Hyperparams(rank_mean=3, epochs=150, seed=4, learning_rate=0.1)
    cfg = TrainConfig(hp=hp, model_kind="dmf", val_fraction=0.2,
                      early_stop_patience=3)
    mean, dev, report = train(obs, cfg)
    assert all(rec.val_rmse is not None for rec in report.records)
    assert len(report.records) < hp.epochs  # patience kicked in
    best = report.best_epoch
    assert report.records[best].val_rmse == min(r.val_rmse for r in report.records)
    # returned parameters are the best-validation snapshot, not the last epoch
    val_best = report.records[best].val_rmse
    rerun_cfg = TrainConfig(hp=Hyperparams(**{**hp.__dict__, "epochs": best + 1}),
                            model_kind="dmf", val_fraction=0.2,
                            early_stop_patience=0)
    mean_b, _, _ = train(obs, rerun_cfg)
    assert_array_equal(mean.U, mean_b.U)
    assert val_best <= report.records[-1].val_rmse


def test_explicit_validation_set_is_used():
    obs = dense_observations(10, 10, seed=5, frac=0.5)
    val = dense_observations(10, 10, seed=6, frac=0.1)
    hp = Hyperparams(rank_mean=2, epochs=3, seed=0)
    cfg = TrainConfig(hp=hp, model_kind="dmf", early_stop_patience=0)
    _, _, report = train(obs, cfg, val=val)
    assert all(rec.val_rmse is not None for rec in report.records)


def test_best_epoch_defaults_to_last_without_validation():
    obs = dense_observations(5, 5, seed=1)
    hp = Hyperparams(rank_mean=2, epochs=4, seed=0)
    _, _, report = train(obs, TrainConfig(hp=hp, model_kind="dmf",
                                          early_stop_patience=0))
    assert report.best_epoch == 3
    assert [rec.epoch for rec in report.records] == [0, 1, 2, 3]


def test_tensor_training_runs_and_improves():
    rng = np.random.default_rng(8)
    sizes = (6, 5, 4)
    total = 6 * 5 * 4
    chosen = np.sort(rng.choice(total, 90, replace=False))
    idx = np.column_stack(np.unravel_index(chosen, sizes))
    obs = ObservationSet(sizes, idx, rng.normal(size=90))
    hp = Hyperparams(rank_mean=2, rank_dev=2, epochs=15, seed=3)
    for kind in ("dtf", "ptf"):
        _, dev, report = train(obs, TrainConfig(hp=hp, model_kind=kind,
                                                early_stop_patience=0))
        assert report.records[-1].objective < report.records[0].objective
        assert dev.P.min() >= 0.0 and dev.S.min() >= 0.0


# ---------------------------------------------------------------------------
# report serialization

def test_report_csv_format(tmp_path):
    report = TrainReport(records=[
        EpochRecord(0, 1.5, None, 10.0, 0.25, 0.125),
        EpochRecord(1, 1.25, 0.875, 9.0, 0.5, 0.25),
    ], best_epoch=1)
    path = tmp_path / "log.csv"
    report.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_rmse,val_rmse,objective,dev_sparsity,seconds"
    assert lines[1] == "0,1.5,,10,0.25,0.125"
    assert lines[2] == "1,1.25,0.875,9,0.5,0.25"
    report.to_csv(path, zero_seconds=True)
    lines = path.read_text().splitlines()
    assert lines[1].endswith(",0")
