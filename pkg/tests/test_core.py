import numpy as np
import pytest
import scipy.stats
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from devmf.core import (HALF_LN_2PI, DeviationModel, Hyperparams, MeanModel,
                        ObservationSet, gradient_at, instance_nll,
                        nll_to_likelihood_check, objective, predict_mean,
                        predict_mean_many, predict_variance,
                        predict_variance_many)
from devmf.errors import ConfigError, DuplicateEntryError


def small_models(n1=4, n2=3, D=2, Dp=2, seed=0):
    rng = np.random.default_rng(seed)
    mean = MeanModel(rng.normal(size=(n1, D)), rng.normal(size=(n2, D)),
                     rng.normal(size=n1), rng.normal(size=n2), rng.normal())
    dev = DeviationModel(rng.uniform(0.1, 1.0, (n1, Dp)),
                         rng.uniform(0.1, 1.0, (n2, Dp)), 0.05)
    return mean, dev


# ---------------------------------------------------------------------------
# ObservationSet

def test_observation_set_basic():
    obs = ObservationSet.from_entries((3, 4), [((0, 1), 2.0), ((2, 3), -1.0)])
    assert len(obs) == 2
    assert obs.n_modes == 2
    assert obs.mode_sizes == (3, 4)
    np.testing.assert_array_equal(obs.idx, [[0, 1], [2, 3]])


def test_observation_set_rejects_out_of_range():
    with pytest.raises(IndexError):
        ObservationSet.from_entries((3, 4), [((3, 0), 1.0)])
    with pytest.raises(IndexError):
        ObservationSet.from_entries((3, 4), [((-1, 0), 1.0)])


def test_observation_set_rejects_duplicates():
    with pytest.raises(DuplicateEntryError):
        ObservationSet.from_entries((3, 4), [((1, 2), 1.0), ((1, 2), 5.0)])


def test_observation_set_subset_and_counts():
    obs = ObservationSet.from_entries(
        (3, 3), [((0, 0), 1.0), ((0, 1), 2.0), ((2, 2), 3.0)])
    sub = obs.subset(np.array([2, 0]))
    np.testing.assert_array_equal(sub.values, [3.0, 1.0])
    np.testing.assert_array_equal(obs.mode_counts(0), [2.0, 0.0, 1.0])
    np.testing.assert_array_equal(obs.mode_counts(1), [1.0, 1.0, 1.0])


def test_empty_observation_set():
    obs = ObservationSet((2, 2), np.empty((0, 2), dtype=np.int64), np.empty(0))
    assert len(obs) == 0


# ---------------------------------------------------------------------------
# predictions

def test_predict_mean_is_dot_plus_biases():
    mean, _ = small_models()
    i, j = 1, 2
    expected = mean.U[i] @ mean.V[j] + mean.u[i] + mean.v[j] + mean.mu
    assert predict_mean(mean, i, j) == pytest.approx(expected, rel=1e-15)


def test_predict_variance_includes_floor():
    _, dev = small_models()
    assert predict_variance(dev, 0, 0) == pytest.approx(
        dev.P[0] @ dev.Q[0] + dev.delta_sigma2, rel=1e-15)


def test_vectorized_predictions_match_scalar():
    mean, dev = small_models()
    idx = np.array([[0, 0], [1, 2], [3, 1]])
    many_m = predict_mean_many(mean, idx)
    many_v = predict_variance_many(dev, idx)
    for k, (i, j) in enumerate(idx):
        assert many_m[k] == pytest.approx(predict_mean(mean, i, j), rel=1e-15)
        assert many_v[k] == pytest.approx(predict_variance(dev, i, j), rel=1e-15)


def test_deviation_model_rejects_negative_entries():
    with pytest.raises(ValueError):
        DeviationModel(np.array([[-0.1]]), np.array([[0.2]]), 0.01)
    with pytest.raises(ValueError):
        DeviationModel(np.array([[0.1]]), np.array([[0.2]]), 0.0)


# ---------------------------------------------------------------------------
# per-observation loss

def test_instance_nll_known_value():
    # (r-m)^2/(2v) + 0.5 ln v with r=1, m=0, v=2
    expected = 1.0 / 4.0 + 0.5 * np.log(2.0)
    assert instance_nll(1.0, 0.0, 2.0) == pytest.approx(expected, rel=1e-15)


def test_instance_nll_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        instance_nll(1.0, 0.0, 0.0)


def test_nll_matches_gaussian_log_density():
    rng = np.random.default_rng(7)
    for _ in range(200):
        r = rng.normal() * 3
        m = rng.normal()
        v = rng.uniform(1e-3, 10)
        ours = nll_to_likelihood_check(r, m, v)
        ref = -scipy.stats.norm.logpdf(r, loc=m, scale=np.sqrt(v))
        assert ours == pytest.approx(ref, abs=1e-12)


def test_nll_variants_differ_by_half_log_2pi():
    assert nll_to_likelihood_check(0.3, 0.1, 0.7) - instance_nll(0.3, 0.1, 0.7) \
        == pytest.approx(HALF_LN_2PI, abs=1e-15)


# ---------------------------------------------------------------------------
# objective

def brute_objective(mean, dev, hp, obs):
    total = 0.0
    for (i, j), r in obs.entries:
        total += instance_nll(r, predict_mean(mean, i, j), predict_variance(dev, i, j))
    total += np.sum(mean.U ** 2) / (2 * hp.sigma_u2)
    total += np.sum(mean.V ** 2) / (2 * hp.sigma_v2)
    total += hp.lambda_p * np.sum(dev.P) + hp.lambda_q * np.sum(dev.Q)
    return total


def test_objective_matches_brute_force():
    mean, dev = small_models()
    hp = Hyperparams(rank_mean=2, rank_dev=2, sigma_u2=0.5, sigma_v2=2.0,
                     lambda_p=0.3, lambda_q=0.7)
    obs = ObservationSet.from_entries(
        (4, 3), [((0, 0), 1.0), ((1, 2), -0.5), ((3, 1), 2.0)])
    assert objective(mean, dev, hp, obs) == pytest.approx(
        brute_objective(mean, dev, hp, obs), rel=1e-12)


def test_objective_empty_observations_is_prior_only():
    mean, dev = small_models()
    hp = Hyperparams(rank_mean=2, rank_dev=2)
    obs = ObservationSet((4, 3), np.empty((0, 2), dtype=np.int64), np.empty(0))
    expected = (np.sum(mean.U ** 2) / (2 * hp.sigma_u2)
                + np.sum(mean.V ** 2) / (2 * hp.sigma_v2)
                + hp.lambda_p * np.sum(dev.P) + hp.lambda_q * np.sum(dev.Q))
    assert objective(mean, dev, hp, obs) == pytest.approx(expected, rel=1e-12)


def test_objective_shape_mismatch():
    mean, dev = small_models()
    hp = Hyperparams(rank_mean=2, rank_dev=2)
    obs = ObservationSet.from_entries((5, 3), [((4, 0), 1.0)])
    with pytest.raises(ValueError):
        objective(mean, dev, hp, obs)


# ---------------------------------------------------------------------------
# analytic gradients vs central finite differences

@pytest.mark.parametrize("scaling", ["unbiased", "per_sample"])
def test_gradient_at_matches_fd(scaling):
    mean, dev = small_models(seed=1)
    hp = Hyperparams(rank_mean=2, rank_dev=2, sigma_u2=0.8, sigma_v2=1.3,
                     lambda_p=0.2, lambda_q=0.05, prior_scaling=scaling)
    i, j, r = 1, 2, 0.7
    n_i, n_j = (3.0, 2.0) if scaling == "unbiased" else (1.0, 1.0)
    g = gradient_at(mean, dev, hp, (i, j, r), n_i=n_i, n_j=n_j)

    # the single-observation objective whose gradient gradient_at reports:
    # its likelihood term plus 1/n_i of row i's prior, 1/n_j of column j's
    def single_obj(m2, d2):
        val = instance_nll(r, predict_mean(m2, i, j), predict_variance(d2, i, j))
        val += np.sum(m2.U[i] ** 2) / (2 * hp.sigma_u2 * n_i)
        val += np.sum(m2.V[j] ** 2) / (2 * hp.sigma_v2 * n_j)
        val += hp.lambda_p * np.sum(d2.P[i]) / n_i
        val += hp.lambda_q * np.sum(d2.Q[j]) / n_j
        return val

    h = 1e-6
    for k in range(2):
        for attr, row, grad in (("U", i, g.dU_i), ("V", j, g.dV_j)):
            m2, d2 = mean.copy(), dev.copy()
            getattr(m2, attr)[row, k] += h
            hi = single_obj(m2, d2)
            getattr(m2, attr)[row, k] -= 2 * h
            lo = single_obj(m2, d2)
            assert grad[k] == pytest.approx((hi - lo) / (2 * h), rel=1e-6, abs=1e-8)
        for attr, row, grad in (("P", i, g.dP_i), ("Q", j, g.dQ_j)):
            m2, d2 = mean.copy(), dev.copy()
            getattr(d2, attr)[row, k] += h
            hi = single_obj(m2, d2)
            getattr(d2, attr)[row, k] -= 2 * h
            lo = single_obj(m2, d2)
            assert grad[k] == pytest.approx((hi - lo) / (2 * h), rel=1e-6, abs=1e-8)
    for attr, row, grad in (("u", i, g.du_i), ("v", j, g.dv_j)):
        m2, d2 = mean.copy(), dev.copy()
        getattr(m2, attr)[row] += h
        hi = single_obj(m2, d2)
        getattr(m2, attr)[row] -= 2 * h
        lo = single_obj(m2, d2)
        assert grad == pytest.approx((hi - lo) / (2 * h), rel=1e-6, abs=1e-8)


def test_gradient_zero_residual_mean_part():
    # with residual 0 the mean-factor gradient reduces to the prior pull
    mean, dev = small_models()
    hp = Hyperparams(rank_mean=2, rank_dev=2, lambda_p=0.0, lambda_q=0.0)
    i, j = 0, 0
    r = predict_mean(mean, i, j)
    g = gradient_at(mean, dev, hp, (i, j, r))
    assert_allclose(g.dU_i, mean.U[i] / hp.sigma_u2)
    assert g.du_i == 0.0 and g.dv_j == 0.0


# ---------------------------------------------------------------------------
# Hyperparams

def test_hyperparams_defaults_resolve():
    hp = Hyperparams(rank_mean=6)
    assert hp.rank_dev == 6
    assert hp.sigma_w2 == hp.sigma_v2
    assert hp.lambda_s == hp.lambda_q
    assert hp.dev_rate == hp.learning_rate


def test_hyperparams_validation():
    with pytest.raises(ConfigError):
        Hyperparams(rank_mean=0)
    with pytest.raises(ConfigError):
        Hyperparams(delta_sigma2=0.0)
    with pytest.raises(ConfigError):
        Hyperparams(prior_scaling="adaptive")


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(1e-6, 1e3))
def test_nll_check_always_at_least_half_log_2pi_variance_term(r, m, v):
    # the density never exceeds 1/sqrt(2 pi v)
    assert nll_to_likelihood_check(r, m, v) >= 0.5 * np.log(2 * np.pi * v) - 1e-12


@given(st.integers(0, 3), st.integers(0, 2))
def test_prediction_in_range_indices_only(i, j):
    mean, dev = small_models()
    predict_mean(mean, i, j)
    with pytest.raises(IndexError):
        predict_mean(mean, 4, 0)
