import numpy as np
import pytest

from voplan.dynamics import (
    GaussianBelief,
    covariance_horizon,
    discrete_step,
    make_agent_model,
    propagate_covariance,
    propagate_mean,
    sample_noise,
)

TABLE_W = (1e-4, 1e-4, 1e-2, 1e-2)


@pytest.fixture
def model():
    return make_agent_model(tau_s=0.05, w_diag=TABLE_W)


def test_step_zero_fixed_point(model):
    out = discrete_step(model, np.zeros(4), np.zeros(2), np.zeros(4))
    assert np.allclose(out, 0.0)


def test_step_constant_velocity_drift(model):
    out = discrete_step(model, np.array([0, 0, 1, 0.0]), np.zeros(2))
    assert np.allclose(out, [0.05, 0, 1, 0])


def test_step_acceleration(model):
    out = discrete_step(model, np.zeros(4), np.array([10.0, 0.0]))
    assert np.allclose(out, [0.0125, 0, 0.5, 0])


def test_mean_empty_inputs(model):
    x0 = np.array([1.0, 2.0, 3.0, 4.0])
    assert np.array_equal(propagate_mean(model, x0, []), x0)


def test_mean_zero_inputs_zero_velocity(model):
    x0 = np.array([1.0, 2.0, 0.0, 0.0])
    for k in (1, 5, 20):
        assert np.allclose(propagate_mean(model, x0, [np.zeros(2)] * k), x0)


def test_mean_matches_chained_steps(model):
    # oracle: repeated application of discrete_step with w = 0
    rng = np.random.default_rng(7)
    for _ in range(20):
        k = int(rng.integers(0, 12))
        x0 = rng.normal(size=4)
        inputs = rng.normal(size=(k, 2))
        x = x0.copy()
        for u in inputs:
            x = discrete_step(model, x, u)
        assert np.allclose(propagate_mean(model, x0, inputs), x, atol=1e-12)


def test_mean_semigroup(model):
    rng = np.random.default_rng(11)
    for _ in range(10):
        x0 = rng.normal(size=4)
        ua = rng.normal(size=(int(rng.integers(0, 10)), 2))
        ub = rng.normal(size=(int(rng.integers(0, 10)), 2))
        combined = propagate_mean(model, x0, list(ua) + list(ub))
        chained = propagate_mean(model, propagate_mean(model, x0, ua), ub)
        assert np.allclose(combined, chained, atol=1e-10)


def test_covariance_trivial_cases(model):
    zero_model = make_agent_model(tau_s=0.05, w_diag=(0, 0, 0, 0))
    for k in (0, 1, 7):
        assert np.allclose(propagate_covariance(zero_model, np.zeros((4, 4)), k), 0.0)
    assert np.allclose(propagate_covariance(model, np.zeros((4, 4)), 1), model.W)


def test_covariance_recursion_equivalence(model):
    # closed form vs one-step recursion, k <= 50
    p0 = np.diag([1e-6, 1e-6, 1e-6, 1e-6])
    cov = p0.copy()
    for k in range(51):
        assert np.max(np.abs(propagate_covariance(model, p0, k) - cov)) <= 1e-12
        cov = model.A @ cov @ model.A.T + model.W
    horizon = covariance_horizon(model, p0, 50)
    for k in range(51):
        assert np.max(np.abs(horizon[k] - propagate_covariance(model, p0, k))) <= 1e-12


def test_covariance_trace_monotone(model):
    p0 = np.zeros((4, 4))
    traces = [np.trace(propagate_covariance(model, p0, k)) for k in range(30)]
    assert all(b >= a for a, b in zip(traces, traces[1:]))


def test_covariance_matches_monte_carlo(model):
    # Monte-Carlo oracle: sample covariance of 1e6 noisy rollouts at k=5
    k = 5
    n = 1_000_000
    p0 = np.diag([1e-6, 1e-6, 1e-6, 1e-6])
    rng = np.random.default_rng(123)
    x = rng.multivariate_normal(np.zeros(4), p0, size=n)
    std = np.sqrt(np.diagonal(model.W))
    u = np.array([1.0, -2.0])
    for _ in range(k):
        w = rng.standard_normal((n, 4)) * std
        x = x @ model.A.T + model.B @ u + w
    sample_cov = np.cov(x.T)
    expected = propagate_covariance(model, p0, k)
    rel = np.linalg.norm(sample_cov - expected) / np.linalg.norm(expected)
    assert rel < 0.03


def test_covariance_psd_and_symmetric(model):
    p0 = np.diag([1e-6, 1e-6, 1e-6, 1e-6])
    for k in (1, 10, 40):
        cov = propagate_covariance(model, p0, k)
        assert np.allclose(cov, cov.T)
        assert np.min(np.linalg.eigvalsh(cov)) >= -1e-12
        GaussianBelief(np.zeros(4), cov)  # constructor validation passes


def test_belief_validation_rejects_asymmetric():
    bad = np.diag([1.0, 1, 1, 1])
    bad[0, 1] = 1e-3
    with pytest.raises(ValueError):
        GaussianBelief(np.zeros(4), bad)


def test_model_validation():
    with pytest.raises(ValueError):
        make_agent_model(w_diag=(-1e-4, 1e-4, 1e-2, 1e-2))


def test_noise_streams_reproducible(model):
    a = sample_noise(model, seed=42, trial=0, agent=3, step=17)
    b = sample_noise(model, seed=42, trial=0, agent=3, step=17)
    c = sample_noise(model, seed=42, trial=0, agent=3, step=18)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
