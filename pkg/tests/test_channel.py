import numpy as np
import pytest

from ranslice.channel import (ChannelParams, ChannelState, evolve,
                              initial_state, sample_gain, sample_gain_grid,
                              shadow_std_from_db)

SIGMA_5DB = shadow_std_from_db(5.0)


def test_stationary_mode_freezes_state():
    params = ChannelParams(n_users=1, stationary=True)
    state = ChannelState(mu=[0.5], a=[1.0])
    nxt = evolve(state, params, np.random.default_rng(0))
    assert nxt.mu[0] == 0.5 and nxt.a[0] == 1.0
    assert nxt.superframe_index == 1


def test_noiseless_recursion():
    params = ChannelParams(n_users=1, beta=0.0, q_a=0.0, q_mu=0.0)
    state = ChannelState(mu=[2.0], a=[0.9])
    nxt = evolve(state, params, np.random.default_rng(0))
    assert nxt.a[0] == pytest.approx(0.0)
    assert nxt.mu[0] == pytest.approx(1.8)


def test_one_step_variance_decomposition():
    # Monte-Carlo oracle over the AR recursion: across trials, the updated
    # means decompose as Var(mu') = Var(A o mu) + q_mu because the noise
    # is drawn independently of the pre-update state.
    params = ChannelParams(n_users=6, beta=0.95, q_a=1e-4, q_mu=1.0, mu0=0.0)
    rng = np.random.default_rng(7)
    trials = 10_000
    warm = 200
    mu_next = np.empty((trials, 6))
    amu = np.empty((trials, 6))
    for t in range(trials):
        state = initial_state(params, rng)
        # a short warm segment decorrelates the trial from its start
        for _ in range(warm // 40):
            state = evolve(state, params, rng)
        amu[t] = state.a * state.mu
        mu_next[t] = evolve(state, params, rng).mu
    var_next = mu_next.var(axis=0)
    predicted = amu.var(axis=0) + params.q_mu
    assert np.all(np.abs(var_next - predicted) <= 0.10 * predicted)


def test_degenerate_lognormal_gains():
    params = ChannelParams(n_users=1, sigma_shadow=1e-12)
    state = ChannelState(mu=[0.0], a=[1.0])
    assert sample_gain(state, 0, params, np.random.default_rng(0)) == pytest.approx(1.0)
    state2 = ChannelState(mu=[1.0], a=[1.0])
    g = sample_gain(state2, 0, params, np.random.default_rng(0))
    assert g == pytest.approx(np.e ** 2)


def test_sample_gain_user_out_of_range():
    params = ChannelParams(n_users=2)
    state = ChannelState(mu=[0.0, 0.0], a=[1.0, 1.0])
    with pytest.raises(IndexError):
        sample_gain(state, 2, params, np.random.default_rng(0))


def test_log_gain_mean_lln():
    # law of large numbers: the sample mean of ln|h| over 1e5 draws stays
    # within three standard errors of the configured mean
    params = ChannelParams(n_users=1, sigma_shadow=SIGMA_5DB)
    state = ChannelState(mu=[0.0], a=[1.0])
    rng = np.random.default_rng(3)
    n = 100_000
    _, ln_h = sample_gain_grid(state, params, rng, 1, 1, n)
    m = ln_h.mean()
    se = SIGMA_5DB / np.sqrt(n)
    assert abs(m) < 3 * se


def test_determinism():
    params = ChannelParams(n_users=4, beta=0.9, q_a=1e-3, q_mu=0.5)
    out = []
    for _ in range(2):
        rng = np.random.default_rng(42)
        state = initial_state(params, rng)
        tra = [state.mu.copy()]
        for _ in range(20):
            state = evolve(state, params, rng)
            tra.append(state.mu.copy())
        out.append(np.array(tra))
    assert np.array_equal(out[0], out[1])


def test_stationary_trajectory_constant():
    params = ChannelParams(n_users=3, stationary=True, mu0=2.0)
    rng = np.random.default_rng(1)
    state = initial_state(params, rng)
    mu0 = state.mu.copy()
    for _ in range(50):
        state = evolve(state, params, rng)
        assert np.max(np.abs(state.mu - mu0)) == 0.0


def test_mean_coefficient_decays_at_rate_beta():
    # with bounded noise the ensemble mean of A decays geometrically
    beta = 0.9
    params = ChannelParams(n_users=1, beta=beta, q_a=1e-6, q_mu=0.1)
    rng = np.random.default_rng(5)
    reps = 400
    steps = 30
    a = np.ones(reps)
    means = []
    states = [ChannelState(mu=[0.0], a=[1.0]) for _ in range(reps)]
    for _ in range(steps):
        for i in range(reps):
            states[i] = evolve(states[i], params, rng)
        means.append(np.mean([s.a[0] for s in states]))
    log_means = np.log(np.abs(means))
    slope = np.polyfit(np.arange(1, steps + 1), log_means, 1)[0]
    assert abs(slope - np.log(beta)) < 0.02


def test_param_validation():
    with pytest.raises(ValueError):
        ChannelParams(n_users=1, beta=1.0)
    with pytest.raises(ValueError):
        ChannelParams(n_users=1, q_mu=-0.1)
    with pytest.raises(ValueError):
        ChannelState(mu=[1.0, 2.0], a=[1.0])
