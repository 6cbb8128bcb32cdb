import numpy as np
import pytest

from ranslice.channel import ChannelParams, ChannelState, evolve
from ranslice.mekf import (TrackerState, extrapolate, fuse, ingest_measurement,
                           init_tracker, measure, predict, predict_only_tracker,
                           rhat, step)


def test_predict_zero_beta_kills_coefficients():
    st = init_tracker(2)
    predict(st, beta=0.0, q_a=0.0, q_mu=0.0)
    assert np.allclose(st.a_minus, 0.0)


def test_predict_identity_propagation():
    st = init_tracker(3)
    st.mu_hat = np.array([1.0, -2.0, 0.5])
    st.a_hat = np.ones(3)
    predict(st, beta=0.9, q_a=0.0, q_mu=0.0)
    assert np.allclose(st.mu_minus, [1.0, -2.0, 0.5])


def test_predict_covariance_diagonal_arithmetic():
    # P+ = I, A_hat = I, beta = 0.9, Q_A = 1e-4, Q_mu = 1 gives a diagonal
    # prior covariance with blocks 0.81 + 1e-4 and 2
    st = init_tracker(2)
    predict(st, beta=0.9, q_a=1e-4, q_mu=1.0)
    expected = np.diag([0.81 + 1e-4] * 2 + [2.0] * 2)
    assert np.allclose(st.p_minus, expected)


def test_extrapolation_identities():
    st = init_tracker(1)
    st.mu_tilde_prev = np.array([2.0])
    st.mu_minus = np.array([1.5])
    st.mu_minus_prev = np.array([1.0])
    assert extrapolate(st)[0] == pytest.approx(2.5)
    st.mu_minus_prev = st.mu_minus.copy()
    assert extrapolate(st)[0] == pytest.approx(2.0)


def test_first_superframe_uses_initialization():
    # before any measurement, the all-ones initialization stands in:
    # mu_tilde(0)=1, mu-(1)=1, mu-(0)=1 so the extrapolation is 1
    st = init_tracker(2)
    predict(st, beta=0.9, q_a=1e-4, q_mu=1.0)
    assert np.allclose(extrapolate(st), 1.0)


def test_zero_innovation_fixed_point():
    st = init_tracker(2)
    predict(st, beta=0.8, q_a=1e-4, q_mu=0.5)
    mu_ext = st.mu_hat.copy()          # innovation mu_ext - mu_hat = 0
    a_minus = st.a_minus.copy()
    mu_minus = st.mu_minus.copy()
    fuse(st, mu_ext, beta=0.8)
    assert np.allclose(st.a_hat, a_minus)
    assert np.allclose(st.mu_hat, mu_minus)


def test_scalar_case_matches_hand_algebra():
    # N=1: every block is a scalar, so the gain chain can be written out
    # explicitly and compared entry for entry
    beta, q_a, q_mu, r = 0.85, 0.01, 0.3, 0.05
    st = init_tracker(1)
    st.a_hat = np.array([0.7])
    st.mu_hat = np.array([1.2])
    st.p_plus = np.array([[0.5, 0.1], [0.1, 0.9]])
    st.mu_tilde_prev = np.array([1.4])
    st.mu_minus = np.array([1.1])
    st.mu_minus_prev = np.array([1.0])

    a_hat0 = st.a_hat[0]
    predict(st, beta, q_a, q_mu)
    # hand prediction
    h = np.array([[beta, 0.0], [0.0, a_hat0]])
    p_minus_hand = h @ np.array([[0.5, 0.1], [0.1, 0.9]]) @ h.T + np.diag([q_a, q_mu])
    assert np.allclose(st.p_minus, p_minus_hand)
    assert st.a_minus[0] == pytest.approx(beta * a_hat0)
    assert st.mu_minus[0] == pytest.approx(0.7 * 1.2)

    pm = st.p_minus_prev        # the delayed-epoch covariance (identity here)
    mu_ext = extrapolate(st)
    mu_hat_prev = st.mu_hat[0]
    # hand gain: kt = p12 / (p22 + r) on the previous prior covariance
    kt = pm[:, 1:] @ np.linalg.inv(pm[1:, 1:] + r * np.eye(1))
    zk = np.zeros((2, 2))
    zk[:, 1:] = kt
    h_now = np.array([[beta, 0.0], [0.0, a_hat0]])
    m = (np.eye(2) - zk) @ h_now
    k = m @ kt
    innov = mu_ext[0] - mu_hat_prev
    a_hand = st.a_minus[0] + k[0, 0] * innov
    mu_hand = st.mu_minus[0] + k[1, 0] * innov
    p_hand = st.p_minus - k @ pm[1:, :] @ m.T
    p_hand = 0.5 * (p_hand + p_hand.T)

    fuse(st, mu_ext, beta, r_meas=r)
    assert st.a_hat[0] == pytest.approx(a_hand)
    assert st.mu_hat[0] == pytest.approx(mu_hand)
    assert np.allclose(st.p_plus, p_hand)


def test_measure_statistics():
    rng = np.random.default_rng(0)
    # sigma -> 0 recovers the mean exactly
    assert measure(np.full((2, 5), 1.3))[0] == pytest.approx(1.3)
    # single sample
    assert measure(np.array([[0.7]]))[0] == pytest.approx(0.7)
    # CLT: with 1e4 samples the error is below 3 sigma/sqrt(n) the vast
    # majority of the time
    sigma = 0.5756   # 5 dB in natural-log units
    hits = 0
    trials = 200
    for _ in range(trials):
        samples = 0.4 + sigma * rng.standard_normal((1, 10_000))
        if abs(measure(samples)[0] - 0.4) < 3 * sigma / 100:
            hits += 1
    assert hits >= 0.99 * trials * 0.97   # >=99% with slack for MC noise


def test_measure_requires_samples():
    with pytest.raises(ValueError):
        measure(np.empty((2, 0)))


def test_riccati_trace_converges():
    # oracle: iterating the covariance recursion with the limiting
    # transition blockdiag(beta I, 0) reaches a fixed point; the live
    # filter's trace must settle too
    n = 4
    beta, q_a, q_mu, r = 0.95, 1e-4, 1.0, 1e-3
    eye = np.eye(2 * n)
    q = np.diag([q_a] * n + [q_mu] * n)
    f1 = np.zeros((2 * n, 2 * n))
    f1[:n, :n] = beta * np.eye(n)
    p = eye.copy()
    prev_p = eye.copy()
    traces = []
    for _ in range(600):
        kt = np.linalg.solve(prev_p[n:, n:] + r * np.eye(n), prev_p[:, n:].T).T
        zk = np.zeros((2 * n, 2 * n))
        zk[:, n:] = kt
        m = (eye - zk) @ f1
        k = m @ kt
        p_minus = f1 @ p @ f1.T + q
        p_new = p_minus - k @ prev_p[n:, :] @ m.T
        prev_p = p_minus
        p = 0.5 * (p_new + p_new.T)
        traces.append(np.trace(p))
    assert abs(traces[-1] - traces[-2]) < 1e-9   # oracle fixed point

    params = ChannelParams(n_users=n, beta=beta, q_a=q_a, q_mu=q_mu, mu0=0.0)
    rng = np.random.default_rng(1)
    state = ChannelState(mu=rng.normal(0, 1, n), a=np.ones(n))
    st = init_tracker(n)
    tr_prev = None
    deltas = []
    mu_tilde = None
    for li in range(500):
        step(st, mu_tilde, beta, q_a, q_mu, r_meas=r)
        tr = float(np.trace(st.p_plus))
        if tr_prev is not None:
            deltas.append(abs(tr - tr_prev))
        tr_prev = tr
        state = evolve(state, params, rng)
        mu_tilde = state.mu + 0.01 * rng.standard_normal(n)
    assert max(deltas[300:]) < 1e-3


def test_tracker_beats_predict_only():
    # non-stationary channel, 200 super-frames: fusing the delayed
    # measurements must lower the mean tracking error versus the pure AR
    # propagation, in nearly every replicate
    beta, q_a, q_mu = 0.95, 1e-4, 1.0
    wins = 0
    seeds = 20
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        params = ChannelParams(n_users=3, beta=beta, q_a=q_a, q_mu=q_mu, mu0=1.0)
        state = ChannelState(mu=params.mu0 + rng.standard_normal(3),
                             a=np.ones(3))
        st = init_tracker(3)
        po = predict_only_tracker(3, beta)
        err_kf, err_po = [], []
        mu_tilde = None
        for _ in range(200):
            step(st, mu_tilde, beta, q_a, q_mu)
            mu_po = po()
            err_kf.append(np.abs(st.mu_hat - state.mu).mean())
            err_po.append(np.abs(mu_po - state.mu).mean())
            mu_tilde = state.mu + 0.02 * rng.standard_normal(3)
            state = evolve(state, params, rng)
        if np.mean(err_kf) < np.mean(err_po):
            wins += 1
    assert wins >= 18


def test_steady_state_unbiasedness():
    # time-average tracking error stays within 3 standard errors of zero
    beta, q_a, q_mu = 0.9, 1e-4, 0.5
    rng = np.random.default_rng(11)
    params = ChannelParams(n_users=2, beta=beta, q_a=q_a, q_mu=q_mu, mu0=0.0)
    state = ChannelState(mu=rng.normal(0, 1, 2), a=np.ones(2))
    st = init_tracker(2)
    mu_tilde = None
    errs = []
    for li in range(1000):
        step(st, mu_tilde, beta, q_a, q_mu)
        if li > 50:
            errs.append(st.mu_hat - state.mu)
        mu_tilde = state.mu + 0.02 * rng.standard_normal(2)
        state = evolve(state, params, rng)
    errs = np.array(errs)
    se = errs.std(axis=0) / np.sqrt(errs.shape[0])
    # the per-step error is serially correlated; allow a generous factor
    assert np.all(np.abs(errs.mean(axis=0)) < 10 * se)


def test_rhat_branches():
    st = init_tracker(1)
    # threshold for tau=1 dB, 24 sub-channels, 10 W
    thr = np.log(10 ** 0.1 * 24 / 10.0) / 2.0
    st.mu_hat = np.array([thr])
    st.p_plus = np.eye(2)
    val = rhat(st, 24, 10.0, tau_db=1.0)
    assert val[0] == pytest.approx(2 * thr * np.log2(np.e))  # boundary: high
    st.mu_hat = np.array([1.0])
    assert rhat(st, 24, 10.0)[0] == pytest.approx(2 * np.log2(np.e))
    st.mu_hat = np.array([-3.0])
    st.p_plus = np.diag([1.0, 0.5])
    assert rhat(st, 24, 10.0)[0] == pytest.approx(np.exp(-0.5) * np.exp(-6.0))


def test_noiseless_extrapolation_converges():
    # stationary channel, vanishing shadowing: the extrapolated
    # measurement converges to the true mean
    true_mu = np.array([0.8, -0.3])
    st = init_tracker(2)
    mu_tilde = None
    mu_ext = None
    for _ in range(50):
        if mu_tilde is not None:
            ingest_measurement(st, mu_tilde)
        predict(st, beta=0.95, q_a=1e-4, q_mu=1e-6)
        mu_ext = extrapolate(st)
        fuse(st, mu_ext, beta=0.95, r_meas=1e-6)
        mu_tilde = true_mu.copy()   # exact measurements
    assert np.max(np.abs(mu_ext - true_mu)) < 1e-3
