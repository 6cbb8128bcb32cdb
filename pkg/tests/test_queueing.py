import numpy as np
import pytest

from ranslice.queueing import (EMBB, URLLC, MBBLL, QueueLedger, TrafficParams,
                               draw_arrivals, drift_bound, drift_coefficients,
                               lyapunov_value, step_all, step_queue,
                               step_virtual_queue)


def make_ledger(classes=(EMBB, URLLC, MBBLL), **kw):
    return QueueLedger(np.array(classes), TrafficParams(**kw))


def test_zero_rate_draws_nothing():
    params = TrafficParams(lambda_e=0.0)
    rng = np.random.default_rng(0)
    assert all(draw_arrivals(params, EMBB, rng) == 0 for _ in range(50))


def test_urllc_mean_rate():
    # Table-scale check of the Poisson mean over 1e5 frames
    params = TrafficParams(lambda_u=38.0)
    rng = np.random.default_rng(1)
    draws = draw_arrivals(params, URLLC, rng, size=100_000)
    tol = 3 * np.sqrt(38.0 / 100_000)
    assert abs(draws.mean() - 38.0) < tol


def test_bursty_long_run_mean_preserved():
    # batches every 5 frames on average, 62500 packets per batch: the
    # long-run mean stays 12500/frame by construction
    params = TrafficParams(lambda_m=12500.0, burst_interval=5.0,
                           burst_size=62500.0)
    rng = np.random.default_rng(2)
    draws = draw_arrivals(params, MBBLL, rng, size=100_000)
    assert abs(draws.mean() - 12500.0) / 12500.0 < 0.02


def test_step_queue_arithmetic():
    led = make_ledger()
    led.q[0] = 100.0
    step_queue(led, 0, rate_bits=30.0 / led.eta, arrivals=10.0)
    assert led.q[0] == pytest.approx(80.0)
    led.q[0] = 5.0
    step_queue(led, 0, rate_bits=30.0 / led.eta, arrivals=0.0)
    assert led.q[0] == pytest.approx(0.0)
    led.q[0] = 0.0
    draw = float(np.random.default_rng(3).poisson(12500))
    step_queue(led, 0, rate_bits=0.0, arrivals=draw)
    assert led.q[0] == pytest.approx(draw)


def test_virtual_queue_updates():
    led = make_ledger()
    d = led.delta[0]
    led.g[0] = 0.0
    step_virtual_queue(led, 0, q_next=d)
    assert led.g[0] == pytest.approx(0.0)
    led.g[0] = 10.0
    step_virtual_queue(led, 0, q_next=d + 5.0)
    assert led.g[0] == pytest.approx(15.0)
    led.g[0] = 3.0
    step_virtual_queue(led, 0, q_next=d - 10.0)
    assert led.g[0] == pytest.approx(0.0)


def test_virtual_queue_rejects_urllc():
    led = make_ledger()
    with pytest.raises(ValueError):
        step_virtual_queue(led, 1, q_next=1.0)


def test_drift_constant_formula():
    # C = (Q+L)^2 + delta^2 + 2GQ + 2GL with Q=10, L=2, delta=5, G=4
    led = make_ledger()
    led.q[0] = 10.0
    led.g[0] = 4.0
    led.delta = led.delta.copy()
    led.delta[0] = 5.0
    _, c = drift_coefficients(led, np.array([2.0, 0.0, 0.0]), 5e-8, 1e-3)
    assert c[0] == pytest.approx(144 + 25 + 80 + 16)


def test_weights_formula():
    led = make_ledger()
    w, _ = drift_coefficients(led, np.zeros(3), omega_q=5e-8, omega_t=1e-3)
    assert np.allclose(w, 1e-3)   # zero virtual queues
    led.g[:] = [8.0, 0.0, 2.0]
    w, _ = drift_coefficients(led, np.zeros(3), omega_q=0.5, omega_t=1e-3)
    assert w[0] == pytest.approx(0.5 * 8.0 * led.eta + 1e-3)
    assert w[1] == pytest.approx(1e-3)   # URLLC stays throughput-only
    assert w[2] == pytest.approx(0.5 * 2.0 * led.eta + 1e-3)


def test_monotone_in_arrivals():
    # more arrivals never yield smaller next-Q or next-G
    rng = np.random.default_rng(4)
    for _ in range(200):
        led_a = make_ledger()
        led_b = make_ledger()
        q0 = rng.uniform(0, 1000, 3)
        g0 = rng.uniform(0, 500, 3) * led_a.soft
        led_a.q[:] = q0
        led_b.q[:] = q0
        led_a.g[:] = g0
        led_b.g[:] = g0
        rates = rng.uniform(0, 2e6, 3)
        arr = rng.uniform(0, 300, 3)
        extra = rng.uniform(0, 100, 3)
        step_all(led_a, rates, arr)
        step_all(led_b, rates, arr + extra)
        assert np.all(led_b.q >= led_a.q - 1e-9)
        assert np.all(led_b.g >= led_a.g - 1e-9)


def test_drift_inequality_random_trajectories():
    # numeric form of the one-frame drift bound: for served rates capped at
    # the queue, L(G(k+1)) - L(G(k)) <= (omega_q/2) sum(C_n - 2 G eta r)
    rng = np.random.default_rng(5)
    omega_q = 5e-8
    for _ in range(20):
        led = make_ledger(lambda_e=200.0, lambda_u=10.0, lambda_m=150.0)
        for _ in range(300):
            arr = np.array([draw_arrivals(led.params, int(c), rng)
                            for c in led.classes], dtype=float)
            raw = rng.uniform(0, 2.0, 3) * led.q / led.eta  # may exceed queue
            served_rate = np.minimum(raw, led.q / led.eta)
            before = lyapunov_value(led, omega_q)
            bound = drift_bound(led, arr, served_rate, omega_q, 1e-3)
            step_all(led, served_rate, arr)
            drift = lyapunov_value(led, omega_q) - before
            assert drift <= bound + 1e-6 * max(abs(bound), 1.0)


def test_virtual_queue_stability_under_adequate_service():
    # when the time-average backlog stays below delta, G/k tends to zero
    led = make_ledger(lambda_e=100.0, lambda_u=5.0, lambda_m=80.0)
    rng = np.random.default_rng(6)
    horizon = 4000
    g_trace = np.empty(horizon)
    for k in range(horizon):
        arr = np.array([draw_arrivals(led.params, int(c), rng)
                        for c in led.classes], dtype=float)
        service = led.q / led.eta   # clears the whole queue every frame
        step_all(led, service, arr)
        g_trace[k] = led.g[0]
    assert g_trace[-1] / horizon < 1e-6


def test_delta_conversion():
    t = TrafficParams(lambda_e=10000.0, d_e_ms=120.0, frame_ms=1.0)
    assert t.delta_for(EMBB) == pytest.approx(1.2e6)
    t2 = TrafficParams(lambda_m=12500.0, d_m_ms=30.0, frame_ms=0.5)
    assert t2.delta_for(MBBLL) == pytest.approx(7.5e5)
