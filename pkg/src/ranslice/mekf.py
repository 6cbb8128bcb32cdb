"""Joint tracking of AR coefficients and pathloss means from delayed
measurements.

The per-super-frame measurement (mean of ln|h| over the samples of the
previous super-frame) is only available one super-frame late, so the
filter extrapolates it linearly with the predicted drift before fusing.
State order: [a_1..a_N, mu_1..mu_N]; covariances are 2N x 2N.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrackerState:
    """Joint filter state.

    Carries the previous a-priori mean and covariance alongside the
    current ones because the delayed-measurement gain is built from the
    covariance of the epoch the measurement belongs to.
    """

    a_hat: np.ndarray
    mu_hat: np.ndarray
    p_minus: np.ndarray
    p_plus: np.ndarray
    mu_minus: np.ndarray
    mu_minus_prev: np.ndarray
    mu_tilde_prev: np.ndarray
    p_minus_prev: np.ndarray
    a_minus: np.ndarray = field(default=None)
    n_measurements: int = 0
    reset_events: int = 0

    @property
    def n_users(self):
        return self.mu_hat.size


def init_tracker(n_users: int) -> TrackerState:
    """Unit-mean, identity-coefficient, identity-covariance start."""
    ones = np.ones(n_users)
    eye = np.eye(2 * n_users)
    return TrackerState(
        a_hat=ones.copy(), mu_hat=ones.copy(),
        p_minus=eye.copy(), p_plus=eye.copy(),
        mu_minus=ones.copy(), mu_minus_prev=ones.copy(),
        mu_tilde_prev=ones.copy(), p_minus_prev=eye.copy(),
        a_minus=ones.copy())


def _transition(a_hat, beta):
    """H = blockdiag(beta*I, diag(a_hat))."""
    n = a_hat.size
    h = np.zeros((2 * n, 2 * n))
    h[:n, :n] = beta * np.eye(n)
    h[n:, n:] = np.diag(a_hat)
    return h


def predict(state: TrackerState, beta, q_a, q_mu) -> TrackerState:
    """A- = beta*A_hat, mu- = A_hat o mu_hat, P- = H P+ H^T + diag(Q)."""
    n = state.n_users
    h = _transition(state.a_hat, beta)
    q = np.zeros((2 * n, 2 * n))
    q[:n, :n] = q_a * np.eye(n)
    q[n:, n:] = q_mu * np.eye(n)
    state.p_minus_prev = state.p_minus
    state.mu_minus_prev = state.mu_minus
    state.a_minus = beta * state.a_hat
    state.mu_minus = state.a_hat * state.mu_hat
    state.p_minus = h @ state.p_plus @ h.T + q
    return state


def extrapolate(state: TrackerState) -> np.ndarray:
    """Shift the delayed measurement by the predicted one-step drift."""
    return state.mu_tilde_prev + state.mu_minus - state.mu_minus_prev


def fuse(state: TrackerState, mu_ext, beta, r_meas=1e-3) -> TrackerState:
    """Delayed-measurement update.

    The mutual definition of the gain K and the extrapolation matrix M is
    resolved in delayed-fusion order: nominal gain
    Kt = P-_(:,mu) (P-_(mu,mu) + R)^-1 from the covariance of the epoch
    the measurement belongs to, M = (I - [0 Kt]) H, K = M Kt.  r_meas is
    the measurement-noise variance R (the per-super-frame mean of ln|h|
    is a sample average, so R > 0; a zero R would collapse the corrected
    measurement rows of M and the filter would stop fusing entirely).
    The innovation is the extrapolated measurement minus the last fused
    mean.
    """
    n = state.n_users
    pm = state.p_minus_prev
    p12 = pm[:, n:]
    p22 = pm[n:, n:]
    r_eye = max(float(r_meas), 1e-9) * np.eye(n)
    try:
        kt = np.linalg.solve(p22 + r_eye, p12.T).T
    except np.linalg.LinAlgError:
        state.p_minus = np.eye(2 * n)
        state.p_plus = np.eye(2 * n)
        state.reset_events += 1
        state.a_hat = state.a_minus.copy()
        state.mu_hat = state.mu_minus.copy()
        return state
    h = _transition(state.a_hat, beta)
    zk = np.zeros((2 * n, 2 * n))
    zk[:, n:] = kt
    m = (np.eye(2 * n) - zk) @ h
    k = m @ kt

    innov = np.asarray(mu_ext) - state.mu_hat
    state.a_hat = state.a_minus + (k[:n, :n] @ innov)
    state.mu_hat = state.mu_minus + (k[n:, :n] @ innov)
    p_plus = state.p_minus - k @ pm[n:, :] @ m.T
    state.p_plus = 0.5 * (p_plus + p_plus.T)
    return state


def measure(ln_h_samples) -> np.ndarray:
    """mu_tilde per user: mean of ln|h| over a super-frame's samples.

    ln_h_samples: array with users on the first axis; remaining axes are
    the samples of the finished super-frame.
    """
    s = np.asarray(ln_h_samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[-1] == 0 or s.size == 0:
        raise ValueError("need at least one sample per user")
    return s.reshape(s.shape[0], -1).mean(axis=1)


def ingest_measurement(state: TrackerState, mu_tilde) -> TrackerState:
    """Store the just-finished super-frame's measurement for the next fuse."""
    state.mu_tilde_prev = np.asarray(mu_tilde, dtype=float)
    state.n_measurements += 1
    return state


def step(state: TrackerState, mu_tilde_prev_sf, beta, q_a, q_mu,
         r_meas=1e-3) -> TrackerState:
    """One full tracking cycle at the start of a super-frame.

    mu_tilde_prev_sf is the measurement of the super-frame that just
    ended (None on the very first call, where the initialization vector
    stands in).
    """
    if mu_tilde_prev_sf is not None:
        ingest_measurement(state, mu_tilde_prev_sf)
    predict(state, beta, q_a, q_mu)
    mu_ext = extrapolate(state)
    fuse(state, mu_ext, beta, r_meas)
    return state


def rhat(state: TrackerState, n_subchannels, p_total, tau_db=1.0) -> np.ndarray:
    """Approximate unit spectral efficiency per user.

    High-mean branch: 2*mu_hat*log2(e); low-mean branch applies the
    covariance-corrected e^{2 mu_hat} estimate.  The threshold compares
    mu_hat against ln(tau_lin*|F|/P_tot)/2 with tau converted from dB.
    """
    n = state.n_users
    tau_lin = 10.0 ** (tau_db / 10.0)
    thr = np.log(tau_lin * n_subchannels / p_total) / 2.0
    p_mu = np.diag(state.p_plus)[n:]
    high = 2.0 * state.mu_hat * np.log2(np.e)
    low = np.exp(-p_mu) * np.exp(2.0 * state.mu_hat)
    return np.where(state.mu_hat >= thr, high, low)


def predict_only_tracker(n_users, beta):
    """Reference tracker that never fuses: pure AR propagation.

    Returns a closure advancing (a_hat, mu_hat) one super-frame per call.
    """
    a_hat = np.ones(n_users)
    mu_hat = np.ones(n_users)

    def advance():
        nonlocal a_hat, mu_hat
        mu_hat = a_hat * mu_hat
        a_hat = beta * a_hat
        return mu_hat.copy()

    return advance
