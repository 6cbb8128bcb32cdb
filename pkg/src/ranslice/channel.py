"""Non-stationary log-normal fading environment.

Per-user pathloss means evolve once per super-frame through a damped
autoregression; the magnitude of the channel coefficient is log-normal
around the current mean within a super-frame.  All gains are normalized
to noise power, so |h|^2 * p is directly an SNR.
"""

from dataclasses import dataclass, field

import numpy as np

# 5 dB shadowing deviation expressed in natural-log units of |h|
LN10_OVER_20 = np.log(10.0) / 20.0

# |ln h| ceiling keeping |h|^2 = e^(2 ln h) inside float64
LN_H_CLIP = 350.0


def shadow_std_from_db(db):
    """Convert a dB shadowing deviation to the std of ln|h|."""
    return db * LN10_OVER_20


@dataclass
class ChannelParams:
    """Static description of the fading environment.

    beta damps the AR coefficients toward zero; q_a / q_mu are the
    per-entry noise variances of the coefficient and mean recursions.
    sigma_shadow is the std of ln|h| (natural-log units).  stationary
    freezes the means entirely (identity coefficients, zero noise).
    """

    n_users: int
    beta: float = 0.999
    sigma_shadow: float = field(default=5.0 * LN10_OVER_20)
    q_a: float = 1e-4
    q_mu: float = 1.0
    stationary: bool = False
    mu0: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.beta < 1.0):
            raise ValueError(f"beta must be in [0, 1), got {self.beta}")
        if self.q_a < 0 or self.q_mu < 0:
            raise ValueError("noise variances must be >= 0")
        if self.sigma_shadow <= 0:
            raise ValueError("sigma_shadow must be > 0")
        if self.n_users < 1:
            raise ValueError("need at least one user")


@dataclass
class ChannelState:
    """Per-super-frame snapshot: mean of ln|h| per user and AR coefficients."""

    mu: np.ndarray
    a: np.ndarray
    superframe_index: int = 0

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        if self.mu.shape != self.a.shape:
            raise ValueError("mu and a must have identical length")


def initial_state(params: ChannelParams, rng) -> ChannelState:
    """Draw the initial per-user means around mu0 and set A(0) = I."""
    mu = params.mu0 + rng.standard_normal(params.n_users)
    return ChannelState(mu=mu, a=np.ones(params.n_users), superframe_index=0)


def evolve(state: ChannelState, params: ChannelParams, rng) -> ChannelState:
    """Advance the environment by one super-frame.

    A' = beta*A + N_A and mu' = A o mu + N_mu (element-wise; A is the
    diagonal).  In stationary mode the state is returned unchanged apart
    from the index.
    """
    if params.stationary:
        return ChannelState(state.mu.copy(), state.a.copy(),
                            state.superframe_index + 1)
    n = state.mu.size
    a_next = params.beta * state.a + np.sqrt(params.q_a) * rng.standard_normal(n)
    mu_next = state.a * state.mu + np.sqrt(params.q_mu) * rng.standard_normal(n)
    return ChannelState(mu_next, a_next, state.superframe_index + 1)


def sample_gain(state: ChannelState, user: int, params: ChannelParams, rng) -> float:
    """One i.i.d. draw of |h|^2 for a user within the current super-frame."""
    if user < 0 or user >= state.mu.size:
        raise IndexError(f"user {user} out of range for N={state.mu.size}")
    ln_h = state.mu[user] + params.sigma_shadow * rng.standard_normal()
    return float(np.exp(2.0 * np.clip(ln_h, -LN_H_CLIP, LN_H_CLIP)))


def sample_gain_grid(state: ChannelState, params: ChannelParams, rng, n_slots,
                     n_subchannels, n_frames=1):
    """Gains for a whole (frames x users x slots x subchannels) block.

    Draws are i.i.d. across every element; the log of the returned array
    divided by two is Gaussian around each user's current mean.  Also
    returns ln|h| so the caller can feed channel measurements without
    re-taking logs.  ln|h| is saturated at +-LN_H_CLIP so the gains stay
    finite even when the AR means wander far out.
    """
    n = state.mu.size
    ln_h = state.mu[None, :, None, None] + params.sigma_shadow * rng.standard_normal(
        (n_frames, n, n_slots, n_subchannels))
    np.clip(ln_h, -LN_H_CLIP, LN_H_CLIP, out=ln_h)
    return np.exp(2.0 * ln_h), ln_h
