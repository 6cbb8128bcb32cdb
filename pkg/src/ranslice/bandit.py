"""Super-frame slicing policies.

The slicing decision is an arm a in {0..F}: the legacy partition gets a
sub-channels, the remaining F-a go to the 6G slice.  The main policy is
an adversarial linear contextual bandit (exponential weights over
per-arm linear loss estimates with uniform exploration); EXP3, a
contextual UCB, and a fixed equal split serve as baselines.
"""

from dataclasses import dataclass, field

import numpy as np

from .queueing import URLLC

LOG2E = float(np.log2(np.e))


def context_dim(n_users, nr=False):
    return 1 + (8 if nr else 4) * n_users


def dimension_overhead(n_users):
    """Theorem bound ratio between the extended and base context sizes."""
    return ((1.0 + 8.0 * n_users) / (1.0 + 4.0 * n_users)) ** (1.0 / 3.0)


def rate_scales(n_arms, dim):
    """Dimension constants of the tuned schedules:
    eta = eta_scale * L^(-2/3), gamma = gamma_scale * L^(-1/3)."""
    log_a = np.log(max(n_arms, 2))
    return ((n_arms * dim) ** (-1.0 / 3.0) * log_a ** (2.0 / 3.0),
            (n_arms * dim * log_a) ** (1.0 / 3.0))


def tuned_rates(horizon, n_arms, dim, eta_scale=None, gamma_scale=None):
    """Horizon-tuned learning and exploration rates.

    Defaults: eta = L^(-2/3) (A*D)^(-1/3) (ln A)^(2/3) and
    gamma = L^(-1/3) (A*D*ln A)^(1/3) clamped into (0, 1].  Custom scale
    constants keep the exponents while rescaling the schedules.
    """
    horizon = max(int(horizon), 2)
    es, gs = rate_scales(n_arms, dim)
    if eta_scale is not None:
        es = eta_scale
    if gamma_scale is not None:
        gs = gamma_scale
    eta = es * horizon ** (-2.0 / 3.0)
    gamma = gs * horizon ** (-1.0 / 3.0)
    return eta, min(max(gamma, 1e-12), 1.0)


@dataclass
class ContextScales:
    """Normalizers keeping every context feature in [0, 1]."""

    q_cap: np.ndarray     # per user, typically 10*delta
    g_cap: np.ndarray
    r_cap: float = 1.0

    @classmethod
    def from_thresholds(cls, delta, mu_ref=0.0, mult=10.0):
        delta = np.asarray(delta, dtype=float)
        r_cap = max(2.0 * (mu_ref + 3.0) * LOG2E, 1.0)
        return cls(q_cap=mult * np.maximum(delta, 1.0),
                   g_cap=mult * np.maximum(delta, 1.0), r_cap=r_cap)


def build_context(ledger, scales: ContextScales, rhat=None):
    """Per-user feature blocks around the constant 1.

    Base layout per user: [G, Q, Q^2, G*Q]; the non-stationary variant
    appends [R, R^2, Q*R, G*R].  All entries are scaled into [0, 1];
    URLLC users contribute with G fixed at zero.
    """
    q = np.minimum(ledger.q / scales.q_cap, 1.0)
    g = np.where(ledger.classes == URLLC, 0.0,
                 np.minimum(ledger.g / scales.g_cap, 1.0))
    n = q.size
    if rhat is None:
        x = np.empty(1 + 4 * n)
        x[0] = 1.0
        blocks = np.stack([g, q, q * q, g * q], axis=1)
        x[1:] = blocks.reshape(-1)
        return x
    r = np.clip(np.asarray(rhat, dtype=float) / scales.r_cap, 0.0, 1.0)
    x = np.empty(1 + 8 * n)
    x[0] = 1.0
    blocks = np.stack([g, q, q * q, g * q, r, r * r, q * r, g * r], axis=1)
    x[1:] = blocks.reshape(-1)
    return x


@dataclass
class BanditState:
    """Exponential-weights state over per-arm cumulative loss vectors."""

    n_arms: int
    dim: int
    horizon: int
    eta: float = None
    gamma: float = None
    anytime: bool = False
    eta_scale: float = None     # anytime schedule constants; None = tuned
    gamma_scale: float = None
    theta_sum: np.ndarray = field(default=None)
    round: int = 0
    last_probs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.theta_sum is None:
            self.theta_sum = np.zeros((self.n_arms, self.dim))
        if self.eta is None or self.gamma is None:
            eta, gamma = tuned_rates(self.horizon, self.n_arms, self.dim,
                                     self.eta_scale, self.gamma_scale)
            self.eta = self.eta if self.eta is not None else eta
            self.gamma = self.gamma if self.gamma is not None else gamma


def policy(state: BanditState, x):
    """Mixture of softmax over eta*<x, theta_sum_f> and uniform exploration."""
    eta, gamma = state.eta, state.gamma
    if state.anytime:
        eta, gamma = tuned_rates(max(state.round, 2), state.n_arms, state.dim,
                                 state.eta_scale, state.gamma_scale)
    scores = eta * (state.theta_sum @ x)
    scores -= scores.max()
    expw = np.exp(scores)
    probs = (1.0 - gamma) * expw / expw.sum() + gamma / state.n_arms
    return probs / probs.sum()


def select_arm(state: BanditState, x, rng):
    probs = policy(state, x)
    state.last_probs = probs
    return int(rng.choice(state.n_arms, p=probs))


def update(state: BanditState, x, arm, reward):
    """Importance-weighted rank-one loss estimate for the chosen arm.

    theta_hat = reward / (pi_arm * <x, x>) * x, accumulated into the
    chosen arm's running sum; unchosen arms receive zero.
    """
    probs = state.last_probs if state.last_probs is not None else policy(state, x)
    pi = max(float(probs[arm]), 1e-12)
    xx = float(x @ x)
    state.theta_sum[arm] += (reward / (pi * xx)) * x
    state.round += 1
    state.last_probs = None
    return state


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

@dataclass
class Exp3State:
    """Classic exponential weights on raw per-arm rewards (no context)."""

    n_arms: int
    horizon: int
    gamma: float = None
    anytime: bool = False
    log_w: np.ndarray = field(default=None)
    round: int = 0
    last_probs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.log_w is None:
            self.log_w = np.zeros(self.n_arms)
        if self.gamma is None:
            self.gamma = self._tuned(self.horizon)

    def _tuned(self, horizon):
        a = self.n_arms
        return float(min(1.0, np.sqrt(a * np.log(max(a, 2))
                                      / ((np.e - 1.0) * max(horizon, 2)))))


def exp3_policy(state: Exp3State):
    gamma = state._tuned(max(state.round, 2)) if state.anytime else state.gamma
    lw = state.log_w - state.log_w.max()
    w = np.exp(lw)
    probs = (1.0 - gamma) * w / w.sum() + gamma / state.n_arms
    return probs / probs.sum(), gamma


def exp3_select(state: Exp3State, rng):
    probs, _ = exp3_policy(state)
    state.last_probs = probs
    return int(rng.choice(state.n_arms, p=probs))


def exp3_update(state: Exp3State, arm, reward):
    # log_w is unchanged since selection, so this reproduces the
    # selection-time distribution for the importance weight
    probs, gamma = exp3_policy(state)
    pi = max(float(probs[arm]), 1e-12)
    state.log_w[arm] += gamma / state.n_arms * reward / pi
    state.round += 1
    state.last_probs = None
    return state


@dataclass
class CucbState:
    """Per-arm ridge regression with an exploration bonus."""

    n_arms: int
    dim: int
    width: float = 1.0
    reg: float = 1.0
    v: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.v is None:
            self.v = np.stack([self.reg * np.eye(self.dim)] * self.n_arms)
        if self.b is None:
            self.b = np.zeros((self.n_arms, self.dim))


def cucb_select(state: CucbState, x, rng=None):
    scores = np.empty(state.n_arms)
    for a in range(state.n_arms):
        vinv_x = np.linalg.solve(state.v[a], x)
        theta = np.linalg.solve(state.v[a], state.b[a])
        scores[a] = theta @ x + state.width * np.sqrt(max(x @ vinv_x, 0.0))
    return int(np.argmax(scores))


def cucb_update(state: CucbState, x, arm, reward):
    state.v[arm] += np.outer(x, x)
    state.b[arm] += reward * x
    return state


def nads_arm(n_subchannels):
    """Fixed equal split: half the sub-channels to each partition."""
    return n_subchannels // 2
