"""Traffic generation and queue dynamics.

Buffer queues count packets.  A served rate r (bits/s) drains eta*r
packets per frame, where eta is the frame-duration / packet-length
ratio.  Virtual queues accumulate backlog excess over the Little's-law
threshold delta = lambda * d / frame_duration and drive the
queue-pressure weights consumed by the allocator.
"""

from dataclasses import dataclass

import numpy as np

# service classes
EMBB, URLLC, MBBLL = 0, 1, 2
CLASS_NAMES = {EMBB: "eMBB", URLLC: "URLLC", MBBLL: "MBBLL"}


@dataclass
class TrafficParams:
    """Arrival intensities (packets/frame), delay targets (ms) and the
    packets-per-bit conversion.

    burst_interval > 0 switches the MBBLL class to a batched process:
    each frame a batch fires with probability 1/burst_interval and
    carries Poisson(burst_size) packets, preserving the long-run mean
    when burst_size = burst_interval * lambda_m.
    """

    lambda_e: float = 10000.0
    lambda_u: float = 38.0
    lambda_m: float = 12500.0
    d_e_ms: float = 120.0
    d_m_ms: float = 30.0
    frame_ms: float = 1.0
    eta: float = 1.25e-4          # packet*s/bit
    burst_interval: float = 0.0   # mean frames between MBBLL batches; 0 = Poisson
    burst_size: float = 0.0       # mean packets per MBBLL batch

    def __post_init__(self):
        if min(self.lambda_e, self.lambda_u, self.lambda_m) < 0:
            raise ValueError("arrival rates must be >= 0")
        if self.d_e_ms <= 0 or self.d_m_ms <= 0:
            raise ValueError("delay targets must be > 0")
        if self.frame_ms <= 0:
            raise ValueError("frame duration must be > 0")

    def rate_for(self, svc_class):
        return {EMBB: self.lambda_e, URLLC: self.lambda_u,
                MBBLL: self.lambda_m}[svc_class]

    def delta_for(self, svc_class):
        """Backlog threshold in packets for the long-term constraint.

        URLLC has no averaged constraint (hard per-frame service instead);
        its nominal threshold is one frame of mean arrivals, used only for
        context normalization.
        """
        if svc_class == EMBB:
            return self.lambda_e * self.d_e_ms / self.frame_ms
        if svc_class == MBBLL:
            return self.lambda_m * self.d_m_ms / self.frame_ms
        return self.lambda_u


def draw_arrivals(params: TrafficParams, svc_class, rng, size=None):
    """Packets arriving in one frame (scalar) or in `size` frames.

    Non-bursty classes are Poisson with the class mean.  The bursty
    MBBLL variant triggers a Poisson(burst_size) batch with probability
    1/burst_interval per frame, else zero.
    """
    lam = params.rate_for(svc_class)
    if svc_class == MBBLL and params.burst_interval > 0:
        shape = () if size is None else (size,)
        fire = rng.random(shape) < 1.0 / params.burst_interval
        batch = rng.poisson(params.burst_size, shape)
        out = np.where(fire, batch, 0)
        return int(out) if size is None else out.astype(float)
    if lam == 0:
        return 0 if size is None else np.zeros(size)
    out = rng.poisson(lam, size)
    return int(out) if size is None else out.astype(float)


class QueueLedger:
    """Per-user buffer queues Q, virtual queues G, and thresholds delta.

    G is pinned to zero for URLLC users; their latency constraint is the
    per-frame hard service requirement handled by the allocator.
    """

    def __init__(self, classes, params: TrafficParams):
        self.classes = np.asarray(classes, dtype=int)
        self.params = params
        n = self.classes.size
        self.q = np.zeros(n)
        self.g = np.zeros(n)
        self.eta = params.eta
        self.delta = np.array([params.delta_for(c) for c in self.classes])
        self.soft = self.classes != URLLC   # users with an averaged constraint

    @property
    def n_users(self):
        return self.classes.size

    def arrival_rates(self):
        return np.array([self.params.rate_for(c) for c in self.classes])

    def copy(self):
        out = QueueLedger.__new__(QueueLedger)
        out.classes = self.classes
        out.params = self.params
        out.q = self.q.copy()
        out.g = self.g.copy()
        out.eta = self.eta
        out.delta = self.delta
        out.soft = self.soft
        return out


def step_queue(ledger: QueueLedger, user, rate_bits, arrivals):
    """Q' = max(Q - eta*r, 0) + arrivals for one user."""
    if rate_bits < 0 or arrivals < 0:
        raise ValueError("rate and arrivals must be >= 0")
    q = ledger.q[user]
    ledger.q[user] = max(q - ledger.eta * rate_bits, 0.0) + arrivals
    return ledger


def step_virtual_queue(ledger: QueueLedger, user, q_next):
    """G' = max(G + Q(k+1) - delta, 0); only defined for eMBB/MBBLL."""
    if ledger.classes[user] == URLLC:
        raise ValueError("virtual queue update on a URLLC user")
    ledger.g[user] = max(ledger.g[user] + q_next - ledger.delta[user], 0.0)
    return ledger


def step_all(ledger: QueueLedger, rates_bits, arrivals):
    """Vectorized frame update used by the engine.

    Serves min(eta*r, Q) packets (the allocator caps rates at the queue
    length; the clamp here is defense in depth), adds arrivals, then
    advances the virtual queues of eMBB/MBBLL users.  Returns the served
    packet counts.
    """
    served = np.minimum(ledger.eta * np.asarray(rates_bits, dtype=float), ledger.q)
    ledger.q = ledger.q - served + arrivals
    ledger.g = np.where(
        ledger.soft, np.maximum(ledger.g + ledger.q - ledger.delta, 0.0), 0.0)
    return served


def drift_coefficients(ledger: QueueLedger, arrivals, omega_q, omega_t):
    """Per-user allocation weights and the drift constants.

    w_n = omega_q * G_n * eta + omega_t for users with an averaged
    constraint, omega_t otherwise.  C_n is the rate-independent part of
    the one-frame drift bound and is only reported so the drift
    inequality can be checked numerically.
    """
    arrivals = np.asarray(arrivals, dtype=float)
    w = np.where(ledger.soft, omega_q * ledger.g * ledger.eta + omega_t, omega_t)
    c = np.where(
        ledger.soft,
        (ledger.q + arrivals) ** 2 + ledger.delta ** 2
        + 2.0 * ledger.g * ledger.q + 2.0 * ledger.g * arrivals,
        0.0)
    return w, c


def lyapunov_value(ledger: QueueLedger, omega_q):
    """L = (omega_q/2) * sum of squared virtual queues."""
    return 0.5 * omega_q * float(np.sum(ledger.g[ledger.soft] ** 2))


def drift_bound(ledger_before: QueueLedger, arrivals, rates_bits, omega_q, omega_t):
    """Right-hand side of the one-frame drift inequality.

    (omega_q/2) * sum_n (C_n - 2 G_n eta r_n) over eMBB/MBBLL users,
    evaluated with the pre-update ledger.  Callers compare it against
    the realized Lyapunov difference.
    """
    _, c = drift_coefficients(ledger_before, arrivals, omega_q, omega_t)
    served_term = 2.0 * ledger_before.g * ledger_before.eta * np.asarray(rates_bits)
    s = ledger_before.soft
    return 0.5 * omega_q * float(np.sum(c[s] - served_term[s]))
