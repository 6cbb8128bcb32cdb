"""Dual-timescale RAN slicing simulator.

Library layout:
    channel   -- non-stationary log-normal fading environment (AR pathloss means)
    queueing  -- traffic generation, buffer/virtual queues, drift coefficients
    pbra      -- per-frame penalty-BCD resource allocation (relaxed indicators + power)
    bandit    -- per-super-frame slicing policies (adversarial linear bandit + baselines)
    mekf      -- delayed-measurement Kalman tracker for the pathloss process
    engine    -- dual-timescale orchestration, metrics, counterfactual regret
    cli       -- experiment runner (scenario files, sweeps, seeds, CSV outputs)
    report    -- matplotlib figures rendered next to the CSV outputs
"""

__version__ = "0.1.0"
