"""Frame-scale resource allocation via penalty escalation around BCD.

Maximizes sum_n w_n * r_n over relaxed per-element user indicators b and
per-element powers p, where r_n = sum_(t,f) B*log2(1 + b*g*p).  The binary
constraint is enforced by an escalating p-order penalty whose linearization
keeps each block update concave; blocks alternate between an exact
per-element indicator solve and weighted water-filling of power.

Conventions:
  - every active element carries exactly one unit of indicator mass split
    among the users its partition admits, so the penalty is nonnegative
    and vanishes exactly at one-hot assignments;
  - per-user rate caps (queue drain ceilings) clip a user's effective
    weight to zero once its accumulated rate exceeds the cap;
  - hard per-frame demands are reserved ahead of the relaxation: the
    demanding user's highest-gain admitted elements get power floors sized
    to meet the demand, and the remaining elements are optimized normally.
    A user whose demand cannot be met keeps best-effort access instead.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .queueing import EMBB, URLLC, MBBLL

LN2 = float(np.log(2.0))


@dataclass
class GridSpec:
    """Time-frequency grid and budgets for one frame."""

    n_slots: int = 1
    n_subchannels: int = 24
    bandwidth_hz: float = 360e3
    p_total: float = 10.0       # per-slot budget, linear watts
    slice_split: int = 12       # sub-channels granted to the legacy partition

    def __post_init__(self):
        if not (0 <= self.slice_split <= self.n_subchannels):
            raise ValueError("slice_split must lie in [0, n_subchannels]")
        if self.p_total <= 0:
            raise ValueError("p_total must be > 0")


@dataclass
class PsumConfig:
    """Penalty escalation and BCD iteration controls."""

    p_order: float = 0.5
    epsilon: float = 1e-3
    sigma_init: float = 1e-3    # relative to the initial marginal-utility scale
    alpha: float = 3.0
    max_outer: int = 12
    max_inner: int = 50
    inner_tol: float = 1e-6     # relative objective improvement
    binary_tol: float = 1e-3
    bisect_iters: int = 48

    def __post_init__(self):
        if not (0.0 < self.p_order < 1.0):
            raise ValueError("p_order must be in (0, 1)")
        if self.epsilon <= 0 or self.sigma_init <= 0:
            raise ValueError("epsilon and sigma_init must be > 0")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")


@dataclass
class AllocationGrid:
    """Relaxed/binary assignment tensor and per-element powers."""

    b: np.ndarray   # [user, slot, subchannel] in [0, 1]
    p: np.ndarray   # [slot, subchannel] >= 0

    def validate(self, spec: GridSpec, allowed=None, tol=1e-9):
        """Check exclusivity, the power budget, and partition zeros."""
        if np.any(self.b < -tol) or np.any(self.b > 1 + tol):
            raise ValueError("b outside [0, 1]")
        if np.any(self.b.sum(axis=0) > 1 + tol):
            raise ValueError("element granted to more than one user")
        if np.any(self.p < -tol):
            raise ValueError("negative power")
        if np.any(self.p.sum(axis=1) > spec.p_total * (1 + 1e-9) + tol):
            raise ValueError("per-slot power budget exceeded")
        if allowed is not None:
            viol = self.b * (~allowed[:, None, :])
            if np.any(viol > tol):
                raise ValueError("assignment crosses the slice partition")
        return True


@dataclass
class AllocationResult:
    grid: AllocationGrid
    utility: float
    rates: np.ndarray             # per-user bits/s
    urllc_satisfied: np.ndarray   # bool per user (True where no demand)
    n_outer: int
    binary_dev: float
    sweep_objectives: np.ndarray  # true penalized objective after each sweep
    sweep_outer: np.ndarray       # outer-iteration index of each sweep


def partition_mask(classes, spec: GridSpec):
    """allowed[n, f]: which sub-channels user n's class may occupy."""
    classes = np.asarray(classes)
    f_idx = np.arange(spec.n_subchannels)
    legacy = f_idx < spec.slice_split
    allowed = np.empty((classes.size, spec.n_subchannels), dtype=np.bool_)
    for n, c in enumerate(classes):
        allowed[n] = legacy if c in (EMBB, URLLC) else ~legacy
    return allowed


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _waterfill(w_eff, g_eff, floor, p_total, iters):
    """Water-fill one slot: p_f = max(w_f*nu - 1/g_f, floor_f), sum <= budget.

    Elements with zero effective gain or weight stay at their floor.
    """
    F = w_eff.size
    p = np.empty(F)
    base = 0.0
    for f in range(F):
        p[f] = floor[f]
        base += floor[f]
    budget = p_total - base
    if budget <= 0.0:
        return p
    hi = 0.0
    any_live = False
    for f in range(F):
        if w_eff[f] > 0.0 and g_eff[f] > 0.0:
            any_live = True
            lvl = (budget + floor[f] + 1.0 / g_eff[f]) / w_eff[f]
            if lvl > hi:
                hi = lvl
    if not any_live:
        return p
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = 0.0
        for f in range(F):
            if w_eff[f] > 0.0 and g_eff[f] > 0.0:
                v = w_eff[f] * mid - 1.0 / g_eff[f]
                if v > floor[f]:
                    s += v - floor[f]
        if s > budget:
            hi = mid
        else:
            lo = mid
    nu = lo   # lo-side level keeps the budget satisfied
    used = 0.0
    for f in range(F):
        if w_eff[f] > 0.0 and g_eff[f] > 0.0:
            v = w_eff[f] * nu - 1.0 / g_eff[f]
            if v > floor[f]:
                p[f] = v
        used += p[f]
    if used > p_total:
        over = used - p_total
        above = 0.0
        for f in range(F):
            above += p[f] - floor[f]
        if above > 0.0:
            shrink = over / above
            for f in range(F):
                p[f] -= (p[f] - floor[f]) * shrink
    return p


@njit(cache=True)
def _b_block(gp, wb, cost, active, iters):
    """Exact maximizer of sum_n [wb_n*log2(1+b*gp_n) - cost_n*b_n] on the
    simplex sum b = 1, 0 <= b <= 1 over active users.

    gp folds in the element power; wb = w_eff * B.  Returns the indicator
    vector (zeros for inactive users).
    """
    N = gp.size
    b = np.zeros(N)
    count = 0
    last = -1
    for n in range(N):
        if active[n]:
            count += 1
            last = n
    if count == 0:
        return b
    if count == 1:
        b[last] = 1.0
        return b
    # bracket the simplex multiplier: below lo everyone saturates (S = count),
    # above hi everyone sits at zero (S = 0)
    nu_lo = 1e300
    nu_hi = -1e300
    for n in range(N):
        if active[n]:
            d1 = wb[n] * gp[n] / (LN2 * (1.0 + gp[n])) - cost[n]
            d0 = wb[n] * gp[n] / LN2 - cost[n]
            if d1 < nu_lo:
                nu_lo = d1
            if d0 > nu_hi:
                nu_hi = d0
    lo = nu_lo - 1.0
    hi = nu_hi + 1.0
    if hi <= lo:
        hi = lo + 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = 0.0
        for n in range(N):
            if active[n] and gp[n] > 0.0:
                den = cost[n] + mid
                if den <= 0.0:
                    s += 1.0
                else:
                    v = (wb[n] * gp[n] / (LN2 * den) - 1.0) / gp[n]
                    if v > 1.0:
                        v = 1.0
                    elif v < 0.0:
                        v = 0.0
                    s += v
        if s > 1.0:
            lo = mid
        else:
            hi = mid
    nu = 0.5 * (lo + hi)
    s = 0.0
    for n in range(N):
        if active[n] and gp[n] > 0.0:
            den = cost[n] + nu
            if den <= 0.0:
                v = 1.0
            else:
                v = (wb[n] * gp[n] / (LN2 * den) - 1.0) / gp[n]
                if v > 1.0:
                    v = 1.0
                elif v < 0.0:
                    v = 0.0
            b[n] = v
            s += v
    if s > 0.0:
        for n in range(N):
            b[n] /= s
    else:
        # no user has a positive marginal: park the unit mass on the best
        best = last
        bestv = -1e300
        for n in range(N):
            if active[n]:
                d0 = wb[n] * gp[n] - cost[n]
                if d0 > bestv:
                    bestv = d0
                    best = n
        b[best] = 1.0
    return b


@njit(cache=True)
def _rates_from(b, gains, p, bw):
    """Per-user bits/s of the relaxed allocation (sparse in b)."""
    N, T, F = gains.shape
    r = np.zeros(N)
    for t in range(T):
        for f in range(F):
            pe = p[t, f]
            if pe <= 0.0:
                continue
            for n in range(N):
                bv = b[n, t, f]
                if bv > 1e-12:
                    r[n] += bw * np.log1p(bv * gains[n, t, f] * pe) / LN2
    return r


@njit(cache=True)
def _capped_utility(r, w, caps):
    u = 0.0
    for n in range(r.size):
        rn = r[n] if r[n] < caps[n] else caps[n]
        u += w[n] * rn
    return u


@njit(cache=True)
def _penalty(b, participates, element_active, eps, p_order):
    """Escalated penalty: sum over active elements of
    sum_(n in simplex) (b_n + eps)^p - c_eps, which is >= 0 on the
    per-element equality simplex and 0 exactly at one-hot points."""
    N, T, F = b.shape
    total = 0.0
    for t in range(T):
        for f in range(F):
            if not element_active[t, f]:
                continue
            m = 0
            s = 0.0
            for n in range(N):
                if participates[n, f]:
                    m += 1
                    s += (b[n, t, f] + eps) ** p_order
            c_eps = (1.0 + eps) ** p_order + (m - 1.0) * eps ** p_order
            total += s - c_eps
    return total


@njit(cache=True)
def _psum_allocate(gains, weights, caps, allowed, demand_bits, bw, p_total,
                   p_order, eps, sigma_init, alpha, max_outer, max_inner,
                   inner_tol, binary_tol, iters):
    """Full per-frame allocation; see the module docstring for the scheme.

    Returns (b, p, rates, ok, n_outer, dev, sweep_obj, sweep_out, n_sweeps).
    """
    N, T, F = gains.shape

    # ---- demand reservation pre-pass -------------------------------------
    reserved = -np.ones((T, F), dtype=np.int64)
    floor = np.zeros((T, F))
    slot_floor = np.zeros(T)
    ok = np.ones(N, dtype=np.bool_)
    for n in range(N):
        if demand_bits[n] <= 0.0:
            continue
        ok[n] = False
        ng = np.empty(T * F)
        idx = np.empty(T * F, dtype=np.int64)
        m = 0
        for t in range(T):
            for f in range(F):
                if allowed[n, f] and reserved[t, f] < 0:
                    ng[m] = gains[n, t, f]
                    idx[m] = t * F + f
                    m += 1
        if m == 0:
            continue
        order = np.argsort(ng[:m])[::-1]
        sel_t = np.empty(m, dtype=np.int64)
        sel_f = np.empty(m, dtype=np.int64)
        sel_g = np.empty(m)
        k = 0
        for oi in range(m):
            e = idx[order[oi]]
            sel_t[k] = e // F
            sel_f[k] = e % F
            sel_g[k] = ng[order[oi]]
            k += 1
            # min-power fill on elements 0..k-1 reaching the demand:
            # p_i = max(nu - 1/g_i, 0) with sum of rates = demand
            hi = 1.0
            for _ in range(120):
                rate = 0.0
                for i in range(k):
                    v = hi - 1.0 / sel_g[i]
                    if v > 0.0:
                        rate += bw * np.log1p(sel_g[i] * v) / LN2
                if rate >= demand_bits[n] or hi > 1e24:
                    break
                hi *= 4.0
            rate = 0.0
            for i in range(k):
                v = hi - 1.0 / sel_g[i]
                if v > 0.0:
                    rate += bw * np.log1p(sel_g[i] * v) / LN2
            if rate < demand_bits[n]:
                continue
            lo = 0.0
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                rate = 0.0
                for i in range(k):
                    v = mid - 1.0 / sel_g[i]
                    if v > 0.0:
                        rate += bw * np.log1p(sel_g[i] * v) / LN2
                if rate >= demand_bits[n]:
                    hi = mid
                else:
                    lo = mid
            # hi-side level guarantees rate >= demand; check slot budgets
            fits = True
            for t in range(T):
                add = 0.0
                for i in range(k):
                    if sel_t[i] == t:
                        v = hi - 1.0 / sel_g[i]
                        if v > 0.0:
                            add += v
                if slot_floor[t] + add > p_total * (1.0 - 1e-9):
                    fits = False
                    break
            if not fits:
                continue
            for i in range(k):
                v = hi - 1.0 / sel_g[i]
                if v <= 0.0:
                    v = 0.0
                floor[sel_t[i], sel_f[i]] = v
                reserved[sel_t[i], sel_f[i]] = n
                slot_floor[sel_t[i]] += v
            ok[n] = True
            break
        if not ok[n]:
            # demand unreachable: drain best-effort instead of giving up,
            # on a fair share of the remaining elements and power
            d_rem = 0
            for u in range(n, N):
                if demand_bits[u] > 0.0 and (u > n or not ok[u]):
                    d_rem += 1
            if d_rem < 1:
                d_rem = 1
            max_el = m // d_rem
            if max_el < 1:
                max_el = 1
            take = max_el if max_el < m else m
            for t in range(T):
                cnt = 0
                for i in range(take):
                    if idx[order[i]] // F == t:
                        cnt += 1
                if cnt == 0:
                    continue
                g_sel = np.empty(cnt)
                f_sel = np.empty(cnt, dtype=np.int64)
                j = 0
                for i in range(take):
                    e = idx[order[i]]
                    if e // F == t:
                        g_sel[j] = ng[order[i]]
                        f_sel[j] = e % F
                        j += 1
                share = (p_total * (1.0 - 1e-9) - slot_floor[t]) / d_rem
                if share <= 0.0:
                    continue
                w_one = np.ones(cnt)
                zero_fl = np.zeros(cnt)
                p_sel = _waterfill(w_one, g_sel, zero_fl, share, iters)
                for j2 in range(cnt):
                    floor[t, f_sel[j2]] = p_sel[j2]
                    reserved[t, f_sel[j2]] = n
                    slot_floor[t] += p_sel[j2]

    # participation in the free optimization: users without a demand, plus
    # users whose demand could not be reserved (best effort)
    participates = np.zeros((N, F), dtype=np.bool_)
    for n in range(N):
        for f in range(F):
            participates[n, f] = allowed[n, f] and (demand_bits[n] <= 0.0 or not ok[n])

    element_active = np.zeros((T, F), dtype=np.bool_)
    n_active = np.zeros((T, F), dtype=np.int64)
    for t in range(T):
        for f in range(F):
            if reserved[t, f] >= 0:
                continue
            cnt = 0
            for n in range(N):
                if participates[n, f]:
                    cnt += 1
            if cnt > 0:
                element_active[t, f] = True
                n_active[t, f] = cnt

    # ---- initial point -----------------------------------------------------
    b = np.zeros((N, T, F))
    for t in range(T):
        for f in range(F):
            if reserved[t, f] >= 0:
                b[reserved[t, f], t, f] = 1.0
            elif element_active[t, f]:
                share = 1.0 / n_active[t, f]
                for n in range(N):
                    if participates[n, f]:
                        b[n, t, f] = share
    p = np.empty((T, F))
    for t in range(T):
        spread = (p_total - slot_floor[t]) / F
        if spread < 0.0:
            spread = 0.0
        for f in range(F):
            p[t, f] = floor[t, f] + spread

    r = _rates_from(b, gains, p, bw)

    # marginal-utility scale anchors the penalty escalation start
    scale = 0.0
    cnt = 0
    for t in range(T):
        for f in range(F):
            if not element_active[t, f]:
                continue
            pe = p[t, f]
            for n in range(N):
                bv = b[n, t, f]
                if bv > 0.0:
                    gpe = gains[n, t, f] * pe
                    scale += weights[n] * bw * gpe / (LN2 * (1.0 + bv * gpe))
                    cnt += 1
    if cnt > 0:
        scale /= cnt
    if scale <= 0.0:
        scale = 1.0

    sigma = sigma_init * scale
    w_eff = np.empty(N)
    gp_buf = np.empty(N)
    wb_buf = np.empty(N)
    cost_buf = np.empty(N)
    act_buf = np.zeros(N, dtype=np.bool_)
    max_sweeps = max_outer * max_inner + max_outer
    sweep_obj = np.empty(max_sweeps)
    sweep_out = np.empty(max_sweeps, dtype=np.int64)
    n_sweeps = 0
    n_out = 0
    dev = 0.0

    for n_out in range(1, max_outer + 1):
        obj_prev = _capped_utility(r, weights, caps) - sigma * _penalty(
            b, participates, element_active, eps, p_order)
        for n_in in range(max_inner):
            for n in range(N):
                w_eff[n] = weights[n] if r[n] < caps[n] else 0.0
            b_old = b.copy()
            p_old = p.copy()
            # b block: exact per-element solve of the linearized surrogate
            for t in range(T):
                for f in range(F):
                    if not element_active[t, f]:
                        continue
                    pe = p[t, f]
                    for n in range(N):
                        act = participates[n, f]
                        act_buf[n] = act
                        if act:
                            gp_buf[n] = gains[n, t, f] * pe
                            wb_buf[n] = w_eff[n] * bw
                            cost_buf[n] = sigma * p_order * (
                                b[n, t, f] + eps) ** (p_order - 1.0)
                        else:
                            gp_buf[n] = 0.0
                            wb_buf[n] = 0.0
                            cost_buf[n] = 0.0
                    bel = _b_block(gp_buf, wb_buf, cost_buf, act_buf, iters)
                    for n in range(N):
                        if act_buf[n]:
                            b[n, t, f] = bel[n]
            # p block: dominant-user water-filling per slot
            for t in range(T):
                w_slot = np.zeros(F)
                g_slot = np.zeros(F)
                for f in range(F):
                    nd = -1
                    if reserved[t, f] >= 0:
                        nd = reserved[t, f]
                        if nd >= 0:
                            w_slot[f] = w_eff[nd]
                            g_slot[f] = gains[nd, t, f]
                    elif element_active[t, f]:
                        bv = 0.0
                        for n in range(N):
                            if b[n, t, f] > bv:
                                bv = b[n, t, f]
                                nd = n
                        if nd >= 0:
                            w_slot[f] = w_eff[nd]
                            g_slot[f] = b[nd, t, f] * gains[nd, t, f]
                p[t] = _waterfill(w_slot, g_slot, floor[t], p_total, iters)
            r = _rates_from(b, gains, p, bw)
            obj_new = _capped_utility(r, weights, caps) - sigma * _penalty(
                b, participates, element_active, eps, p_order)
            if obj_new < obj_prev - 1e-9 * (abs(obj_prev) + 1.0):
                # safeguard: a sweep may lower the true penalized objective
                # when rate caps flip mid-sweep; revert and move on
                b = b_old
                p = p_old
                r = _rates_from(b, gains, p, bw)
                sweep_obj[n_sweeps] = obj_prev
                sweep_out[n_sweeps] = n_out
                n_sweeps += 1
                break
            sweep_obj[n_sweeps] = obj_new
            sweep_out[n_sweeps] = n_out
            n_sweeps += 1
            improve = obj_new - obj_prev
            obj_prev = obj_new
            if improve <= inner_tol * (abs(obj_new) + 1.0):
                break
        dev = 0.0
        for t in range(T):
            for f in range(F):
                if not element_active[t, f]:
                    continue
                for n in range(N):
                    bv = b[n, t, f]
                    d = bv - np.floor(bv + 0.5)
                    if d < 0.0:
                        d = -d
                    if d > dev:
                        dev = d
        if dev < binary_tol:
            break
        sigma *= alpha

    # ---- rounding and final power polish ----------------------------------
    for t in range(T):
        for f in range(F):
            if not element_active[t, f]:
                continue
            nd = -1
            bv = -1.0
            for n in range(N):
                if b[n, t, f] > bv:
                    bv = b[n, t, f]
                    nd = n
            for n in range(N):
                b[n, t, f] = 0.0
            if nd >= 0:
                b[nd, t, f] = 1.0
    for n in range(N):
        w_eff[n] = weights[n] if r[n] < caps[n] else 0.0
    for t in range(T):
        w_slot = np.zeros(F)
        g_slot = np.zeros(F)
        for f in range(F):
            for n in range(N):
                if b[n, t, f] > 0.5:
                    w_slot[f] = w_eff[n]
                    g_slot[f] = gains[n, t, f]
                    break
        p[t] = _waterfill(w_slot, g_slot, floor[t], p_total, iters)
    r = _rates_from(b, gains, p, bw)

    # binary polish: greedy exchange on the capped utility with running
    # per-user rates (handles cap kinks exactly at fixed power), then
    # re-water-fill; each accepted pass cannot lower the true objective
    util_cur = _capped_utility(r, weights, caps)
    for _ in range(8):
        b_old = b.copy()
        p_old = p.copy()
        r_run = r.copy()
        changed = False
        for t in range(T):
            for f in range(F):
                if not element_active[t, f]:
                    continue
                pe = p[t, f]
                if pe <= 0.0:
                    continue
                cur = -1
                for n in range(N):
                    if b[n, t, f] > 0.5:
                        cur = n
                        break
                # utility lost by taking the element away from its holder
                loss = 0.0
                el_cur = 0.0
                if cur >= 0:
                    el_cur = bw * np.log1p(gains[cur, t, f] * pe) / LN2
                    hold = r_run[cur] if r_run[cur] < caps[cur] else caps[cur]
                    bare = r_run[cur] - el_cur
                    bare = bare if bare < caps[cur] else caps[cur]
                    loss = weights[cur] * (hold - bare)
                best = cur
                best_gain = 0.0
                for n in range(N):
                    if n == cur or not participates[n, f]:
                        continue
                    el_n = bw * np.log1p(gains[n, t, f] * pe) / LN2
                    before = r_run[n] if r_run[n] < caps[n] else caps[n]
                    after = r_run[n] + el_n
                    after = after if after < caps[n] else caps[n]
                    gain = weights[n] * (after - before) - loss
                    if gain > best_gain + 1e-12 * (abs(loss) + 1.0):
                        best_gain = gain
                        best = n
                if best != cur and best >= 0:
                    el_new = bw * np.log1p(gains[best, t, f] * pe) / LN2
                    if cur >= 0:
                        b[cur, t, f] = 0.0
                        r_run[cur] -= el_cur
                    b[best, t, f] = 1.0
                    r_run[best] += el_new
                    changed = True
        if not changed:
            break
        for n in range(N):
            w_eff[n] = weights[n] if r_run[n] < caps[n] else 0.0
        for t in range(T):
            w_slot = np.zeros(F)
            g_slot = np.zeros(F)
            for f in range(F):
                for n in range(N):
                    if b[n, t, f] > 0.5:
                        w_slot[f] = w_eff[n]
                        g_slot[f] = gains[n, t, f]
                        break
            p[t] = _waterfill(w_slot, g_slot, floor[t], p_total, iters)
        r_new = _rates_from(b, gains, p, bw)
        util_new = _capped_utility(r_new, weights, caps)
        if util_new < util_cur * (1.0 - 1e-12) - 1e-300:
            b = b_old
            p = p_old
            r = _rates_from(b, gains, p, bw)
            break
        r = r_new
        util_cur = util_new
    for n in range(N):
        if demand_bits[n] > 0.0:
            ok[n] = r[n] >= demand_bits[n] * (1.0 - 1e-9)
        else:
            ok[n] = True
    return b, p, r, ok, n_out, dev, sweep_obj[:n_sweeps], sweep_out[:n_sweeps], n_sweeps


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def allocate(spec: GridSpec, gains, weights, classes, urllc_demand_bits=None,
             caps=None, cfg: PsumConfig = None, allowed=None) -> AllocationResult:
    """Solve one frame's allocation.

    gains: [user, slot, subchannel] normalized |h|^2.
    weights: per-user utility weights (queue pressure + throughput).
    urllc_demand_bits: per-user hard demand Q/eta in bits/s (0 or None
        for users without a hard constraint).
    caps: per-user useful-rate ceilings in bits/s (None = unbounded).
    allowed: precomputed partition mask (skips rebuilding it per call).

    Returns the binary grid, utility sum_n w_n*min(r_n, cap_n), per-user
    rates and the hard-demand satisfaction flags.
    """
    cfg = cfg or PsumConfig()
    gains = np.ascontiguousarray(gains, dtype=float)
    n, t, f = gains.shape
    if t != spec.n_slots or f != spec.n_subchannels:
        raise ValueError("gains shape does not match the grid spec")
    weights = np.ascontiguousarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be >= 0")
    demand = np.zeros(n) if urllc_demand_bits is None else np.ascontiguousarray(
        urllc_demand_bits, dtype=float)
    caps_arr = np.full(n, np.inf) if caps is None else np.ascontiguousarray(
        caps, dtype=float)
    if allowed is None:
        allowed = partition_mask(classes, spec)

    b, p, rates, ok, n_outer, dev, sweep_obj, sweep_out, _ = _psum_allocate(
        gains, weights, caps_arr, allowed, demand, spec.bandwidth_hz,
        spec.p_total, cfg.p_order, cfg.epsilon, cfg.sigma_init, cfg.alpha,
        cfg.max_outer, cfg.max_inner, cfg.inner_tol, cfg.binary_tol,
        cfg.bisect_iters)
    utility = float(np.sum(weights * np.minimum(rates, caps_arr)))
    grid = AllocationGrid(b=b, p=p)
    return AllocationResult(grid=grid, utility=utility, rates=rates,
                            urllc_satisfied=ok, n_outer=n_outer,
                            binary_dev=float(dev),
                            sweep_objectives=np.asarray(sweep_obj),
                            sweep_outer=np.asarray(sweep_out))


def power_step(b, spec: GridSpec, gains, weights, floors=None):
    """Water-fill power for a fixed assignment.

    Each element is reduced to its dominant user (argmax of b); the
    per-slot problem max sum_f w_f*B*log2(1 + g_eff*p_f), sum p <= p_total,
    then has the closed form p_f = max(w_f*nu - 1/g_eff, 0) with the level
    nu located by bisection.
    """
    b = np.asarray(b, dtype=float)
    gains = np.asarray(gains, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n, t, f = gains.shape
    floors = np.zeros((t, f)) if floors is None else np.asarray(floors, dtype=float)
    p = np.zeros((t, f))
    for ti in range(t):
        w_slot = np.zeros(f)
        g_slot = np.zeros(f)
        for fi in range(f):
            nd = int(np.argmax(b[:, ti, fi]))
            if b[nd, ti, fi] > 0:
                w_slot[fi] = weights[nd]
                g_slot[fi] = b[nd, ti, fi] * gains[nd, ti, fi]
        p[ti] = _waterfill(np.ascontiguousarray(w_slot),
                           np.ascontiguousarray(g_slot),
                           np.ascontiguousarray(floors[ti]),
                           spec.p_total, 60)
    return p


def subchannel_step(p, b, sigma, cfg: PsumConfig, spec: GridSpec, gains,
                    weights, classes=None):
    """One exact indicator block update with the penalty linearized at b.

    Every element's surrogate (concave rates minus the linearized p-order
    penalty) is maximized exactly over its per-element user simplex.
    """
    gains = np.asarray(gains, dtype=float)
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n, t, f = gains.shape
    allowed = (np.ones((n, f), dtype=bool) if classes is None
               else partition_mask(classes, spec))
    out = np.zeros_like(b)
    for ti in range(t):
        for fi in range(f):
            act = np.ascontiguousarray(allowed[:, fi])
            if not act.any():
                continue
            pe = p[ti, fi]
            gp = np.ascontiguousarray(gains[:, ti, fi] * pe)
            wb = np.ascontiguousarray(weights * spec.bandwidth_hz)
            cost = np.ascontiguousarray(
                sigma * cfg.p_order * (b[:, ti, fi] + cfg.epsilon) ** (cfg.p_order - 1.0))
            out[:, ti, fi] = _b_block(gp, wb, cost, act, cfg.bisect_iters)
    return out


def rates_of(grid: AllocationGrid, spec: GridSpec, gains):
    """Per-user bits/s for a given grid (relaxed or binary)."""
    gains = np.ascontiguousarray(gains, dtype=float)
    return _rates_from(np.ascontiguousarray(grid.b, dtype=float), gains,
                       np.ascontiguousarray(grid.p, dtype=float),
                       spec.bandwidth_hz)


def penalty_value(b, eps, p_order, simplex_sizes=None):
    """p-order penalty sum_(t,f) [sum_n (b+eps)^p - c_eps].

    simplex_sizes[t, f] gives each element's simplex size (how many users
    it is shared among); defaults to all users everywhere.
    """
    b = np.asarray(b, dtype=float)
    n, t, f = b.shape
    counts = (np.full((t, f), n, dtype=float) if simplex_sizes is None
              else np.asarray(simplex_sizes, dtype=float))
    c_eps = (1.0 + eps) ** p_order + (counts - 1.0) * eps ** p_order
    s = ((b + eps) ** p_order).sum(axis=0)
    # users beyond an element's simplex carry b = 0; drop their eps^p term
    s = s - (n - counts) * eps ** p_order
    return float((s - c_eps).sum())
