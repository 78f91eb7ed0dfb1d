"""Hot numeric kernels.

Every function decorated with :func:`njit` is compiled by numba unless the
``DYNAP2P_NUMBA=0`` environment flag is set, in which case it runs as plain
Python. :func:`project_groups` additionally has a vectorized NumPy path used
whenever numba is off.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, njit

BISECT_TOL = 1e-12
BISECT_MAX_ITER = 200

# asyn_run_chunk status codes
RUNNING = 0
CONVERGED = 1
DIVERGED = 2
STALE_READ = 3
PROJECTION_FAILED = 4


@njit
def project_group(v, start, stop, sign, lo, hi, out):
    """Project ``v[start:stop]`` onto ``{sign * x >= 0, lo <= sum(x) <= hi}``.

    Writes into ``out[start:stop]``; returns 0 on success, 1 if the multiplier
    search failed. Buyers (``sign < 0``) are mirrored onto the seller case.
    """
    n = stop - start
    if sign > 0:
        L = lo
        H = hi
    else:
        L = -hi
        H = -lo
    s0 = 0.0
    ymax = -np.inf
    ymin = np.inf
    ysum = 0.0
    for k in range(start, stop):
        y = sign * v[k]
        ysum += y
        if y > 0.0:
            s0 += y
        if y > ymax:
            ymax = y
        if y < ymin:
            ymin = y
    if s0 >= L and s0 <= H:
        for k in range(start, stop):
            y = sign * v[k]
            out[k] = sign * y if y > 0.0 else 0.0
        return 0
    if s0 > H:
        target = H
        if H <= 0.0:
            for k in range(start, stop):
                out[k] = 0.0
            return 0
        lam_lo = 0.0
        lam_hi = ymax
    else:
        target = L
        lam_hi = 0.0
        lam_lo = (ysum - L) / n
        if ymin < lam_lo:
            lam_lo = ymin
    scale = abs(target)
    if ymax > scale:
        scale = ymax
    if -ymin > scale:
        scale = -ymin
    if scale < 1.0:
        scale = 1.0
    tol = BISECT_TOL * scale

    lam = 0.5 * (lam_lo + lam_hi)
    resid = np.inf
    for _ in range(BISECT_MAX_ITER):
        lam = 0.5 * (lam_lo + lam_hi)
        f = 0.0
        for k in range(start, stop):
            y = sign * v[k] - lam
            if y > 0.0:
                f += y
        resid = f - target
        if abs(resid) <= tol:
            break
        if resid > 0.0:
            lam_lo = lam
        else:
            lam_hi = lam

    # exact multiplier on the identified support
    cnt = 0
    ssum = 0.0
    for k in range(start, stop):
        y = sign * v[k]
        if y - lam > 0.0:
            cnt += 1
            ssum += y
    if cnt > 0:
        lam2 = (ssum - target) / cnt
        same = True
        for k in range(start, stop):
            y = sign * v[k]
            if (y - lam > 0.0) != (y - lam2 > 0.0):
                same = False
                break
        if same:
            lam = lam2
            resid = 0.0
    if abs(resid) > tol:
        return 1
    for k in range(start, stop):
        y = sign * v[k] - lam
        out[k] = sign * y if y > 0.0 else 0.0
    return 0


@njit
def project_groups_loop(v, g_start, g_stop, g_sign, g_lo, g_hi, out):
    fails = 0
    for g in range(g_start.shape[0]):
        fails += project_group(v, g_start[g], g_stop[g], g_sign[g], g_lo[g], g_hi[g], out)
    return fails


def project_groups_numpy(v, g_start, g_stop, g_sign, g_lo, g_hi, out):
    """Vectorized counterpart of :func:`project_groups_loop`.

    Groups must tile ``v`` contiguously in order (true for every instance).
    """
    sizes = g_stop - g_start
    gid = np.repeat(np.arange(g_start.shape[0]), sizes)
    sg = g_sign[gid]
    y = sg * v
    L = np.where(g_sign > 0, g_lo, -g_hi)
    H = np.where(g_sign > 0, g_hi, -g_lo)
    s0 = np.add.reduceat(np.maximum(y, 0.0), g_start)
    over = s0 > H
    under = s0 < L
    target = np.where(over, H, L)
    ymax = np.maximum.reduceat(y, g_start)
    ymin = np.minimum.reduceat(y, g_start)
    ysum = np.add.reduceat(y, g_start)
    lam_lo = np.where(over, 0.0, np.minimum(ymin, (ysum - L) / sizes))
    lam_hi = np.where(over, ymax, 0.0)
    scale = np.maximum.reduce([np.abs(target), ymax, -ymin, np.ones_like(ymax)])
    tol = BISECT_TOL * scale
    active = over | under
    lam = np.zeros_like(s0)
    if active.any():
        done = ~active
        for _ in range(BISECT_MAX_ITER):
            mid = 0.5 * (lam_lo + lam_hi)
            lam = np.where(done, lam, mid)
            f = np.add.reduceat(np.maximum(y - lam[gid], 0.0), g_start)
            resid = f - target
            done = done | (np.abs(resid) <= tol)
            if done.all():
                break
            lam_lo = np.where(~done & (resid > 0), lam, lam_lo)
            lam_hi = np.where(~done & (resid <= 0), lam, lam_hi)
        supp = (y - lam[gid]) > 0.0
        cnt = np.add.reduceat(supp.astype(float), g_start)
        ssum = np.add.reduceat(np.where(supp, y, 0.0), g_start)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam2 = np.where(cnt > 0, (ssum - target) / cnt, lam)
        same = np.add.reduceat(((y - lam2[gid]) > 0.0) != supp, g_start) == 0
        use = active & (cnt > 0) & same
        lam = np.where(use, lam2, lam)
        zero_cap = over & (H <= 0.0)
        f = np.add.reduceat(np.maximum(y - lam[gid], 0.0), g_start)
        bad = active & ~zero_cap & ~use & (np.abs(f - target) > tol)
        lam = np.where(zero_cap, np.inf, lam)
    else:
        bad = np.zeros_like(active)
    x = np.maximum(y - lam[gid], 0.0)
    out[:] = sg * x
    return int(bad.sum())


def project_groups(v, g_start, g_stop, g_sign, g_lo, g_hi, out):
    if NUMBA_ENABLED:
        return project_groups_loop(v, g_start, g_stop, g_sign, g_lo, g_hi, out)
    return project_groups_numpy(v, g_start, g_stop, g_sign, g_lo, g_hi, out)


@njit
def residuals(p, w, a, b, loss, mate, owner, m, g_start, g_stop, g_sign, g_lo, g_hi, scratch):
    """Return ``(coupling, stationarity)`` of a global state; fails -> nan."""
    n = p.shape[0]
    coup = 0.0
    for c in range(n):
        if c < mate[c]:
            r = p[c] + p[mate[c]] - loss[c]
            coup += r * r
    for c in range(n):
        scratch[c] = p[c] - (2.0 * a[c] * p[c] + b[c] + w[c])
    fails = 0
    for g in range(g_start.shape[0]):
        fails += project_group(scratch, g_start[g], g_stop[g], g_sign[g], g_lo[g], g_hi[g],
                               scratch)
    if fails > 0:
        return np.sqrt(coup), np.nan
    acc = np.zeros(m)
    for c in range(n):
        r = p[c] - scratch[c]
        acc[owner[c]] += r * r
    stat = 0.0
    for i in range(m):
        stat += np.sqrt(acc[i])
    return np.sqrt(coup), stat


@njit
def ts_dist(p, w, p_star, w_star, wt_p, wt_w):
    s = 0.0
    for c in range(p.shape[0]):
        dp = p[c] - p_star[c]
        dw = w[c] - w_star[c]
        s += wt_p[c] * dp * dp + wt_w[c] * dw * dw
    return np.sqrt(s)


@njit
def _flush(h, k, q_origin, q_deliver, q_p, q_w, q_head, q_count, cap, link_dst,
           buf_p, buf_w, buf_origin):
    T = link_dst.shape[1]
    while q_count[h] > 0:
        slot = q_head[h]
        if q_deliver[h, slot] > k:
            break
        for t in range(T):
            buf_p[link_dst[h, t]] = q_p[h, slot, t]
            buf_w[link_dst[h, t]] = q_w[h, slot, t]
        buf_origin[h] = q_origin[h, slot]
        q_head[h] = (slot + 1) % cap
        q_count[h] -= 1


@njit
def asyn_run_chunk(
        k0, d, n_ticks,
        offset, deg, in_link, out_link, link_src, link_dst,
        a, b, loss, mate, owner, beta_c, alpha_i, theta_i,
        g_start, g_stop, g_sign, g_lo, g_hi, T,
        p, w, buf_p, buf_w, buf_origin,
        q_origin, q_deliver, q_p, q_w, q_head, q_count, last_deliver,
        act, lat, dt,
        check_every, tol, stop_on_tol,
        have_star, p_star, w_star, wt_p, wt_w,
        rec_k, rec_dist, rec_coup, rec_stat, rec_msgs, rec_time, rec_n,
        totals, log_agent, log_stale, scratch):
    """Advance the asynchronous simulation by up to ``n_ticks`` activations.

    Every tick in the chunk has its activated agent in ``act``, its
    per-neighbour message latencies (ticks) in ``lat`` and its simulated-time
    increment in ``dt``, all drawn beforehand. ``totals`` is
    ``[messages, sim_time]``; it is updated in place like the simulation state.

    Returns ``(status, ticks_done)``.
    """
    m = deg.shape[0]
    cap = q_p.shape[1]
    rec_cap = rec_k.shape[0]
    maxdeg = in_link.shape[1]
    pbar = np.empty(p.shape[0])
    wbar = np.empty(p.shape[0])
    v = np.empty(p.shape[0])
    for step in range(n_ticks):
        k = k0 + step
        i = act[step]
        lo_c = offset[i]
        hi_c = offset[i + 1]
        di = deg[i]

        # receive, then read the most recent record of every trader
        worst = 0
        for s in range(di):
            h = in_link[i, s]
            _flush(h, k, q_origin, q_deliver, q_p, q_w, q_head, q_count, cap, link_dst,
                   buf_p, buf_w, buf_origin)
            if q_count[h] > 0:
                tau = k - q_origin[h, q_head[h]] + 1
                if tau > worst:
                    worst = tau
        log_agent[step] = i
        log_stale[step] = worst
        if worst > d:
            return STALE_READ, step

        ai = alpha_i[i]
        th = theta_i[i]
        for c in range(lo_c, hi_c):
            wbar[c] = (0.5 * beta_c[c] * (p[c] + buf_p[c] - loss[c])
                       + 0.5 * (w[c] + buf_w[c]))
            v[c] = p[c] - ai * (2.0 * a[c] * p[c] + b[c] + wbar[c])
        fails = 0
        for t in range(T):
            g = i * T + t
            fails += project_group(v, g_start[g], g_stop[g], g_sign[g], g_lo[g], g_hi[g], pbar)
        if fails > 0:
            return PROJECTION_FAILED, step
        bad = False
        for c in range(lo_c, hi_c):
            dp = pbar[c] - p[c]
            w[c] = w[c] + th * (wbar[c] - w[c]) + th * beta_c[c] * dp
            p[c] = p[c] + th * dp
            if not (np.isfinite(p[c]) and np.isfinite(w[c])):
                bad = True

        # send the new trades and prices to every trader
        for s in range(di):
            h = out_link[i, s]
            _flush(h, k, q_origin, q_deliver, q_p, q_w, q_head, q_count, cap, link_dst,
                   buf_p, buf_w, buf_origin)
            deliver = k + 1 + lat[step, s]
            if deliver < last_deliver[h]:
                deliver = last_deliver[h]
            last_deliver[h] = deliver
            slot = (q_head[h] + q_count[h]) % cap
            for t in range(T):
                q_p[h, slot, t] = p[link_src[h, t]]
                q_w[h, slot, t] = w[link_src[h, t]]
            q_origin[h, slot] = k + 1
            q_deliver[h, slot] = deliver
            q_count[h] += 1
        totals[0] += di
        totals[1] += dt[step]
        if bad:
            return DIVERGED, step + 1

        kk = k + 1
        if kk % check_every == 0:
            coup, stat = residuals(p, w, a, b, loss, mate, owner, m, g_start, g_stop, g_sign,
                                   g_lo, g_hi, scratch)
            r = rec_n[0]
            if r < rec_cap:
                rec_k[r] = kk
                rec_coup[r] = coup
                rec_stat[r] = stat
                rec_msgs[r] = totals[0]
                rec_time[r] = totals[1]
                if have_star:
                    rec_dist[r] = ts_dist(p, w, p_star, w_star, wt_p, wt_w)
                else:
                    rec_dist[r] = np.nan
                rec_n[0] = r + 1
            if stop_on_tol and max(coup, stat) <= tol:
                return CONVERGED, step + 1
    return RUNNING, n_ticks
