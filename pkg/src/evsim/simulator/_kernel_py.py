"""Pure numpy fallback for the compiled event-generation kernel.

Performs the same floating-point operations in the same order as the
compiled kernel; pixels are advanced in lockstep, one threshold step per
pass, until no pixel is more than one threshold away from its level.
"""
import numpy as np


def interval_events(L0, L1, t0, t1, C, ref, last, row0, row1):
    W = L0.shape[1]
    l1_all = L1[row0:row1].ravel()
    lev_all = ref[row0:row1].ravel()
    idx = np.flatnonzero(np.abs(l1_all - lev_all) >= C)
    if idx.size == 0:
        empty = np.empty(0)
        return empty, np.empty(0, np.int32), np.empty(0, np.int32), np.empty(0, np.int8)

    l0 = L0[row0:row1].ravel()[idx]
    l1 = l1_all[idx]
    lev = lev_all[idx].copy()
    slope = l1 - l0
    up = l1 > lev
    pc = np.where(up, C, -C)
    pol = np.where(up, 1, -1).astype(np.int8)
    dt = t1 - t0
    t_lo = np.nextafter(t0, np.inf)

    ts, ids = [], []
    active = np.arange(idx.size)
    while active.size:
        lev[active] = lev[active] + pc[active]
        frac = (lev[active] - l0[active]) / slope[active]
        te = t0 + frac * dt
        te = np.minimum(np.maximum(te, t_lo), t1)
        ts.append(te)
        ids.append(active)
        active = active[np.abs(l1[active] - lev[active]) >= C]

    ts = np.concatenate(ts)
    ids = np.concatenate(ids)
    # pixel-major, then emission order, like the compiled loop
    order = np.argsort(ids, kind="stable")
    ts = ts[order]
    ids = ids[order]

    flat = idx + row0 * W
    rows = ref[row0:row1].reshape(-1)
    rows[idx] = lev
    # the last emitted event of each pixel is the final entry of its run
    tail = np.r_[ids[1:] != ids[:-1], True]
    last[row0:row1].reshape(-1)[idx] = ts[tail]

    pix = flat[ids]
    return ts, (pix % W).astype(np.int32), (pix // W).astype(np.int32), pol[ids]
