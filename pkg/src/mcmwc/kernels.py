"""Hot inner loops of the simulators.

Every kernel exists twice: a numba-compiled loop (``*_nb``) and a numpy
implementation (``*_np``) that is vectorized where the recursion allows it.
The public name is bound to one of them according to ``MCMWC_NUMBA``; the
benchmark and the backend tests call both variants directly.

Conventions shared by the kernels:

* slots are absolute 1-based integers; ``t0`` is the slot of element 0 of a
  chunk and arrival histories are indexed by absolute slot (element 0 unused);
* ``hist`` is an int64 delay histogram whose last bin absorbs overflow;
* ``stats`` is an int64 vector ``[sum, count, max]`` updated in place.
"""
import numpy as np

from ._accel import BACKEND, njit, pick

__all__ = [
    "BACKEND",
    "lindley",
    "accumulate_delays",
    "accumulate_intervals",
    "feedback_window",
    "fifo_delays",
    "rlnc_session",
    "gf_combine",
    "reduce_insert",
    "back_substitute",
]


# ---------------------------------------------------------------------------
# Virtual decoder queue: Q' = max(Q + a - c, 0)


def _lindley_loop(a, c, q0):
    n = a.shape[0]
    out = np.empty(n, dtype=np.int64)
    q = q0
    for t in range(n):
        q = q + a[t] - c[t]
        if q < 0:
            q = 0
        out[t] = q
    return out


def lindley_np(a, c, q0):
    drift = np.cumsum(np.asarray(a, dtype=np.int64) - np.asarray(c, dtype=np.int64))
    if drift.size == 0:
        return drift
    floor = np.maximum(np.int64(q0), -np.minimum.accumulate(drift))
    return drift + floor


lindley_nb = njit(_lindley_loop)
lindley = pick(lindley_nb, lindley_np)


# ---------------------------------------------------------------------------
# Delay of every packet: time from its arrival slot to the next slot with Q == 0


def _accumulate_delays_loop(arr, q, t0, t_last, warm, hist, stats):
    top = hist.shape[0] - 1
    for k in range(q.shape[0]):
        if q[k] != 0:
            continue
        t = t0 + k
        for s in range(t_last + 1, t + 1):
            w = arr[s]
            if w == 0 or s < warm:
                continue
            d = t - s
            hist[d if d < top else top] += w
            stats[0] += d * w
            stats[1] += w
            if d > stats[2]:
                stats[2] = d
        t_last = t
    return t_last


def accumulate_delays_np(arr, q, t0, t_last, warm, hist, stats):
    zeros = np.flatnonzero(np.asarray(q) == 0)
    if zeros.size == 0:
        return t_last
    moments = zeros.astype(np.int64) + t0
    slots = np.arange(t_last + 1, moments[-1] + 1, dtype=np.int64)
    w = np.asarray(arr[t_last + 1 : moments[-1] + 1], dtype=np.int64)
    keep = (w > 0) & (slots >= warm)
    if keep.any():
        slots, w = slots[keep], w[keep]
        d = moments[np.searchsorted(moments, slots)] - slots
        top = hist.shape[0] - 1
        hist += np.bincount(np.minimum(d, top), weights=w, minlength=top + 1).astype(np.int64)
        stats[0] += int((d * w).sum())
        stats[1] += int(w.sum())
        stats[2] = max(int(stats[2]), int(d.max()))
    return int(moments[-1])


accumulate_delays_nb = njit(_accumulate_delays_loop)
accumulate_delays = pick(accumulate_delays_nb, accumulate_delays_np)


def _accumulate_intervals_loop(arr_tot, q, t0, t_prev, warm, ihist, istats):
    # istats: [sum I, count, max I, sum K]
    top = ihist.shape[0] - 1
    k_acc = 0
    for s in range(t_prev + 1, t0):
        k_acc += arr_tot[s]
    for k in range(q.shape[0]):
        t = t0 + k
        k_acc += arr_tot[t]
        if q[k] != 0:
            continue
        length = t - t_prev
        if t_prev >= warm:
            ihist[length if length < top else top] += 1
            istats[0] += length
            istats[1] += 1
            if length > istats[2]:
                istats[2] = length
            istats[3] += k_acc
        k_acc = 0
        t_prev = t
    return t_prev


def accumulate_intervals_np(arr_tot, q, t0, t_prev, warm, ihist, istats):
    zeros = np.flatnonzero(np.asarray(q) == 0)
    if zeros.size == 0:
        return t_prev
    moments = zeros.astype(np.int64) + t0
    prev = np.concatenate(([t_prev], moments[:-1]))
    lengths = moments - prev
    cum = np.cumsum(np.asarray(arr_tot[t_prev + 1 : moments[-1] + 1], dtype=np.int64))
    cum = np.concatenate(([0], cum))
    ks = cum[moments - t_prev] - cum[prev - t_prev]
    keep = prev >= warm
    if keep.any():
        lengths, ks = lengths[keep], ks[keep]
        top = ihist.shape[0] - 1
        ihist += np.bincount(np.minimum(lengths, top), minlength=top + 1).astype(np.int64)
        istats[0] += int(lengths.sum())
        istats[1] += int(lengths.size)
        istats[2] = max(int(istats[2]), int(lengths.max()))
        istats[3] += int(ks.sum())
    return int(moments[-1])


accumulate_intervals_nb = njit(_accumulate_intervals_loop)
accumulate_intervals = pick(accumulate_intervals_nb, accumulate_intervals_np)


# ---------------------------------------------------------------------------
# Anonymous-feedback window: Z advances by min(r_max, A - Z) unless a NAK


def _feedback_window_loop(a_cum, min_s, z, prev_min_s, r_max, z_out, carry):
    # carry: [nak slots, safety violations, max window]
    for k in range(a_cum.shape[0]):
        z_out[k] = z
        if z > prev_min_s:
            carry[1] += 1
        win = a_cum[k] - z
        if win > carry[2]:
            carry[2] = win
        r = win if win < r_max else r_max
        if r > 0:
            if min_s[k] >= z + r:
                z += r
            else:
                carry[0] += 1
        prev_min_s = min_s[k]
    return z, prev_min_s


def feedback_window_np(a_cum, min_s, z, prev_min_s, r_max, z_out, carry):
    # state-dependent recursion; plain loop over python ints
    a_list = np.asarray(a_cum).tolist()
    s_list = np.asarray(min_s).tolist()
    zs = [0] * len(a_list)
    nak = viol = 0
    wmax = int(carry[2])
    z = int(z)
    prev = int(prev_min_s)
    for k, (a, s) in enumerate(zip(a_list, s_list)):
        zs[k] = z
        if z > prev:
            viol += 1
        win = a - z
        if win > wmax:
            wmax = win
        r = min(win, r_max)
        if r > 0:
            if s >= z + r:
                z += r
            else:
                nak += 1
        prev = s
    z_out[:] = zs
    carry[0] += nak
    carry[1] += viol
    carry[2] = wmax
    return z, prev


feedback_window_nb = njit(_feedback_window_loop)
feedback_window = pick(feedback_window_nb, feedback_window_np)


# ---------------------------------------------------------------------------
# FIFO with unit service per slot (lower-bounding construction)


def _fifo_delays_loop(a, t0, q, warm, hist, stats):
    top = hist.shape[0] - 1
    for k in range(a.shape[0]):
        n = a[k]
        if n > 0 and t0 + k >= warm:
            for p in range(n):
                d = q + p
                hist[d if d < top else top] += 1
                stats[0] += d
                stats[1] += 1
                if d > stats[2]:
                    stats[2] = d
        q = q + n - 1
        if q < 0:
            q = 0
    return q


def fifo_delays_np(a, t0, q, warm, hist, stats):
    a = np.asarray(a, dtype=np.int64)
    if a.size == 0:
        return q
    qs = lindley_np(a, np.ones_like(a), q)
    before = np.concatenate(([q], qs[:-1]))
    slots = np.arange(t0, t0 + a.size)
    a_kept = np.where(slots >= warm, a, 0)
    total = int(a_kept.sum())
    if total:
        starts = np.cumsum(a_kept) - a_kept
        pos = np.arange(total) - np.repeat(starts, a_kept)
        d = np.repeat(before, a_kept) + pos
        top = hist.shape[0] - 1
        hist += np.bincount(np.minimum(d, top), minlength=top + 1).astype(np.int64)
        stats[0] += int(d.sum())
        stats[1] += total
        stats[2] = max(int(stats[2]), int(d.max()))
    return int(qs[-1])


fifo_delays_nb = njit(_fifo_delays_loop)
fifo_delays = pick(fifo_delays_nb, fifo_delays_np)


# ---------------------------------------------------------------------------
# Block RLNC at the erasure level: a block of B packets is delivered to a
# receiver after B successful slots once the block is complete at the source.


def _rlnc_session_loop(a_cum, pslot, c, t0, block, warm, state, progress, delivered, hist, stats):
    # state: [block index, transmitting, receivers done]
    top = hist.shape[0] - 1
    n_rx = c.shape[1]
    for k in range(c.shape[0]):
        t = t0 + k
        if state[1] == 0 and a_cum[t] >= (state[0] + 1) * block:
            state[1] = 1
            state[2] = 0
            for r in range(n_rx):
                progress[r] = 0
        if state[1] == 0:
            continue
        first = state[0] * block
        for r in range(n_rx):
            if progress[r] >= block:
                continue
            progress[r] += c[k, r]
            if progress[r] >= block:
                state[2] += 1
                for p in range(first, first + block):
                    s = pslot[p]
                    if s < warm:
                        continue
                    delivered[r] += 1
                    d = t - s
                    hist[d if d < top else top] += 1
                    stats[0] += d
                    stats[1] += 1
                    if d > stats[2]:
                        stats[2] = d
        if state[2] == n_rx:
            state[0] += 1
            state[1] = 0


rlnc_session_nb = njit(_rlnc_session_loop)
# no vectorized form exists for the block state machine; the numpy backend runs the loop uncompiled
rlnc_session_np = _rlnc_session_loop
rlnc_session = pick(rlnc_session_nb, rlnc_session_np)


# ---------------------------------------------------------------------------
# GF(2^8) elimination kernels; ``mul`` is the full 256x256 product table.


def _gf_combine_loop(coeffs, payloads, mul):
    m, w = coeffs.shape
    length = payloads.shape[1]
    out = np.zeros((m, length), dtype=np.uint8)
    for j in range(m):
        for idx in range(w):
            f = coeffs[j, idx]
            if f == 0:
                continue
            for s in range(length):
                out[j, s] ^= mul[f, payloads[idx, s]]
    return out


def gf_combine_np(coeffs, payloads, mul):
    if coeffs.shape[1] == 0:
        return np.zeros((coeffs.shape[0], payloads.shape[1]), dtype=np.uint8)
    prods = mul[coeffs[:, :, None], payloads[None, :, :]]
    return np.bitwise_xor.reduce(prods, axis=1)


gf_combine_nb = njit(_gf_combine_loop)
gf_combine = pick(gf_combine_nb, gf_combine_np)


def _reduce_insert_loop(rows, pays, pivot, row, pay, n, mul, inv):
    """Eliminate ``row`` against the basis; store it if innovative.

    Returns ``(leading position or -1, symbol ops)``. Stored rows are
    normalized so their leading coefficient is 1.
    """
    length = pay.shape[0]
    ops = 0
    for k in range(n):
        f = row[k]
        if f == 0:
            continue
        if pivot[k]:
            base = rows[k]
            for x in range(k, n):
                row[x] ^= mul[f, base[x]]
            src = pays[k]
            for s in range(length):
                pay[s] ^= mul[f, src[s]]
            ops += length
            continue
        if f != 1:
            g = inv[f]
            for x in range(k, n):
                row[x] = mul[g, row[x]]
            for s in range(length):
                pay[s] = mul[g, pay[s]]
            ops += length
        for x in range(n):
            rows[k, x] = row[x]
        for s in range(length):
            pays[k, s] = pay[s]
        pivot[k] = True
        return k, ops
    return -1, ops


def reduce_insert_np(rows, pays, pivot, row, pay, n, mul, inv):
    length = pay.shape[0]
    ops = 0
    k = 0
    while k < n:
        nz = np.flatnonzero(row[k:n])
        if nz.size == 0:
            break
        k += int(nz[0])
        f = int(row[k])
        if pivot[k]:
            row[k:n] ^= mul[f][rows[k, k:n]]
            pay ^= mul[f][pays[k]]
            ops += length
            continue
        if f != 1:
            g = int(inv[f])
            row[k:n] = mul[g][row[k:n]]
            pay[:] = mul[g][pay]
            ops += length
        rows[k, :n] = row[:n]
        pays[k] = pay
        pivot[k] = True
        return k, ops
    return -1, ops


reduce_insert_nb = njit(_reduce_insert_loop)
reduce_insert = pick(reduce_insert_nb, reduce_insert_np)


def _back_substitute_loop(rows, pays, n, mul):
    """Solve the unit upper-triangular system in place; returns symbol ops."""
    length = pays.shape[1]
    ops = 0
    for k in range(n - 1, -1, -1):
        for x in range(k + 1, n):
            f = rows[k, x]
            if f == 0:
                continue
            for s in range(length):
                pays[k, s] ^= mul[f, pays[x, s]]
            ops += length
        # extracting the pivot row itself is one accumulate into the output
        ops += length
    return ops


def back_substitute_np(rows, pays, n, mul):
    length = pays.shape[1]
    ops = 0
    for k in range(n - 1, -1, -1):
        idx = np.flatnonzero(rows[k, k + 1 : n]) + k + 1
        if idx.size:
            prods = mul[rows[k, idx][:, None], pays[idx]]
            pays[k] ^= np.bitwise_xor.reduce(prods, axis=0)
            ops += length * idx.size
        ops += length
    return ops


back_substitute_nb = njit(_back_substitute_loop)
back_substitute = pick(back_substitute_nb, back_substitute_np)
