"""Numba kernels for the hot oblivious loops.

Each kernel mirrors the access schedule of the instrumented numpy
implementation exactly (same compare-and-swap network, same routing stages,
same scan order) and performs data movement through arithmetic masking, never
through data-dependent indexing.  Kernels return the number of elementary
oblivious operations they executed so callers can account for work honestly.

This module imports only when numba is present; callers go through
:mod:`pingpong.obliv.backend` to decide.
"""

from __future__ import annotations

import numpy as np
from numba import njit

U64 = np.uint64

_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_ONE = U64(1)
_ZERO = U64(0)
_TOP = U64(63)


@njit(cache=True, nogil=True, inline="always")
def mix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, nogil=True, inline="always")
def _nonzero(x):
    # 1 if x != 0 else 0
    return (x | (_ZERO - x)) >> _TOP


@njit(cache=True, nogil=True)
def bitonic_sort(work, key_cols):
    """In-place bitonic sort of (m, w) uint64 rows, m a power of two.

    Rows are ordered ascending by the lexicographic key over ``key_cols``.
    Returns the number of compare-and-swap operations (fixed for given m).
    """
    m, w = work.shape
    nk = key_cols.shape[0]
    ops = 0
    size = 2
    while size <= m:
        j = size >> 1
        while j >= 1:
            for i in range(m):
                p = i ^ j
                if p > i:
                    asc = (i & size) == 0
                    gt = _ZERO
                    lt = _ZERO
                    eq = _ONE
                    for t in range(nk):
                        c = key_cols[t]
                        av = work[i, c]
                        bv = work[p, c]
                        gt |= eq & U64(av > bv)
                        lt |= eq & U64(av < bv)
                        eq &= U64(av == bv)
                    sw = gt if asc else lt
                    mask = _ZERO - sw
                    for c in range(w):
                        x = work[i, c]
                        y = work[p, c]
                        work[i, c] = (y & mask) | (x & ~mask)
                        work[p, c] = (x & mask) | (y & ~mask)
                    ops += 1
            j >>= 1
        size <<= 1
    return ops


@njit(cache=True, nogil=True)
def compact_route(data, keep, delta):
    """Route kept rows to a packed prefix through log2(m) shift stages.

    ``keep`` is 0/1 per row, ``delta`` the remaining leftward displacement of
    each kept row.  All three arrays are updated in place; non-kept rows must
    already be zeroed.  Returns elementary routing-op count.
    """
    m, w = data.shape
    nd = np.empty_like(data)
    nk = np.empty_like(keep)
    ndl = np.empty_like(delta)
    ops = 0
    s = U64(0)
    d = 1
    while d < m:
        dd = U64(d)
        for x in range(m):
            if x + d < m:
                f_in = keep[x + d] & ((delta[x + d] >> s) & _ONE)
            else:
                f_in = _ZERO
            f_out = keep[x] & ((delta[x] >> s) & _ONE)
            m_in = _ZERO - f_in
            m_out = _ZERO - f_out
            for c in range(w):
                stay = data[x, c] & ~m_out
                src = data[x + d, c] if x + d < m else _ZERO
                nd[x, c] = (src & m_in) | (stay & ~m_in)
            src_k = keep[x + d] if x + d < m else _ZERO
            nk[x] = (src_k & m_in) | ((keep[x] & (_ONE ^ f_out)) & ~m_in)
            src_dl = (delta[x + d] - dd) if x + d < m else _ZERO
            ndl[x] = (src_dl & m_in) | ((delta[x] & ~m_out) & ~m_in)
            ops += 1
        data[:, :] = nd
        keep[:] = nk
        delta[:] = ndl
        d <<= 1
        s += _ONE
    return ops


@njit(cache=True, nogil=True)
def mark_bucket_runs(group, real, z, keep, over):
    """Scan group-sorted rows marking the first z of each group as kept.

    Real rows past position z of their group are flagged as overflow.
    Returns op count (= row count).
    """
    n = group.shape[0]
    run = _ZERO
    prev = ~_ZERO
    for i in range(n):
        b = group[i]
        same = _ONE ^ _nonzero(b ^ prev)
        run = (run + _ONE) * same
        within = U64(run < z)
        keep[i] = within
        over[i] = real[i] & (_ONE ^ within)
        prev = b
    return n


@njit(cache=True, nogil=True)
def oht_lookup_batch(
    tier1, tier2, nb1, nb2, z, seed1, seed2, keys, dummies, rand1, rand2, vals, found
):
    """Scan both candidate buckets for each query, folding hits obliviously.

    Tables are (buckets*z, 2+vw) arrays [key, flags, value...]; flags bit0
    marks a real occupant.  ``dummies`` must already fold in senior found
    flags; dummy queries scan buckets chosen by the supplied random words.
    ``vals``/``found`` are updated in place.  Returns slot-scan count.
    """
    n = keys.shape[0]
    vw = tier1.shape[1] - 2
    ops = 0
    for i in range(n):
        dm = dummies[i] & _ONE
        mdm = _ZERO - dm
        kq = keys[i]
        ke1 = (rand1[i] & mdm) | (kq & ~mdm)
        ke2 = (rand2[i] & mdm) | (kq & ~mdm)
        b1 = mix64(ke1 ^ seed1) % nb1
        b2 = mix64(ke2 ^ seed2) % nb2
        f = _ZERO
        base = b1 * z
        for s in range(z):
            row = base + U64(s)
            hit = (_ONE ^ _nonzero(tier1[row, 0] ^ kq)) & (tier1[row, 1] & _ONE)
            hit &= (_ONE ^ dm) & (_ONE ^ f)
            mh = _ZERO - hit
            for c in range(vw):
                vals[i, c] = (tier1[row, 2 + c] & mh) | (vals[i, c] & ~mh)
            f |= hit
            ops += 1
        base = b2 * z
        for s in range(z):
            row = base + U64(s)
            hit = (_ONE ^ _nonzero(tier2[row, 0] ^ kq)) & (tier2[row, 1] & _ONE)
            hit &= (_ONE ^ dm) & (_ONE ^ f)
            mh = _ZERO - hit
            for c in range(vw):
                vals[i, c] = (tier2[row, 2 + c] & mh) | (vals[i, c] & ~mh)
            f |= hit
            ops += 1
        found[i] |= f
    return ops


@njit(cache=True, nogil=True)
def aggregate_scan(arr, lab0, nlab, vec0, nvec, dummy_col, dedup, rnd):
    """Forward fold of label-grouped rows: OR vectors into the group tail.

    When ``dedup`` is nonzero, every row whose successor repeats its label is
    re-labelled from ``rnd`` and flagged dummy (entry-node pass).  Returns op
    count (= n - 1 scan steps).
    """
    n = arr.shape[0]
    for i in range(1, n):
        acc = _ZERO
        for c in range(nlab):
            acc |= arr[i, lab0 + c] ^ arr[i - 1, lab0 + c]
        is_rep = _ONE ^ _nonzero(acc)
        m = _ZERO - is_rep
        for c in range(nvec):
            agg = arr[i - 1, vec0 + c] | arr[i, vec0 + c]
            arr[i, vec0 + c] = (agg & m) | (arr[i, vec0 + c] & ~m)
        if dedup:
            for c in range(nlab):
                arr[i - 1, lab0 + c] = (rnd[i, c] & m) | (arr[i - 1, lab0 + c] & ~m)
            arr[i - 1, dummy_col] |= is_rep
    return n - 1 if n > 0 else 0
