"""Order-preserving oblivious compaction.

Kept rows move to a packed prefix (in their original relative order); the
remainder of the output is zeroed filler.  Routing runs in log2(m) stages of
power-of-two leftward shifts: a kept row at position i with destination d(i)
(its kept-prefix rank) has displacement i - d(i), non-decreasing across kept
rows, and clears one displacement bit per stage.  Every stage touches the
same position pairs regardless of the tags, so the route pattern depends only
on the padded length.  O(n log n) elementary moves.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .sort import next_pow2
from .trace import CHOOSE, SCAN_READ, Recorder
from .words import flag_mask_arr


def _route_stages_numpy(
    data: np.ndarray, keep: np.ndarray, delta: np.ndarray, rec: Recorder | None
) -> int:
    m = data.shape[0]
    ops = 0
    d = 1
    s = np.uint64(0)
    one = np.uint64(1)
    while d < m:
        moving = keep & ((delta >> s) & one)
        mov_in = np.zeros(m, dtype=np.uint64)
        mov_in[: m - d] = moving[d:]
        m_in = flag_mask_arr(mov_in)
        m_out = flag_mask_arr(moving)
        shifted = np.zeros_like(data)
        shifted[: m - d] = data[d:]
        stay = data & ~m_out[:, None]
        data[:, :] = (shifted & m_in[:, None]) | (stay & ~m_in[:, None])
        d_shift = np.zeros_like(delta)
        d_shift[: m - d] = delta[d:] - np.uint64(d)
        delta[:] = (d_shift & m_in) | ((delta & ~m_out) & ~m_in)
        keep[:] = mov_in | (keep & (one ^ moving))
        if rec is not None:
            rec.emit(CHOOSE, np.arange(m - d), np.arange(d, m))
        ops += m - d
        d <<= 1
        s += one
    return ops


def ocompact(records: np.ndarray, keep_tags: np.ndarray, rec: Recorder | None = None) -> np.ndarray:
    """Compact rows tagged 1 into an order-preserving prefix; zero the rest.

    Returns a new (n, w) array; ``records`` and ``keep_tags`` are unchanged.
    """
    records = np.asarray(records, dtype=np.uint64)
    n, w = records.shape
    tags = np.asarray(keep_tags, dtype=np.uint64) & np.uint64(1)
    if tags.shape != (n,):
        raise ValueError(f"keep_tags length {tags.shape} does not match {n} rows")
    if n == 0:
        return records.copy()
    m = next_pow2(n)
    data = np.zeros((m, w), dtype=np.uint64)
    data[:n] = records
    keep = np.zeros(m, dtype=np.uint64)
    keep[:n] = tags
    # Zero non-kept rows up front: filler never carries payload.
    data &= flag_mask_arr(keep)[:, None]
    dest = np.cumsum(keep, dtype=np.uint64) - keep  # exclusive prefix count
    delta = (np.arange(m, dtype=np.uint64) - dest) & flag_mask_arr(keep)
    instrumented = rec is not None and rec.record_events
    if rec is not None:
        rec.emit(SCAN_READ, np.arange(m))
    if not instrumented and backend.use_numba():
        from . import kernels

        ops = kernels.compact_route(data, keep, delta)
    else:
        ops = _route_stages_numpy(data, keep, delta, rec)
    if rec is not None:
        rec.count("route_moves", ops)
        rec.count("scan_steps", m)
    return data[:n]
