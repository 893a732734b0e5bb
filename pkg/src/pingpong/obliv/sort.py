"""Oblivious sort: bitonic compare-and-swap network over record rows.

The compare-and-swap index sequence is a function of the padded length only.
Input is padded internally to the next power of two with sentinel rows that
order after every real row (a dedicated flag column, so records may carry
arbitrary payload words), then stripped.  O(n log^2 n) compare-swaps.

Bitonic sorting is not stable; callers needing a total order (e.g. tie-break
by arrival) append an index column to the key.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .trace import COMPARE_SWAP, Recorder
from .words import flag_mask_arr


def next_pow2(n: int) -> int:
    m = 1
    while m < n:
        m <<= 1
    return m


def _lex_cmp(a: np.ndarray, b: np.ndarray, key_cols) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise lexicographic (gt, lt) over the key columns."""
    gt = np.zeros(a.shape[0], dtype=bool)
    lt = np.zeros(a.shape[0], dtype=bool)
    eq = np.ones(a.shape[0], dtype=bool)
    for c in key_cols:
        av = a[:, c]
        bv = b[:, c]
        gt |= eq & (av > bv)
        lt |= eq & (av < bv)
        eq &= av == bv
    return gt, lt


def _sort_stages_numpy(work: np.ndarray, key_cols, rec: Recorder | None) -> int:
    m = work.shape[0]
    idx = np.arange(m)
    ops = 0
    size = 2
    while size <= m:
        j = size >> 1
        while j >= 1:
            partner = idx ^ j
            sel = partner > idx
            i_arr = idx[sel]
            p_arr = partner[sel]
            asc = (i_arr & size) == 0
            a = work[i_arr]
            b = work[p_arr]
            gt, lt = _lex_cmp(a, b, key_cols)
            sw = np.where(asc, gt, lt).astype(np.uint64)
            mask = flag_mask_arr(sw)[:, None]
            work[i_arr] = (b & mask) | (a & ~mask)
            work[p_arr] = (a & mask) | (b & ~mask)
            if rec is not None:
                rec.emit(COMPARE_SWAP, i_arr, p_arr)
            ops += i_arr.size
            j >>= 1
        size <<= 1
    return ops


def osort(
    records: np.ndarray,
    key_cols,
    rec: Recorder | None = None,
    pad_row: np.ndarray | None = None,
) -> np.ndarray:
    """Return the rows of ``records`` sorted ascending by ``key_cols``.

    ``records`` is an (n, w) uint64 array; the input is not modified.
    Padding to the next power of two uses a sentinel flag column unless the
    caller supplies ``pad_row``, a row template guaranteed to sort after
    every real row under ``key_cols``.
    """
    records = np.asarray(records, dtype=np.uint64)
    n, w = records.shape
    if n == 0:
        return records.copy()
    m = next_pow2(n)
    if pad_row is not None:
        work = np.empty((m, w), dtype=np.uint64)
        work[:n] = records
        work[n:] = np.asarray(pad_row, dtype=np.uint64)
        cols = [int(c) for c in key_cols]
        strip = slice(None)
    else:
        work = np.zeros((m, w + 1), dtype=np.uint64)
        work[:n, 1:] = records
        work[n:, 0] = 1  # sentinel flag: padding orders after every real row
        cols = [0] + [int(c) + 1 for c in key_cols]
        strip = slice(1, None)
    instrumented = rec is not None and rec.record_events
    if not instrumented and backend.use_numba():
        from . import kernels

        ops = kernels.bitonic_sort(work, np.asarray(cols, dtype=np.int64))
    else:
        ops = _sort_stages_numpy(work, cols, rec)
    if rec is not None:
        rec.count("compare_swaps", ops)
    return work[:n, strip]
