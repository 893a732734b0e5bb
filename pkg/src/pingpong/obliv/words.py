"""Branch-free selection and comparison over 64-bit words.

Values are 1-D ``uint64`` arrays.  Selection works by arithmetic masking
(``mask = 0 - flag``), so the executed instruction sequence depends only on
operand length, never on the flag or the data.  These are the leaf primitives
every higher-level oblivious routine is built from.
"""

from __future__ import annotations

import numpy as np

from .trace import CHOOSE, EQUAL, Recorder

WORD = np.uint64
_ONE = np.uint64(1)


def flag_mask(flag) -> np.uint64:
    """All-ones word when ``flag`` is 1, all-zeros when 0."""
    return np.negative(np.int64(flag)).astype(np.uint64)


def flag_mask_arr(flags: np.ndarray) -> np.ndarray:
    """Vector version of :func:`flag_mask` for a 0/1 uint64 array."""
    return np.negative(flags.astype(np.int64)).astype(np.uint64)


def nonzero_word(x) -> np.uint64:
    """1 if the word ``x`` is nonzero else 0, without branching on ``x``."""
    v = np.asarray([x], dtype=np.uint64)
    return ((v | np.negative(v.view(np.int64)).view(np.uint64)) >> np.uint64(63))[0]


def obl_choose(flag, a: np.ndarray, b: np.ndarray, rec: Recorder | None = None) -> np.ndarray:
    """Return ``a`` when flag=1, ``b`` when flag=0, via masking.

    ``a`` and ``b`` must have equal length; a mismatch is a caller bug.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"obl_choose operand shape mismatch: {a.shape} vs {b.shape}")
    mask = flag_mask(flag)
    out = (a & mask) | (b & ~mask)
    if rec is not None:
        rec.emit(CHOOSE, a.size)
    return out


def obl_equal(a: np.ndarray, b: np.ndarray, rec: Recorder | None = None) -> np.uint64:
    """1 iff the word sequences are identical; constant access pattern."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    if a.shape != b.shape:
        raise ValueError(f"obl_equal operand shape mismatch: {a.shape} vs {b.shape}")
    acc = np.bitwise_or.reduce(a ^ b) if a.size else np.uint64(0)
    if rec is not None:
        rec.emit(EQUAL, a.size)
    return _ONE ^ nonzero_word(acc)


def obl_choose_rows(flags: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise oblivious select: ``out[i] = a[i] if flags[i] else b[i]``.

    ``flags`` is 0/1 uint64 of length n; ``a``/``b`` are (n, w) arrays.
    """
    mask = flag_mask_arr(flags)[:, None]
    return (a & mask) | (b & ~mask)
