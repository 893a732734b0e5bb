"""Two-layer horizontal scaling: padded sub-batch assignment to backends.

Entry nodes hash each packet's key (label or token) to a backend bin, pad
every bin to a precomputed high-probability load bound, and ship fixed-size
sub-batches so the wire reveals nothing about the bin histogram.  The bound
is the exact binomial tail: the smallest per-bin capacity such that the
probability any of B bins receives more than that many of n uniformly
assigned distinct keys is at most 2^-lambda.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .obliv import ocompact, osort
from .obliv.scans import mark_run_positions
from .obliv.trace import Recorder


class RoundOverflowError(Exception):
    """A backend bin exceeded its padded bound (probability <= 2^-lambda).

    The round is aborted rather than silently dropping packets.
    """


@lru_cache(maxsize=1024)
def compute_bound(n: int, backends: int, lam: int = 128) -> int:
    """Smallest z with B * Pr[Binomial(n, 1/B) > z] <= 2^-lam.

    Evaluated by exact integer tail summation:
    B * sum_{j>z} C(n,j) (B-1)^(n-j) * 2^lam <= B^n.
    """
    if n <= 0:
        return 0
    if backends <= 1:
        return n
    b = int(backends)
    rhs = b**n
    scale = (1 << lam) * b
    tail = 0
    t = 1  # term at j = n: C(n,n) * (B-1)^0
    j = n
    while j >= 1:
        tail += t
        if scale * tail > rhs:
            return j
        t = t * j // (n - j + 1) * (b - 1)
        j -= 1
    return 0


def oblivious_bin_assign(
    rows: np.ndarray,
    bin_col: int,
    drop_col: int,
    backends: int,
    z_bound: int,
    rec: Recorder | None = None,
) -> np.ndarray:
    """Split rows into ``backends`` sub-batches of exactly ``z_bound`` rows.

    ``bin_col`` holds each row's backend index; ``drop_col`` is 1 for rows
    that may be discarded under load (fillers, neutralized duplicates).  The
    four fixed-pattern steps: append B*z filler rows, sort by (bin, drop)
    so droppable rows trail their bin, mark the first z of each bin, compact
    the marks away.  Raises :class:`RoundOverflowError` if a real row falls
    past the bound.  Returns a (backends, z_bound, w) array.
    """
    rows = np.asarray(rows, dtype=np.uint64)
    n, w = rows.shape
    b = int(backends)
    fillers = np.zeros((b * z_bound, w), dtype=np.uint64)
    fillers[:, bin_col] = np.repeat(np.arange(b, dtype=np.uint64), z_bound)
    fillers[:, drop_col] = 1
    combined = np.concatenate([rows, fillers])
    ordered = osort(combined, key_cols=(bin_col, drop_col), rec=rec)
    real = np.uint64(1) ^ (ordered[:, drop_col] & np.uint64(1))
    keep, over = mark_run_positions(ordered[:, bin_col], real, z_bound, rec=rec)
    if int(over.sum()):
        raise RoundOverflowError(
            f"{int(over.sum())} real packets beyond bound {z_bound} with {b} backends"
        )
    packed = ocompact(ordered, keep, rec=rec)[: b * z_bound]
    return packed.reshape(b, z_bound, w)
