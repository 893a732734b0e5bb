"""Linear scans over sorted rows with data-independent access order."""

from __future__ import annotations

import numpy as np

from . import backend
from .trace import SCAN_READ, Recorder


def mark_run_positions(
    group: np.ndarray, real: np.ndarray, z: int, rec: Recorder | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mark the first ``z`` rows of each group as kept, real excess as overflow.

    ``group`` holds each row's group id in sorted order; the scan visits
    every row once regardless of content.  Returns (keep, overflow) 0/1
    uint64 arrays.
    """
    group = np.asarray(group, dtype=np.uint64)
    real = np.asarray(real, dtype=np.uint64)
    n = group.shape[0]
    keep = np.zeros(n, dtype=np.uint64)
    over = np.zeros(n, dtype=np.uint64)
    if n == 0:
        return keep, over
    instrumented = rec is not None and rec.record_events
    if not instrumented and backend.use_numba():
        from . import kernels

        ops = kernels.mark_bucket_runs(group, real, np.uint64(z), keep, over)
    else:
        idx = np.arange(n)
        new_group = np.empty(n, dtype=bool)
        new_group[0] = True
        new_group[1:] = group[1:] != group[:-1]
        start = np.maximum.accumulate(np.where(new_group, idx, 0))
        run = idx - start
        keep[:] = run < z
        over[:] = real & (np.uint64(1) ^ keep)
        if rec is not None:
            rec.emit(SCAN_READ, idx)
        ops = n
    if rec is not None:
        rec.count("scan_steps", ops)
    return keep, over
