"""Data-oblivious primitives: branch-free word ops, sort, compaction, tracing."""

from .backend import HAVE_NUMBA, backend_name, set_backend, use_numba
from .compact import ocompact
from .hashing import bucket_of, fold_words, mix64
from .sort import next_pow2, osort
from .trace import CHOOSE, COMPARE_SWAP, EQUAL, SCAN_READ, SCAN_WRITE, Recorder
from .words import flag_mask, flag_mask_arr, obl_choose, obl_choose_rows, obl_equal

__all__ = [
    "HAVE_NUMBA",
    "backend_name",
    "set_backend",
    "use_numba",
    "ocompact",
    "bucket_of",
    "fold_words",
    "mix64",
    "next_pow2",
    "osort",
    "Recorder",
    "COMPARE_SWAP",
    "SCAN_READ",
    "SCAN_WRITE",
    "CHOOSE",
    "EQUAL",
    "obl_choose",
    "obl_choose_rows",
    "obl_equal",
    "flag_mask",
    "flag_mask_arr",
]
