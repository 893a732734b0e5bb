"""Kernel backend selection.

Hot loops (compare-and-swap networks, routing stages, bucket scans) exist in
two equivalent forms: numba-compiled kernels and vectorized numpy fallbacks.
``PINGPONG_BACKEND`` picks one: ``numba``, ``numpy``, or ``auto`` (numba when
importable).  Instrumented runs (a :class:`~pingpong.obliv.trace.Recorder`
with event recording attached) always execute the numpy form, which carries
the event-emission hooks; both forms follow the same access schedule and are
asserted output-identical by the backend equivalence tests.
"""

from __future__ import annotations

import os

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

_VALID = ("auto", "numba", "numpy")
_choice = os.environ.get("PINGPONG_BACKEND", "auto").lower()
if _choice not in _VALID:
    raise RuntimeError(f"PINGPONG_BACKEND must be one of {_VALID}, got {_choice!r}")
if _choice == "numba" and not HAVE_NUMBA:
    raise RuntimeError("PINGPONG_BACKEND=numba but numba is not importable")


def backend_name() -> str:
    if _choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return _choice


def use_numba() -> bool:
    return backend_name() == "numba"


def set_backend(name: str) -> None:
    """Override the backend at runtime (tests and benchmarks)."""
    global _choice
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    _choice = name
