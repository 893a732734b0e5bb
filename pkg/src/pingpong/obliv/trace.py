"""Recording of data-independent access events.

Every oblivious routine in this package touches memory in an order that is a
function of public sizes only.  When a :class:`Recorder` is attached, the
instrumented execution path emits one event per primitive access as it runs:
``(kind, a, b)`` where ``a``/``b`` are positions, index pairs, or operand
lengths -- never data values.  Equality of the resulting event streams across
random same-size inputs is the executable form of the no-secret-dependent-
branch property, and is what the obliviousness test suite asserts.

Recording is off in normal operation (``rec=None`` everywhere); attaching a
recorder does not change which accesses happen, only whether they are logged.
Streams can be arbitrarily long, so byte equality is checked through a SHA-256
digest of the canonical little-endian event serialization.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Event kinds.
COMPARE_SWAP = 1
SCAN_READ = 2
SCAN_WRITE = 3
CHOOSE = 4
EQUAL = 5

_EVENT_DTYPE = np.dtype([("kind", "u1"), ("a", "<u8"), ("b", "<u8")])


class Recorder:
    """Accumulates access events (hashed, optionally retained) and op counters."""

    def __init__(self, keep_events: bool = False, record_events: bool = True):
        self.keep_events = keep_events
        self.record_events = record_events
        self._sha = hashlib.sha256()
        self._chunks: list[np.ndarray] = []
        self.event_count = 0
        self.counters: dict[str, int] = {}

    def emit(self, kind: int, a, b=0) -> None:
        """Record a batch of events of one kind.

        ``a`` and ``b`` are broadcast against each other; one event is emitted
        per element, in element order.
        """
        if not self.record_events:
            return
        a = np.atleast_1d(np.asarray(a, dtype=np.uint64))
        b = np.atleast_1d(np.asarray(b, dtype=np.uint64))
        n = max(a.size, b.size)
        rec = np.empty(n, dtype=_EVENT_DTYPE)
        rec["kind"] = kind
        rec["a"] = a
        rec["b"] = b
        self._sha.update(rec.tobytes())
        self.event_count += n
        if self.keep_events:
            self._chunks.append(rec)

    def emit_many(self, kinds, a, b) -> None:
        """Record a heterogeneous event batch (parallel kind/a/b arrays)."""
        if not self.record_events:
            return
        kinds = np.atleast_1d(np.asarray(kinds, dtype=np.uint8))
        a = np.atleast_1d(np.asarray(a, dtype=np.uint64))
        b = np.atleast_1d(np.asarray(b, dtype=np.uint64))
        n = max(kinds.size, a.size, b.size)
        rec = np.empty(n, dtype=_EVENT_DTYPE)
        rec["kind"] = kinds
        rec["a"] = a
        rec["b"] = b
        self._sha.update(rec.tobytes())
        self.event_count += n
        if self.keep_events:
            self._chunks.append(rec)

    def count(self, name: str, n: int = 1) -> None:
        self.counters[name] = self.counters.get(name, 0) + int(n)

    def digest(self) -> str:
        """Hex digest of the canonical event stream so far."""
        return self._sha.hexdigest()

    def events(self) -> np.ndarray:
        """All retained events (requires ``keep_events=True``)."""
        if not self.keep_events:
            raise RuntimeError("recorder was created with keep_events=False")
        if not self._chunks:
            return np.empty(0, dtype=_EVENT_DTYPE)
        return np.concatenate(self._chunks)
