"""Message store state machine: bin buffer, raw-copy stash, merged tables.

Writes build one small table per incoming batch; every k-th write drops the
k-1 temporaries and rebuilds one bin over the whole group, so the buffer
grows k times slower.  Raw batches are also stashed; once m groups
accumulate, a background merge builds one large table from the stash copies
and evicts the source bins -- reads issued meanwhile are served by the old
read-only bins, so the foreground write cost never exceeds one small build.
Capacity is bounded at N batches; the oldest container is dropped first,
a schedule that depends only on arrival order.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from ..obliv.trace import CHOOSE, Recorder
from ..protocol import Params
from .oht import Oht, oht_build, oht_lookup

_COUNTER_KEYS = ("compare_swaps", "route_moves", "scan_steps", "slot_scans")


@dataclass
class WriteBatch:
    keys: np.ndarray  # (n,) uint64 retrieval tokens
    dummies: np.ndarray  # (n,) uint64 0/1
    values: np.ndarray  # (n, vw) uint64

    def __len__(self) -> int:
        return int(self.keys.shape[0])


def concat_batches(batches: list[WriteBatch]) -> WriteBatch:
    return WriteBatch(
        keys=np.concatenate([b.keys for b in batches]),
        dummies=np.concatenate([b.dummies for b in batches]),
        values=np.concatenate([b.values for b in batches]),
    )


@dataclass
class _Container:
    oht: Oht
    cid: int
    batches: int


def _ops_total(rec: Recorder) -> int:
    return sum(rec.counters.get(k, 0) for k in _COUNTER_KEYS)


class PongStore:
    """Single storage node's state; one logical writer, snapshot readers."""

    def __init__(
        self,
        params: Params,
        value_words: int | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.value_words = params.value_words if value_words is None else value_words
        self.rng = rng or np.random.default_rng()
        self.k = params.k
        self.m = params.m_eff
        self.capacity_batches = params.N
        self.buf: list[_Container] = []
        self.tables: list[_Container] = []
        self.temp_stash: list[WriteBatch] = []
        self.temp_cids: list[int] = []
        self.stash: list[tuple[WriteBatch, int]] = []
        self.pending_merges: list[list[tuple[WriteBatch, int]]] = []
        self._next_cid = 0
        self._lock = threading.RLock()
        self.counters: dict[str, int] = {
            "writes": 0,
            "reads": 0,
            "lookups": 0,
            "merges": 0,
            "rebuilds": 0,
            "expired_batches": 0,
            "foreground_ops": 0,
        }
        self.last_write_ops = 0

    # Public size facts ----------------------------------------------------
    @property
    def total_batches(self) -> int:
        return sum(c.batches for c in self.buf) + sum(c.batches for c in self.tables)

    @property
    def container_count(self) -> int:
        return len(self.buf) + len(self.tables)

    def _build(self, batch: WriteBatch, rec: Recorder | None) -> Oht:
        t = oht_build(
            batch.keys,
            batch.dummies,
            batch.values,
            z=self.params.Z,
            epsilon=self.params.epsilon_oht,
            rng=self.rng,
            rec=rec,
        )
        self.counters["rebuilds"] += t.rebuilds
        return t

    def obl_write(self, batch: WriteBatch, rec: Recorder | None = None) -> None:
        """Store one batch; foreground cost is a single small-table build."""
        if len(batch) > self.params.max_batch:
            raise ValueError(f"batch of {len(batch)} exceeds max_batch {self.params.max_batch}")
        if rec is None:
            rec = Recorder(record_events=False)
        before = _ops_total(rec)
        with self._lock:
            if len(self.temp_stash) < self.k - 1:
                oht = self._build(batch, rec)
                cid = self._push(oht, batches=1)
                self.temp_stash.append(batch)
                self.temp_cids.append(cid)
                self.stash.append((batch, cid))
            else:
                group = self.temp_stash + [batch]
                evicted = set(self.temp_cids)
                self.buf = [c for c in self.buf if c.cid not in evicted]
                oht = self._build(concat_batches(group), rec)
                cid = self._push(oht, batches=self.k)
                # Re-point the group's stash copies at their consolidated bin.
                self.stash = [
                    (w, cid if old in evicted else old) for (w, old) in self.stash
                ]
                self.stash.append((batch, cid))
                self.temp_stash = []
                self.temp_cids = []
            if len(self.stash) >= self.m * self.k:
                self.pending_merges.append(self.stash)
                self.stash = []
            self._expire()
            self.counters["writes"] += 1
        self.last_write_ops = _ops_total(rec) - before
        self.counters["foreground_ops"] += self.last_write_ops

    def _push(self, oht: Oht, batches: int) -> int:
        cid = self._next_cid
        self._next_cid += 1
        self.buf.append(_Container(oht=oht, cid=cid, batches=batches))
        return cid

    def run_background(self, rec: Recorder | None = None) -> int:
        """Execute queued merges: one large build per m-group, then eviction.

        Off the write path by contract; the harness runs it after serving a
        round's reads, servers run it on a worker thread.  Returns the number
        of merges performed.
        """
        with self._lock:
            jobs = self.pending_merges
            self.pending_merges = []
        done = 0
        for job in jobs:
            batches = [w for (w, _) in job]
            source_cids = {cid for (_, cid) in job}
            merged = concat_batches(batches)
            omt = self._build(merged, rec)
            with self._lock:
                n_batches = sum(c.batches for c in self.buf if c.cid in source_cids)
                self.buf = [c for c in self.buf if c.cid not in source_cids]
                self.tables.append(
                    _Container(oht=omt, cid=self._next_cid, batches=n_batches)
                )
                self._next_cid += 1
                self.counters["merges"] += 1
            done += 1
        return done

    def obl_read(
        self, keys: np.ndarray, dummies: np.ndarray, rec: Recorder | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Look each key up in every bin then every table, exactly once each.

        After a hit the remaining containers see a dummy access, selected
        obliviously on the found flag.  Returns (values, found).
        """
        keys = np.asarray(keys, dtype=np.uint64)
        dummies = np.asarray(dummies, dtype=np.uint64) & np.uint64(1)
        n = keys.shape[0]
        vals = np.zeros((n, self.value_words), dtype=np.uint64)
        found = np.zeros(n, dtype=np.uint64)
        with self._lock:
            snapshot = list(self.buf) + list(self.tables)
        for ci, cont in enumerate(snapshot):
            dm = dummies | found
            if rec is not None:
                rec.emit(CHOOSE, n, ci)  # key <- found ? dummy : key
            oht_lookup(cont.oht, keys, dm, vals, found, rng=self.rng, rec=rec)
            self.counters["lookups"] += n
        self.counters["reads"] += n
        self.last_read_containers = len(snapshot)
        return vals, found

    def _expire(self) -> None:
        while self.total_batches > self.capacity_batches:
            if self.tables:
                victim = self.tables.pop(0)
            else:
                victim = self.buf.pop(0)
                if victim.cid in self.temp_cids:
                    i = self.temp_cids.index(victim.cid)
                    self.temp_cids.pop(i)
                    self.temp_stash.pop(i)
            self.stash = [(w, cid) for (w, cid) in self.stash if cid != victim.cid]
            self.pending_merges = [
                [(w, cid) for (w, cid) in job if cid != victim.cid]
                for job in self.pending_merges
            ]
            self.counters["expired_batches"] += victim.batches
