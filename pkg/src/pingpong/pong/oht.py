"""Two-tier oblivious hash table.

Keys hash into Z-slot buckets of a primary tier; bucket excess spills into a
half-size secondary tier under an independent seed.  Build places items by a
fixed pipeline -- tag, sort by (bucket, filler), mark the first Z per bucket,
compact -- whose access pattern depends only on the capacity.  Lookup scans
exactly the 2Z slots of the two candidate buckets with masked compare/select,
so hits, misses, and dummy queries are indistinguishable.

A build whose spill exceeds the secondary tier is retried under fresh seeds
(probability bounded by the (lambda, epsilon, Z) parameterization; observed
rate is the subject of the acceptance suite).  Non-dummy keys must be
distinct -- upheld by PRF token derivation plus server-side randomization of
dummy entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..obliv import backend, ocompact, osort
from ..obliv.hashing import bucket_of
from ..obliv.scans import mark_run_positions
from ..obliv.trace import CHOOSE, EQUAL, SCAN_READ, Recorder
from ..obliv.words import flag_mask_arr

_ONE = np.uint64(1)
_TWO = np.uint64(2)
_MAXWORD = np.uint64(0xFFFFFFFFFFFFFFFF)

# Working rows are [sortmeta, key, value...]; sortmeta packs
# (bucket << 2) | (filler << 1) | real, so one word orders a tier's rows by
# bucket with real occupants ahead of fillers.  Stored tables are
# [key, flags, value...] with flags = sortmeta & 3.
_META = 0
_KEY = 1
_VAL0 = 2


class BuildError(Exception):
    """Build failed repeatedly; the (lambda, epsilon, Z) geometry is off."""


def geometry(capacity: int, epsilon: float, z: int) -> tuple[int, int, int]:
    """(tier1 buckets, tier2 buckets, spill capacity) for ``capacity`` items."""
    b1 = max(1, math.ceil(capacity / (epsilon * z)))
    b2 = max(1, math.ceil(b1 / 2))
    # Spill holds tier-1 excess: ~1.2% of items in expectation at the default
    # load factor, capped with a wide margin; beyond it the build reseeds.
    spill = min(capacity, max(z, math.ceil(capacity * 0.12)))
    return b1, b2, spill


@dataclass
class Oht:
    """Built table; ``tier*`` rows are [key, flags, value...]."""

    tier1: np.ndarray
    tier2: np.ndarray
    seed1: int
    seed2: int
    b1: int
    b2: int
    z: int
    value_words: int
    capacity: int
    rebuilds: int = 0


def _tier_place(
    rows: np.ndarray,
    nbuckets: int,
    z: int,
    spill_cap: int,
    rec: Recorder | None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Sort tagged rows with per-bucket fillers, keep Z per bucket, spill rest.

    Returns (table rows, spill rows, true spill count).
    """
    w = rows.shape[1]
    fillers = np.zeros((nbuckets * z, w), dtype=np.uint64)
    fillers[:, _META] = (np.repeat(np.arange(nbuckets, dtype=np.uint64), z) << _TWO) | _TWO
    pad = np.zeros(w, dtype=np.uint64)
    pad[_META] = _MAXWORD
    comb = osort(np.concatenate([rows, fillers]), key_cols=(_META,), rec=rec, pad_row=pad)
    real = comb[:, _META] & _ONE
    keep, over = mark_run_positions(comb[:, _META] >> _TWO, real, z, rec=rec)
    table = ocompact(comb, keep, rec=rec)[: nbuckets * z]
    spill = ocompact(comb, over, rec=rec)[:spill_cap]
    return table, spill, int(over.sum())


def oht_build(
    keys: np.ndarray,
    dummies: np.ndarray,
    values: np.ndarray | None,
    z: int,
    epsilon: float = 0.75,
    rng: np.random.Generator | None = None,
    rec: Recorder | None = None,
    max_retries: int = 8,
) -> Oht:
    """Build a table over ``keys`` (dummy-flagged entries get random keys).

    ``values`` is (n, vw) or None for key-only tables.  Raises
    :class:`BuildError` after ``max_retries`` seed retries.
    """
    rng = rng or np.random.default_rng()
    keys = np.asarray(keys, dtype=np.uint64)
    n = keys.shape[0]
    dummies = np.asarray(dummies, dtype=np.uint64) & _ONE
    if values is None:
        values = np.zeros((n, 0), dtype=np.uint64)
    values = np.asarray(values, dtype=np.uint64)
    vw = values.shape[1]
    b1, b2, spill_cap = geometry(n, epsilon, z)

    # Dummy entries become unfindable occupants under fresh random keys.
    dmask = flag_mask_arr(dummies)
    eff_keys = (rng.integers(0, 2**63, size=n, dtype=np.uint64) & dmask) | (keys & ~dmask)

    for attempt in range(max_retries):
        seed1 = int(rng.integers(0, 2**63))
        seed2 = int(rng.integers(0, 2**63))
        rows = np.zeros((n, 2 + vw), dtype=np.uint64)
        rows[:, _KEY] = eff_keys
        rows[:, _VAL0:] = values
        rows[:, _META] = (bucket_of(eff_keys, seed1, b1) << _TWO) | _ONE
        t1, spill, n_spill = _tier_place(rows, b1, z, spill_cap, rec)
        if n_spill > spill_cap:
            if rec is not None:
                rec.count("rebuilds")
            continue
        real2 = spill[:, _META] & _ONE
        spill[:, _META] = (
            ((bucket_of(spill[:, _KEY], seed2, b2) << _TWO) & flag_mask_arr(real2))
            | ((_ONE ^ real2) << _ONE)
            | real2
        )
        t2, _, n_spill2 = _tier_place(spill, b2, z, z, rec)
        if n_spill2 > 0:
            if rec is not None:
                rec.count("rebuilds")
            continue
        if rec is not None:
            rec.count("oht_builds")
        return Oht(
            tier1=_as_table(t1),
            tier2=_as_table(t2),
            seed1=seed1,
            seed2=seed2,
            b1=b1,
            b2=b2,
            z=z,
            value_words=vw,
            capacity=n,
            rebuilds=attempt,
        )
    raise BuildError(f"table build failed {max_retries} times at capacity {n}")


def _as_table(rows: np.ndarray) -> np.ndarray:
    """[sortmeta, key, value...] working rows -> [key, flags, value...]."""
    out = np.empty_like(rows)
    out[:, 0] = rows[:, _KEY]
    out[:, 1] = rows[:, _META] & np.uint64(3)
    out[:, 2:] = rows[:, _VAL0:]
    return out


def oht_build_reference(
    keys: np.ndarray,
    dummies: np.ndarray,
    values: np.ndarray | None,
    z: int,
    epsilon: float = 0.75,
    rng: np.random.Generator | None = None,
    max_retries: int = 8,
) -> Oht:
    """Non-oblivious reference builder: same geometry and spill rule, direct
    placement.  Independent check for build/lookup equivalence tests, and a
    fast state loader for occupancy experiments."""
    rng = rng or np.random.default_rng()
    keys = np.asarray(keys, dtype=np.uint64)
    n = keys.shape[0]
    dummies = np.asarray(dummies, dtype=np.uint64).astype(bool)
    if values is None:
        values = np.zeros((n, 0), dtype=np.uint64)
    vw = values.shape[1]
    eff_keys = keys.copy()
    if n:
        eff_keys[dummies] = rng.integers(0, 2**63, size=int(dummies.sum()), dtype=np.uint64)
    b1, b2, spill_cap = geometry(n, epsilon, z)

    for attempt in range(max_retries):
        seed1 = int(rng.integers(0, 2**63))
        seed2 = int(rng.integers(0, 2**63))
        t1 = np.zeros((b1 * z, 2 + vw), dtype=np.uint64)
        t2 = np.zeros((b2 * z, 2 + vw), dtype=np.uint64)
        fill1 = np.zeros(b1, dtype=np.int64)
        fill2 = np.zeros(b2, dtype=np.int64)
        spill_idx = []
        order1 = bucket_of(eff_keys, seed1, b1)
        for i in range(n):
            b = int(order1[i])
            if fill1[b] < z:
                slot = b * z + fill1[b]
                t1[slot, 0] = eff_keys[i]
                t1[slot, 1] = 1
                t1[slot, 2:] = values[i]
                fill1[b] += 1
            else:
                spill_idx.append(i)
        if len(spill_idx) > spill_cap:
            continue
        ok = True
        for i in spill_idx:
            b = int(bucket_of(eff_keys[i : i + 1], seed2, b2)[0])
            if fill2[b] >= z:
                ok = False
                break
            slot = b * z + fill2[b]
            t2[slot, 0] = eff_keys[i]
            t2[slot, 1] = 1
            t2[slot, 2:] = values[i]
            fill2[b] += 1
        if not ok:
            continue
        return Oht(t1, t2, seed1, seed2, b1, b2, z, vw, n, rebuilds=attempt)
    raise BuildError(f"reference build failed {max_retries} times at capacity {n}")


def _lookup_numpy(
    t: Oht,
    keys: np.ndarray,
    dummies: np.ndarray,
    rand1: np.ndarray,
    rand2: np.ndarray,
    vals: np.ndarray,
    found: np.ndarray,
    rec: Recorder | None,
) -> int:
    n = keys.shape[0]
    vw = t.value_words
    dmask = flag_mask_arr(dummies)
    newly = np.zeros(n, dtype=np.uint64)
    for tier_no, (table, seed, nb, rnd) in enumerate(
        ((t.tier1, t.seed1, t.b1, rand1), (t.tier2, t.seed2, t.b2, rand2))
    ):
        eff = (rnd & dmask) | (keys & ~dmask)
        buckets = bucket_of(eff, seed, nb)
        slot_idx = buckets[:, None] * np.uint64(t.z) + np.arange(t.z, dtype=np.uint64)[None, :]
        slots = table[slot_idx]  # (n, z, 2+vw)
        hit = (slots[:, :, 0] == keys[:, None]) & (slots[:, :, 1] & _ONE).astype(bool)
        hit &= ~dummies.astype(bool)[:, None] & ~(found | newly).astype(bool)[:, None]
        hit_u = hit.astype(np.uint64)
        if vw:
            gathered = np.bitwise_or.reduce(
                slots[:, :, 2:] & flag_mask_arr(hit_u.ravel()).reshape(n, t.z, 1), axis=1
            )
            row_hit = flag_mask_arr(hit_u.max(axis=1))[:, None]
            vals[:, :] = (gathered & row_hit) | (vals & ~row_hit)
        newly |= hit_u.max(axis=1)
        if rec is not None:
            kinds = np.tile(
                np.repeat(np.uint8([SCAN_READ, EQUAL, CHOOSE]), 1).reshape(1, 3), (n * t.z, 1)
            ).ravel()
            a = np.tile(
                np.stack(
                    [np.full(t.z, tier_no), np.ones(t.z), np.full(t.z, vw)], axis=1
                ).ravel(),
                n,
            )
            slot_b = np.stack([np.arange(t.z)] * 3, axis=1).ravel()
            rec.emit_many(kinds, a, np.tile(slot_b, n))
    found |= newly
    return 2 * t.z * n


def oht_lookup(
    t: Oht,
    keys: np.ndarray,
    dummies: np.ndarray,
    vals: np.ndarray,
    found: np.ndarray,
    rng: np.random.Generator | None = None,
    rec: Recorder | None = None,
) -> int:
    """Batch lookup folding hits into ``vals``/``found`` in place.

    ``dummies`` marks queries that must scan without matching (explicit
    dummies or already-satisfied requests); their buckets come from fresh
    randomness.  Every query costs exactly 2Z slot scans.  Returns the slot
    scan count.
    """
    rng = rng or np.random.default_rng()
    keys = np.asarray(keys, dtype=np.uint64)
    n = keys.shape[0]
    dummies = np.asarray(dummies, dtype=np.uint64) & _ONE
    rand1 = rng.integers(0, 2**63, size=n, dtype=np.uint64)
    rand2 = rng.integers(0, 2**63, size=n, dtype=np.uint64)
    instrumented = rec is not None and rec.record_events
    if not instrumented and backend.use_numba():
        from ..obliv import kernels

        ops = kernels.oht_lookup_batch(
            t.tier1,
            t.tier2,
            np.uint64(t.b1),
            np.uint64(t.b2),
            np.uint64(t.z),
            np.uint64(t.seed1),
            np.uint64(t.seed2),
            keys,
            dummies,
            rand1,
            rand2,
            vals,
            found,
        )
    else:
        ops = _lookup_numpy(t, keys, dummies, rand1, rand2, vals, found, rec)
    if rec is not None:
        rec.count("slot_scans", ops)
        rec.count("oht_lookups", n)
    return int(ops)
