"""Random-input simulator twins for the oblivious pipelines.

Each function runs the corresponding production pipeline on freshly
randomized inputs of the given public dimensions and returns the recorded
access trace.  Obliviousness holds exactly when real workloads of matching
public dimensions produce byte-identical traces -- the executable form of
the simulation arguments for the aggregation and store pipelines, and what
the acceptance suite asserts.
"""

from __future__ import annotations

import numpy as np

from .obliv.trace import Recorder
from .ping import PingLayout, aggregate, extract_carriers
from .pong.oht import oht_build, oht_lookup
from .pong.store import PongStore, WriteBatch
from .protocol import Params


def _rand_rows(n: int, layout: PingLayout, rng: np.random.Generator) -> np.ndarray:
    rows = np.zeros((n, layout.width), dtype=np.uint64)
    rows[:, layout.label0 : layout.label0 + layout.label_words] = rng.integers(
        0, 2**63, size=(n, layout.label_words), dtype=np.uint64
    )
    rows[:, layout.vec0 : layout.vec0 + layout.vec_words] = rng.integers(
        0, 2**63, size=(n, layout.vec_words), dtype=np.uint64
    )
    return rows


def sim_aggregation(
    n_packets: int,
    n_carriers: int,
    params: Params,
    dedup: bool = False,
    seed: int = 0,
) -> Recorder:
    """Aggregation pipeline over random packets and random carrier labels."""
    rng = np.random.default_rng(seed)
    layout = PingLayout.for_params(params)
    pkts = _rand_rows(n_packets, layout, rng)
    carriers = _rand_rows(n_carriers, layout, rng)
    carriers[:, layout.vec0 : layout.vec0 + layout.vec_words] = 0
    carriers[:, layout.carrier] = 1
    rec = Recorder()
    folded = aggregate(np.concatenate([pkts, carriers]), layout, dedup=dedup, rng=rng, rec=rec)
    extract_carriers(folded, n_carriers, layout, rec=rec)
    return rec


def sim_oht_build(n: int, value_words: int, params: Params, seed: int = 0) -> Recorder:
    """Table build over random distinct keys."""
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 2**63, size=n, dtype=np.uint64)
    values = rng.integers(0, 2**63, size=(n, value_words), dtype=np.uint64)
    rec = Recorder()
    oht_build(
        keys,
        np.zeros(n, dtype=np.uint64),
        values,
        z=params.Z,
        epsilon=params.epsilon_oht,
        rng=rng,
        rec=rec,
    )
    return rec


def sim_oht_lookup(
    capacity: int, value_words: int, n_queries: int, params: Params, seed: int = 0
) -> Recorder:
    """Lookups of random keys against a table built off-trace."""
    rng = np.random.default_rng(seed)
    keys = rng.integers(0, 2**63, size=capacity, dtype=np.uint64)
    values = rng.integers(0, 2**63, size=(capacity, value_words), dtype=np.uint64)
    table = oht_build(
        keys,
        np.zeros(capacity, dtype=np.uint64),
        values,
        z=params.Z,
        epsilon=params.epsilon_oht,
        rng=rng,
    )
    rec = Recorder()
    queries = rng.integers(0, 2**63, size=n_queries, dtype=np.uint64)
    vals = np.zeros((n_queries, value_words), dtype=np.uint64)
    found = np.zeros(n_queries, dtype=np.uint64)
    oht_lookup(table, queries, np.zeros(n_queries, dtype=np.uint64), vals, found, rng=rng, rec=rec)
    return rec


def sim_store_writes(
    batch_sizes: list[int], params: Params, value_words: int = 1, seed: int = 0
) -> Recorder:
    """Write schedule over random batches; trace spans every write."""
    rng = np.random.default_rng(seed)
    store = PongStore(params, value_words=value_words, rng=rng)
    rec = Recorder()
    for size in batch_sizes:
        batch = WriteBatch(
            keys=rng.integers(0, 2**63, size=size, dtype=np.uint64),
            dummies=np.zeros(size, dtype=np.uint64),
            values=rng.integers(0, 2**63, size=(size, value_words), dtype=np.uint64),
        )
        store.obl_write(batch, rec=rec)
    return rec


def sim_store_reads(
    n_requests: int,
    prefill_sizes: list[int],
    params: Params,
    value_words: int = 1,
    seed: int = 0,
) -> Recorder:
    """Read batch of random tokens against a store prefilled off-trace.

    ``prefill_sizes`` fixes the public container structure (|Buf|, |T| and
    their shapes) the read trace is conditioned on.
    """
    rng = np.random.default_rng(seed)
    store = PongStore(params, value_words=value_words, rng=rng)
    for size in prefill_sizes:
        batch = WriteBatch(
            keys=rng.integers(0, 2**63, size=size, dtype=np.uint64),
            dummies=np.zeros(size, dtype=np.uint64),
            values=rng.integers(0, 2**63, size=(size, value_words), dtype=np.uint64),
        )
        store.obl_write(batch)
    store.run_background()
    rec = Recorder()
    keys = rng.integers(0, 2**63, size=n_requests, dtype=np.uint64)
    store.obl_read(keys, np.zeros(n_requests, dtype=np.uint64), rec=rec)
    return rec
