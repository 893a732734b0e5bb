"""Notification aggregation: carriers, oblivious fold, digest extraction.

Per round a node unseals one notification per connected client (injecting
blanks for no-shows so the processed count stays public), appends one
server-built carrier per registered client, sorts by (label, carrier) so each
label group ends with its carrier, folds vectors forward with masked ORs, and
compacts the carriers out.  Every step's access pattern is a function of
(packet count, registry size) alone.

Entry nodes in scaled deployments run the same fold with relabelling: all but
the last packet of a label group are re-labelled with fresh randomness and
flagged droppable, leaving one representative per label so backend assignment
meets the balls-into-bins preconditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import crypto
from .obliv import backend, ocompact, osort
from .obliv.trace import CHOOSE, SCAN_WRITE, Recorder
from .obliv.words import obl_choose, obl_equal
from .protocol import (
    Params,
    build_notf_plaintext,
    label_to_words,
    parse_notf_plaintext,
    vec_to_words,
    words_to_vec,
)

_ONE = np.uint64(1)


@dataclass(frozen=True)
class PingLayout:
    """Column offsets of the packed aggregation row."""

    label0: int
    label_words: int
    vec0: int
    vec_words: int
    carrier: int
    dummy: int
    bin: int
    entry: int
    slot: int
    width: int

    @classmethod
    def for_params(cls, params: Params) -> "PingLayout":
        lw, vw = params.label_words, params.vec_words
        return cls(
            label0=0,
            label_words=lw,
            vec0=lw,
            vec_words=vw,
            carrier=lw + vw,
            dummy=lw + vw + 1,
            bin=lw + vw + 2,
            entry=lw + vw + 3,
            slot=lw + vw + 4,
            width=lw + vw + 5,
        )


class PingRegistry:
    """Connected clients of one node: id -> (label, delivery slot)."""

    def __init__(self, params: Params):
        self.params = params
        self.labels: dict[int, bytes] = {}
        self._label_set: set[bytes] = set()

    def add(self, client_id: int, label: bytes) -> None:
        if len(label) != self.params.label_bytes:
            raise ValueError("bad label length")
        if client_id in self.labels:
            if self.labels[client_id] != label:
                raise ValueError(f"client {client_id} re-registered with a different label")
            return
        if label in self._label_set:
            raise ValueError("duplicate label across clients: deployment configuration error")
        self.labels[client_id] = label
        self._label_set.add(label)

    def __len__(self) -> int:
        return len(self.labels)

    def ordered_ids(self) -> list[int]:
        return list(self.labels.keys())


def blank_row(layout: PingLayout, rng: np.random.Generator, entry: int = 0) -> np.ndarray:
    """Idle/no-show stand-in: zero vector under a fresh random label."""
    row = np.zeros(layout.width, dtype=np.uint64)
    row[layout.label0 : layout.label0 + layout.label_words] = rng.integers(
        0, 2**63, size=layout.label_words, dtype=np.uint64
    )
    row[layout.dummy] = 1
    row[layout.entry] = entry
    return row


def notf_row(
    ciphertext: bytes,
    keypair: crypto.ServiceKeyPair,
    params: Params,
    layout: PingLayout,
    rng: np.random.Generator,
    entry: int = 0,
) -> np.ndarray:
    """Unseal one notification into a packed row; failures become blanks.

    A sealed all-zero ("null") label marks a client's idle packet; it is
    swapped for fresh randomness under a mask so idle labels stay distinct
    for downstream bin assignment.
    """
    try:
        pt = crypto.unseal(ciphertext, keypair)
        vec_b, label_b = parse_notf_plaintext(pt, params)
    except Exception:
        return blank_row(layout, rng, entry)
    row = np.zeros(layout.width, dtype=np.uint64)
    label = label_to_words(label_b)
    is_null = obl_equal(label, np.zeros_like(label))
    fresh = rng.integers(0, 2**63, size=layout.label_words, dtype=np.uint64)
    row[layout.label0 : layout.label0 + layout.label_words] = obl_choose(is_null, fresh, label)
    row[layout.vec0 : layout.vec0 + layout.vec_words] = vec_to_words(vec_b, params)
    row[layout.dummy] = is_null
    row[layout.entry] = entry
    return row


def carrier_rows(
    registry: PingRegistry, layout: PingLayout, entry: int = 0
) -> np.ndarray:
    """One zero-vector carrier per registered client, tagged for delivery."""
    n = len(registry)
    rows = np.zeros((n, layout.width), dtype=np.uint64)
    for slot, (cid, label) in enumerate(registry.labels.items()):
        rows[slot, layout.label0 : layout.label0 + layout.label_words] = label_to_words(label)
        rows[slot, layout.carrier] = 1
        rows[slot, layout.entry] = entry
        rows[slot, layout.slot] = slot
    return rows


def _scan_numpy(
    arr: np.ndarray, layout: PingLayout, dedup: bool, rnd: np.ndarray, rec: Recorder | None
) -> None:
    l0, lw = layout.label0, layout.label_words
    v0, vw = layout.vec0, layout.vec_words
    for i in range(1, arr.shape[0]):
        is_rep = obl_equal(arr[i, l0 : l0 + lw], arr[i - 1, l0 : l0 + lw], rec)
        agg = arr[i - 1, v0 : v0 + vw] | arr[i, v0 : v0 + vw]
        arr[i, v0 : v0 + vw] = obl_choose(is_rep, agg, arr[i, v0 : v0 + vw], rec)
        if dedup:
            arr[i - 1, l0 : l0 + lw] = obl_choose(
                is_rep, rnd[i], arr[i - 1, l0 : l0 + lw], rec
            )
            arr[i - 1, layout.dummy] |= is_rep
            if rec is not None:
                rec.emit(SCAN_WRITE, i - 1)


def aggregate(
    rows: np.ndarray,
    layout: PingLayout,
    dedup: bool = False,
    rng: np.random.Generator | None = None,
    rec: Recorder | None = None,
) -> np.ndarray:
    """Sort by (label, carrier) and fold each label group into its last row.

    With ``dedup`` the fold also randomizes superseded labels (entry-node
    pass); the survivor of each group carries the OR of the group.
    """
    rng = rng or np.random.default_rng()
    key_cols = tuple(range(layout.label0, layout.label0 + layout.label_words)) + (layout.carrier,)
    ordered = osort(rows, key_cols=key_cols, rec=rec)
    n = ordered.shape[0]
    rnd = rng.integers(0, 2**63, size=(n, layout.label_words), dtype=np.uint64)
    instrumented = rec is not None and rec.record_events
    if not instrumented and backend.use_numba():
        from .obliv import kernels

        ops = kernels.aggregate_scan(
            ordered,
            layout.label0,
            layout.label_words,
            layout.vec0,
            layout.vec_words,
            layout.dummy,
            1 if dedup else 0,
            rnd,
        )
        if rec is not None:
            rec.count("scan_steps", ops)
    else:
        _scan_numpy(ordered, layout, dedup, rnd, rec)
        if rec is not None:
            rec.count("scan_steps", max(0, n - 1))
    return ordered


def extract_carriers(
    rows: np.ndarray, n_carriers: int, layout: PingLayout, rec: Recorder | None = None
) -> np.ndarray:
    """Compact on the carrier tag; the first ``n_carriers`` rows remain."""
    if rec is not None:
        rec.emit(CHOOSE, rows.shape[0])
    packed = ocompact(rows, rows[:, layout.carrier], rec=rec)
    return packed[:n_carriers]


def ping_round(
    recv_notfs: dict[int, bytes],
    registry: PingRegistry,
    keypair: crypto.ServiceKeyPair,
    params: Params,
    rng: np.random.Generator | None = None,
    rec: Recorder | None = None,
) -> dict[int, bytes]:
    """Single-node round: unseal, add carriers, aggregate, extract digests.

    Returns one digest vector (raw bytes) per registered client.  Clients
    that sent nothing this round contribute an injected blank, so the
    aggregation input size equals the registry size plus the packet count.
    """
    rng = rng or np.random.default_rng()
    layout = PingLayout.for_params(params)
    rows = []
    for cid in registry.ordered_ids():
        ct = recv_notfs.get(cid)
        if ct is None:
            rows.append(blank_row(layout, rng))
        else:
            rows.append(notf_row(ct, keypair, params, layout, rng))
    pkts = np.concatenate(
        [np.asarray(rows, dtype=np.uint64).reshape(len(rows), layout.width), carrier_rows(registry, layout)]
    )
    folded = aggregate(pkts, layout, dedup=False, rng=rng, rec=rec)
    carriers = extract_carriers(folded, len(registry), layout, rec=rec)
    out: dict[int, bytes] = {}
    ids = registry.ordered_ids()
    for row in carriers:
        slot = int(row[layout.slot])
        vec = words_to_vec(row[layout.vec0 : layout.vec0 + layout.vec_words], params)
        out[ids[slot]] = vec
    if len(out) != len(registry):
        raise RuntimeError("carrier extraction lost digests")
    return out


def make_idle_notf(params: Params, ping_pub: bytes, rng: np.random.Generator | None = None) -> bytes:
    """Sealed blank notification: zero vector under the reserved null label."""
    pt = build_notf_plaintext(b"\x00" * params.vec_bytes, b"\x00" * params.label_bytes, params)
    return crypto.seal(pt, ping_pub, rng)
