"""In-process service clusters: entry/backend wiring for both subsystems.

These classes run the full per-round pipelines -- unsealing, carrier
creation, deduplicating aggregation, padded sub-batch assignment, backend
processing, and reply gathering -- against in-memory state.  The socket
servers and the simulation harness both drive them; only transport differs.
"""

from __future__ import annotations

import numpy as np

from . import crypto, ping
from .obliv.hashing import fold_words, mix64
from .obliv.trace import Recorder
from .pong.store import PongStore, WriteBatch
from .protocol import (
    Params,
    parse_msg_plaintext,
    parse_read_plaintext,
    words_to_vec,
)
from .router import compute_bound, oblivious_bin_assign

_ONE = np.uint64(1)


class PingCluster:
    """Entry nodes + aggregation backends for the notification subsystem."""

    def __init__(
        self,
        params: Params,
        keypair: crypto.ServiceKeyPair,
        entries: int = 1,
        backends: int = 1,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.keypair = keypair
        self.n_entries = entries
        self.n_backends = backends
        self.rng = rng or np.random.default_rng()
        self.layout = ping.PingLayout.for_params(params)
        self.registries = [ping.PingRegistry(params) for _ in range(entries)]
        self.home_entry: dict[int, int] = {}
        self.counters = {"packets_in": 0, "digests_out": 0, "rounds": 0}

    def register(self, client_id: int, label: bytes, entry: int | None = None) -> int:
        e = entry if entry is not None else client_id % self.n_entries
        self.registries[e].add(client_id, label)
        self.home_entry[client_id] = e
        return e

    @property
    def client_count(self) -> int:
        return sum(len(r) for r in self.registries)

    def round(self, recv_notfs: dict[int, bytes], rec: Recorder | None = None) -> dict[int, bytes]:
        """Process one round of sealed notifications into per-client digests."""
        self.counters["packets_in"] += len(recv_notfs)
        self.counters["rounds"] += 1
        if self.n_entries == 1 and self.n_backends == 1:
            digests = ping.ping_round(
                recv_notfs, self.registries[0], self.keypair, self.params, self.rng, rec
            )
            self.counters["digests_out"] += len(digests)
            return digests

        lay = self.layout
        # Entry pass: unseal + blanks + local carriers, dedup fold, bin split.
        entry_subs: list[np.ndarray] = []
        for e, reg in enumerate(self.registries):
            rows = []
            for cid in reg.ordered_ids():
                ct = recv_notfs.get(cid)
                if ct is None:
                    rows.append(ping.blank_row(lay, self.rng, entry=e))
                else:
                    rows.append(ping.notf_row(ct, self.keypair, self.params, lay, self.rng, entry=e))
            pkts = np.concatenate(
                [
                    np.asarray(rows, dtype=np.uint64).reshape(len(rows), lay.width),
                    ping.carrier_rows(reg, lay, entry=e),
                ]
            )
            folded = ping.aggregate(pkts, lay, dedup=True, rng=self.rng, rec=rec)
            labels = folded[:, lay.label0 : lay.label0 + lay.label_words]
            folded[:, lay.bin] = fold_words(labels, seed=0x9C0) % np.uint64(self.n_backends)
            zb = compute_bound(folded.shape[0], self.n_backends, self.params.lam)
            subs = oblivious_bin_assign(
                folded, lay.bin, lay.dummy, self.n_backends, zb, rec=rec
            )
            entry_subs.append(subs)

        # Backend pass: merge per-backend sub-batches, aggregate, extract.
        digests: dict[int, bytes] = {}
        for b in range(self.n_backends):
            merged = np.concatenate([entry_subs[e][b] for e in range(self.n_entries)])
            folded = ping.aggregate(merged, lay, dedup=False, rng=self.rng, rec=rec)
            n_carriers = int(folded[:, lay.carrier].sum())
            carriers = ping.extract_carriers(folded, n_carriers, lay, rec=rec)
            for row in carriers:
                e = int(row[lay.entry])
                slot = int(row[lay.slot])
                cid = self.registries[e].ordered_ids()[slot]
                vec = words_to_vec(row[lay.vec0 : lay.vec0 + lay.vec_words], self.params)
                digests[cid] = vec
        if len(digests) != self.client_count:
            raise RuntimeError(
                f"digest fan-out mismatch: {len(digests)} != {self.client_count}"
            )
        self.counters["digests_out"] += len(digests)
        return digests


# Pong request-row columns (before values).
_TOKEN = 0
_BIN = 1
_DROP = 2
_ENTRY = 3
_SLOT = 4
_META_W = 5


class PongCluster:
    """Entry nodes + storage nodes for the oblivious message store."""

    def __init__(
        self,
        params: Params,
        keypair: crypto.ServiceKeyPair,
        entries: int = 1,
        backends: int = 1,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.keypair = keypair
        self.n_entries = entries
        self.n_backends = backends
        self.rng = rng or np.random.default_rng()
        self.stores = [
            PongStore(params, rng=np.random.default_rng(self.rng.integers(2**63)))
            for _ in range(backends)
        ]
        self.sessions: dict[int, int] = {}  # client -> entry
        self.counters = {"writes": 0, "reads": 0, "rounds": 0}
        self._bin_seed = 0x90C6

    def register(self, client_id: int, entry: int | None = None) -> int:
        e = entry if entry is not None else client_id % self.n_entries
        self.sessions[client_id] = e
        return e

    def _entry_clients(self, e: int) -> list[int]:
        return [c for c, ee in self.sessions.items() if ee == e]

    def _unseal_write(self, ct: bytes) -> tuple[int, int, int, np.ndarray] | None:
        try:
            pt = crypto.unseal(ct, self.keypair)
            token, dummy, sender, enc = parse_msg_plaintext(pt, self.params)
        except Exception:
            return None
        vw = self.params.value_words
        value = np.zeros(vw, dtype=np.uint64)
        value[0] = sender
        enc_padded = enc + b"\x00" * ((vw - 1) * 8 - len(enc))
        value[1:] = np.frombuffer(enc_padded, dtype="<u8")
        return token, (1 if dummy else 0), sender, value

    def round(
        self,
        msg_pkts: dict[int, bytes],
        read_pkts: dict[int, bytes],
        rec: Recorder | None = None,
    ) -> dict[int, tuple[int, bytes] | None]:
        """Ingest one round's writes, then serve its reads, then background.

        Returns per-client response payload (sender id, encrypted body) or
        None when the read missed; the transport layer turns misses into
        uniformly random response packets.
        """
        p = self.params
        vw = p.value_words
        lam = p.lam
        self.counters["rounds"] += 1

        # Writes ------------------------------------------------------------
        for e in range(self.n_entries):
            clients = self._entry_clients(e)
            rows = np.zeros((len(clients), _META_W + vw), dtype=np.uint64)
            for i, cid in enumerate(clients):
                ct = msg_pkts.get(cid)
                parsed = self._unseal_write(ct) if ct is not None else None
                if parsed is None:
                    # Missing or malformed: inject a dummy write to keep the
                    # public batch size at the session count.
                    rows[i, _TOKEN] = self.rng.integers(0, 2**63, dtype=np.uint64)
                    rows[i, _DROP] = 0
                    rows[i, _META_W :] = np.frombuffer(self.rng.bytes(vw * 8), dtype="<u8")
                else:
                    token, dummy, _, value = parsed
                    fresh = int(self.rng.integers(0, 2**63))
                    tok_arr = np.asarray([token], dtype=np.uint64)
                    fresh_arr = np.asarray([fresh], dtype=np.uint64)
                    mask = np.negative(np.int64(dummy)).astype(np.uint64)
                    rows[i, _TOKEN] = (fresh_arr[0] & mask) | (tok_arr[0] & ~mask)
                    rows[i, _META_W :] = value
                rows[i, _ENTRY] = e
                rows[i, _SLOT] = i
            if len(clients) == 0:
                continue
            rows[:, _BIN] = mix64(rows[:, _TOKEN] ^ np.uint64(self._bin_seed)) % np.uint64(
                self.n_backends
            )
            if self.n_backends == 1:
                batch = WriteBatch(
                    keys=rows[:, _TOKEN].copy(),
                    dummies=rows[:, _DROP].copy(),
                    values=rows[:, _META_W :].copy(),
                )
                self.stores[0].obl_write(batch, rec=rec)
            else:
                zb = compute_bound(rows.shape[0], self.n_backends, lam)
                subs = oblivious_bin_assign(rows, _BIN, _DROP, self.n_backends, zb, rec=rec)
                for b in range(self.n_backends):
                    sub = subs[b]
                    batch = WriteBatch(
                        keys=sub[:, _TOKEN].copy(),
                        dummies=sub[:, _DROP].copy(),
                        values=sub[:, _META_W :].copy(),
                    )
                    self.stores[b].obl_write(batch, rec=rec)
            self.counters["writes"] += len(clients)

        # Reads ---------------------------------------------------------------
        responses: dict[int, tuple[int, bytes] | None] = {}
        for e in range(self.n_entries):
            clients = self._entry_clients(e)
            if len(clients) == 0:
                continue
            rows = np.zeros((len(clients), _META_W), dtype=np.uint64)
            for i, cid in enumerate(clients):
                ct = read_pkts.get(cid)
                token, dummy = None, True
                if ct is not None:
                    try:
                        token, dummy = parse_read_plaintext(crypto.unseal(ct, self.keypair))
                    except Exception:
                        token = None
                if token is None:
                    token = int(self.rng.integers(0, 2**63))
                    dummy = True
                rows[i, _TOKEN] = token
                rows[i, _DROP] = 1 if dummy else 0
                rows[i, _ENTRY] = e
                rows[i, _SLOT] = i
            rows[:, _BIN] = mix64(rows[:, _TOKEN] ^ np.uint64(self._bin_seed)) % np.uint64(
                self.n_backends
            )
            if self.n_backends == 1:
                vals, found = self.stores[0].obl_read(rows[:, _TOKEN], rows[:, _DROP], rec=rec)
                metas = rows
            else:
                zb = compute_bound(rows.shape[0], self.n_backends, lam)
                subs = oblivious_bin_assign(rows, _BIN, _DROP, self.n_backends, zb, rec=rec)
                vals_parts, found_parts, meta_parts = [], [], []
                for b in range(self.n_backends):
                    sub = subs[b]
                    v, f = self.stores[b].obl_read(sub[:, _TOKEN], sub[:, _DROP], rec=rec)
                    vals_parts.append(v)
                    found_parts.append(f)
                    meta_parts.append(sub)
                vals = np.concatenate(vals_parts)
                found = np.concatenate(found_parts)
                metas = np.concatenate(meta_parts)
            for i in range(metas.shape[0]):
                # Fillers and dummy reads fall through to a synthesized
                # random response at the transport layer.
                if int(metas[i, _ENTRY]) != e or int(metas[i, _DROP]) == 1:
                    continue
                slot = int(metas[i, _SLOT])
                if slot >= len(clients):
                    continue
                cid = clients[slot]
                if int(found[i]):
                    sender = int(vals[i, 0])
                    enc = vals[i, 1:].astype("<u8").tobytes()[: p.enc_msg_len]
                    responses[cid] = (sender, enc)
                else:
                    responses[cid] = None
            self.counters["reads"] += len(clients)

        for st in self.stores:
            st.run_background(rec=rec)
        return responses
