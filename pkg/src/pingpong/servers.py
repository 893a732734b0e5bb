"""Socket servers for the notification and store subsystems.

One process per node.  Single-role servers do the whole round locally; in
scaled deployments entry nodes run the dedup/assignment pass and exchange
padded sub-batches with backend (or storage) peers over short-lived framed
connections, one per round.  Rounds advance when every established session
has reported or the round timer lapses; absentees are covered by injected
blanks, so the published sizes never shrink.

A plain-text metrics listener runs next to each server: connect, read
``name value`` lines, done.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
import time

import numpy as np

from . import crypto, ping
from .net import Session, peer_key, recv_frame, send_frame
from .nodes import PingCluster, PongCluster
from .protocol import (
    Kind,
    MalformedPacket,
    Params,
    check_body_len,
    pack_rows,
    parse_hello_plaintext,
    unpack_rows,
)
from .router import compute_bound, oblivious_bin_assign

log = logging.getLogger(__name__)


class _MetricsServer(threading.Thread):
    def __init__(self, host: str, port: int, supplier):
        super().__init__(daemon=True)
        self.supplier = supplier
        self.sock = socket.create_server((host, port))
        self.port = self.sock.getsockname()[1]

    def run(self):
        while True:
            try:
                conn, _ = self.sock.accept()
            except OSError:
                return
            try:
                text = "".join(f"{k} {v}\n" for k, v in self.supplier().items())
                conn.sendall(text.encode())
            finally:
                conn.close()

    def stop(self):
        self.sock.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        self.server.app.handle_connection(self.request)


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class RoundServer:
    """Common session handling and round pacing for client-facing nodes."""

    def __init__(
        self,
        params: Params,
        keypair: crypto.ServiceKeyPair,
        host: str,
        port: int,
        round_ms: int | None = None,
        expect_clients: int = 0,
        metrics_port: int = 0,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.keypair = keypair
        self.rng = rng or np.random.default_rng()
        self.round_ms = round_ms if round_ms is not None else params.round_duration
        self.expect_clients = expect_clients
        self.sessions: dict[int, Session] = {}
        self.inbox: dict[int, dict[Kind, dict[int, bytes]]] = {}
        self.current_round = 0
        self.stale_packets = 0
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._stop = threading.Event()
        self.tcp = _TcpServer((host, port), _Handler)
        self.tcp.app = self
        self.port = self.tcp.server_address[1]
        self.metrics = _MetricsServer(host, metrics_port, self.metrics_snapshot)
        self._threads: list[threading.Thread] = []

    # Role hooks -----------------------------------------------------------
    client_kinds: tuple[Kind, ...] = ()

    def on_hello(self, session: Session) -> None:
        pass

    def process_round(self, round_no: int, bodies: dict[Kind, dict[int, bytes]]) -> None:
        raise NotImplementedError

    def metrics_snapshot(self) -> dict:
        return {"round_ms": self.round_ms, "round": self.current_round}

    # Lifecycle ------------------------------------------------------------
    def start(self):
        t = threading.Thread(target=self.tcp.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)
        self.metrics.start()
        loop = threading.Thread(target=self._round_loop, daemon=True)
        loop.start()
        self._threads.append(loop)

    def stop(self):
        self._stop.set()
        with self._wake:
            self._wake.notify_all()
        self.tcp.shutdown()
        self.tcp.server_close()
        self.metrics.stop()

    # Connections ----------------------------------------------------------
    def handle_connection(self, sock: socket.socket):
        session: Session | None = None
        try:
            while not self._stop.is_set():
                got = recv_frame(sock)
                if got is None:
                    return
                kind, round_no, body = got
                if kind == Kind.HELLO:
                    cid, label, skey = parse_hello_plaintext(
                        crypto.unseal(body, self.keypair), self.params
                    )
                    session = Session(cid, label, skey, sock)
                    with self._lock:
                        self.sessions[cid] = session
                        self.on_hello(session)
                        session.send(
                            Kind.HELLO_OK,
                            self.current_round,
                            self.current_round.to_bytes(8, "big"),
                            rng=self.rng,
                        )
                elif kind in self.client_kinds and session is not None:
                    check_body_len(kind, body, self.params)
                    with self._wake:
                        if round_no != self.current_round:
                            self.stale_packets += 1
                            continue
                        slot = self.inbox.setdefault(round_no, {k: {} for k in self.client_kinds})
                        slot[kind][session.client_id] = session.open(body)
                        self._wake.notify_all()
                else:
                    self.handle_peer_frame(kind, round_no, body, sock)
        except (MalformedPacket, crypto.AuthError, ConnectionError, OSError) as exc:
            log.debug("connection dropped: %s", exc)
        finally:
            if session is not None:
                with self._lock:
                    self.sessions.pop(session.client_id, None)

    def handle_peer_frame(self, kind: Kind, round_no: int, body: bytes, sock) -> None:
        raise MalformedPacket(f"unexpected frame kind {kind}")

    def _complete(self, round_no: int) -> bool:
        if not self.sessions:
            return False
        if self.expect_clients and len(self.sessions) < self.expect_clients:
            return False
        slot = self.inbox.get(round_no)
        if slot is None:
            return False
        return all(set(slot[k]) >= set(self.sessions) for k in self.client_kinds)

    def _round_loop(self):
        while not self._stop.is_set():
            deadline = time.monotonic() + self.round_ms / 1000.0
            with self._wake:
                while not self._stop.is_set():
                    if self._complete(self.current_round):
                        break
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        break
                    self._wake.wait(timeout=remaining)
                if self._stop.is_set():
                    return
                if not self.sessions:
                    continue
                round_no = self.current_round
                bodies = self.inbox.pop(round_no, {k: {} for k in self.client_kinds})
            try:
                self.process_round(round_no, bodies)
            except Exception:
                log.exception("round %d failed", round_no)
            with self._wake:
                self.current_round += 1


class PingServer(RoundServer):
    """Client-facing notification node (single or entry role)."""

    client_kinds = (Kind.NOTF,)

    def __init__(self, *args, entry_id: int = 0, peers: list[str] | None = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.entry_id = entry_id
        self.peers = peers or []
        self.cluster = PingCluster(self.params, self.keypair, 1, 1, self.rng)
        self.counters = {"packets_in": 0, "digests_out": 0}

    def on_hello(self, session: Session) -> None:
        self.cluster.register(session.client_id, session.label, 0)

    def metrics_snapshot(self) -> dict:
        return {
            "packets_in": self.counters["packets_in"],
            "digests_out": self.counters["digests_out"],
            "round_ms": self.round_ms,
            "stale_packets": self.stale_packets,
        }

    def process_round(self, round_no: int, bodies: dict[Kind, dict[int, bytes]]) -> None:
        notfs = bodies[Kind.NOTF]
        self.counters["packets_in"] += len(notfs)
        if not self.peers:
            digests = self.cluster.round(notfs)
        else:
            digests = self._entry_round(notfs)
        for cid, vec in digests.items():
            sess = self.sessions.get(cid)
            if sess is not None:
                try:
                    sess.send(Kind.DIGEST, round_no, vec, rng=self.rng)
                    self.counters["digests_out"] += 1
                except OSError:
                    pass

    def _entry_round(self, notfs: dict[int, bytes]) -> dict[int, bytes]:
        """Dedup locally, scatter padded sub-batches, gather carrier rows."""
        from .obliv.hashing import fold_words
        from .protocol import words_to_vec

        lay = self.cluster.layout
        reg = self.cluster.registries[0]
        rows = []
        for cid in reg.ordered_ids():
            ct = notfs.get(cid)
            if ct is None:
                rows.append(ping.blank_row(lay, self.rng, entry=self.entry_id))
            else:
                rows.append(
                    ping.notf_row(ct, self.keypair, self.params, lay, self.rng, entry=self.entry_id)
                )
        pkts = np.concatenate(
            [
                np.asarray(rows, dtype=np.uint64).reshape(len(rows), lay.width),
                ping.carrier_rows(reg, lay, entry=self.entry_id),
            ]
        )
        folded = ping.aggregate(pkts, lay, dedup=True, rng=self.rng)
        labels = folded[:, lay.label0 : lay.label0 + lay.label_words]
        nb = len(self.peers)
        folded[:, lay.bin] = fold_words(labels, seed=0x9C0) % np.uint64(nb)
        zb = compute_bound(folded.shape[0], nb, self.params.lam)
        subs = oblivious_bin_assign(folded, lay.bin, lay.dummy, nb, zb)
        key = peer_key(self.keypair.secret)
        digests: dict[int, bytes] = {}
        ids = reg.ordered_ids()
        for b, addr in enumerate(self.peers):
            host, port = addr.rsplit(":", 1)
            with socket.create_connection((host, int(port)), timeout=30) as s:
                body = crypto.aead_encrypt(key, pack_rows(self.entry_id, subs[b]), rng=self.rng)
                send_frame(s, Kind.PING_SUB, self.cluster.counters["rounds"], body)
                got = recv_frame(s)
                if got is None or got[0] != Kind.PING_SUB_RESP:
                    raise MalformedPacket("backend did not answer sub-batch")
                _, carriers = unpack_rows(crypto.aead_decrypt(key, got[2]))
            for row in carriers.reshape(-1, lay.width):
                if int(row[lay.entry]) != self.entry_id:
                    continue
                slot = int(row[lay.slot])
                vec = words_to_vec(row[lay.vec0 : lay.vec0 + lay.vec_words], self.params)
                digests[ids[slot]] = vec
        self.cluster.counters["rounds"] += 1
        return digests


class PingBackend:
    """Aggregation backend: merges entry sub-batches, returns carrier rows."""

    def __init__(
        self,
        params: Params,
        keypair: crypto.ServiceKeyPair,
        host: str,
        port: int,
        expect_entries: int = 1,
        metrics_port: int = 0,
        rng: np.random.Generator | None = None,
    ):
        self.params = params
        self.keypair = keypair
        self.expect_entries = expect_entries
        self.rng = rng or np.random.default_rng()
        self.layout = ping.PingLayout.for_params(params)
        self._key = peer_key(keypair.secret)
        self._lock = threading.Condition()
        self._pending: dict[int, dict[int, np.ndarray]] = {}
        self._results: dict[int, dict[int, np.ndarray]] = {}
        self.counters = {"sub_batches": 0, "rounds": 0}
        self.tcp = _TcpServer((host, port), _Handler)
        self.tcp.app = self
        self.port = self.tcp.server_address[1]
        self.metrics = _MetricsServer(host, metrics_port, lambda: dict(self.counters))

    def start(self):
        threading.Thread(target=self.tcp.serve_forever, daemon=True).start()
        self.metrics.start()

    def stop(self):
        self.tcp.shutdown()
        self.tcp.server_close()
        self.metrics.stop()

    def handle_connection(self, sock: socket.socket):
        got = recv_frame(sock)
        if got is None:
            return
        kind, round_no, body = got
        if kind != Kind.PING_SUB:
            return
        entry_id, rows = unpack_rows(crypto.aead_decrypt(self._key, body))
        lay = self.layout
        with self._lock:
            slot = self._pending.setdefault(round_no, {})
            slot[entry_id] = rows.reshape(-1, lay.width)
            self.counters["sub_batches"] += 1
            if len(slot) >= self.expect_entries:
                merged = np.concatenate([slot[e] for e in sorted(slot)])
                folded = ping.aggregate(merged, lay, dedup=False, rng=self.rng)
                n_carriers = int(folded[:, lay.carrier].sum())
                carriers = ping.extract_carriers(folded, n_carriers, lay)
                per_entry: dict[int, list] = {e: [] for e in slot}
                for row in carriers:
                    per_entry.setdefault(int(row[lay.entry]), []).append(row)
                self._results[round_no] = {
                    e: (np.stack(v) if v else np.zeros((0, lay.width), dtype=np.uint64))
                    for e, v in per_entry.items()
                }
                self._pending.pop(round_no, None)
                self.counters["rounds"] += 1
                self._lock.notify_all()
            else:
                while round_no not in self._results:
                    self._lock.wait(timeout=60)
            mine = self._results[round_no].get(
                entry_id, np.zeros((0, lay.width), dtype=np.uint64)
            )
        resp = crypto.aead_encrypt(self._key, pack_rows(entry_id, mine), rng=self.rng)
        send_frame(sock, Kind.PING_SUB_RESP, round_no, resp)


class PongServer(RoundServer):
    """Client-facing store node (single role: entry + storage in one)."""

    client_kinds = (Kind.MSG, Kind.READ)

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.cluster = PongCluster(self.params, self.keypair, 1, 1, self.rng)

    def on_hello(self, session: Session) -> None:
        self.cluster.register(session.client_id, 0)

    def metrics_snapshot(self) -> dict:
        st = self.cluster.stores[0]
        return {
            "writes": st.counters["writes"],
            "reads": st.counters["reads"],
            "bins": len(st.buf),
            "tables": len(st.tables),
            "merges": st.counters["merges"],
            "rebuilds": st.counters["rebuilds"],
            "stale_packets": self.stale_packets,
        }

    def process_round(self, round_no: int, bodies: dict[Kind, dict[int, bytes]]) -> None:
        responses = self.cluster.round(bodies[Kind.MSG], bodies[Kind.READ])
        from .protocol import build_response_plaintext

        for cid, sess in list(self.sessions.items()):
            resp = responses.get(cid)
            if resp is None:
                pt = self.rng.bytes(8 + self.params.enc_msg_len)
            else:
                pt = build_response_plaintext(resp[0], resp[1], self.params)
            try:
                sess.send(Kind.RESPONSE, round_no, pt, rng=self.rng)
            except OSError:
                pass
