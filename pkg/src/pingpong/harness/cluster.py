"""Full-protocol cluster simulation over a virtual clock.

Runs real clients against in-process service clusters -- every packet goes
through the real sealing, aggregation, storage, and parsing paths -- with a
seeded RNG so runs are bit-reproducible.  Each round asserts the traffic
uniformity laws (exactly one packet of each kind per connected client) and
the result carries a delivery audit against the recorded send log.

Workload rounds enqueue at most one message per client per round; the run
then drains until every outgoing queue and token queue is empty, so the
send log and the inboxes are comparable multisets.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .. import crypto
from ..client import Client
from ..nodes import PingCluster, PongCluster
from ..protocol import Params
from ..obliv import backend

_LABEL_SEED = 0xC11E


@dataclass
class ClusterConfig:
    clients: int = 20
    rounds: int = 10
    backends: int = 1
    entries: int = 1
    seed: int = 0
    msg_prob: float = 0.35
    friends_per_client: int = 8
    params: Params | None = None
    drain: bool = True
    max_total_rounds: int = 5000
    hop_latency_ms: int = 100  # added round-trip latency per exchange


@dataclass
class SimResult:
    metrics: dict
    violations: list[str]
    sent: list[tuple[int, int, int, bytes]]  # (round, src, dst, text)
    inboxes: dict[int, list[tuple[int, int, bytes]]]  # cid -> (round, sender, text)
    runtime_s: float = 0.0


def _build_friendships(
    clients: dict[int, Client], per_client: int, rng: np.random.Generator
) -> None:
    ids = sorted(clients)
    for cid in ids:
        have = len(clients[cid].friends)
        want = per_client - have
        if want <= 0:
            continue
        others = [o for o in ids if o != cid and o not in clients[cid].friends]
        rng.shuffle(others)
        for other in others[:want]:
            if len(clients[other].friends) >= clients[other].params.max_friends:
                continue
            if len(clients[cid].friends) >= clients[cid].params.max_friends:
                break
            sk = crypto.gen_sym_key(rng)
            _, token_for_me = clients[cid].add_friend(other, sk)
            _, token_for_them = clients[other].add_friend(cid, sk)
            clients[cid].set_friend_token(other, token_for_them)
            clients[other].set_friend_token(cid, token_for_me)


def run_cluster_sim(cfg: ClusterConfig) -> SimResult:
    """Simulate cfg.rounds workload rounds plus drain; audit every law."""
    t_start = time.monotonic()
    params = cfg.params or Params()
    master = np.random.default_rng(cfg.seed)
    ping_kp = crypto.ServiceKeyPair.generate(master)
    pong_kp = crypto.ServiceKeyPair.generate(master)
    ping_cluster = PingCluster(
        params, ping_kp, cfg.entries, cfg.backends, np.random.default_rng(master.integers(2**63))
    )
    pong_cluster = PongCluster(
        params, pong_kp, cfg.entries, cfg.backends, np.random.default_rng(master.integers(2**63))
    )
    clients = {
        cid: Client(
            cid,
            params,
            ping_kp.public,
            pong_kp.public,
            rng=np.random.default_rng(master.integers(2**63)),
        )
        for cid in range(cfg.clients)
    }
    for c in clients.values():
        ping_cluster.register(c.id, c.label)
        pong_cluster.register(c.id)
    _build_friendships(clients, cfg.friends_per_client, master)

    workload_rng = np.random.default_rng(master.integers(2**63))
    violations: list[str] = []
    sent: list[tuple[int, int, int, bytes]] = []
    deliveries: list[tuple[int, int, int, bytes]] = []  # (round, owner, sender, text)
    latency_rounds: list[int] = []
    send_round: dict[tuple[int, int, bytes], int] = {}
    seq = 0
    round_no = 0
    packets = Counter()

    while True:
        in_workload = round_no < cfg.rounds
        if in_workload:
            for cid, c in clients.items():
                if not c.friends or workload_rng.random() >= cfg.msg_prob:
                    continue
                friend_ids = sorted(c.friends)
                dst = int(friend_ids[workload_rng.integers(len(friend_ids))])
                text = f"r{round_no} {cid}->{dst} #{seq}".encode()
                seq += 1
                c.enqueue_message(dst, text)
                sent.append((round_no, cid, dst, text))
                send_round[(cid, dst, text)] = round_no

        notfs: dict[int, bytes] = {}
        msgs: dict[int, bytes] = {}
        reads: dict[int, bytes] = {}
        for cid, c in clients.items():
            n_pkt, m_pkt = c.tick_send()
            notfs[cid] = n_pkt
            msgs[cid] = m_pkt
            reads[cid] = c.make_read()
        packets["notf"] += len(notfs)
        packets["msg"] += len(msgs)
        packets["read"] += len(reads)

        digests = ping_cluster.round(notfs)
        responses = pong_cluster.round(msgs, reads)

        if set(digests) != set(clients):
            violations.append(f"round {round_no}: digest set mismatch")
        digest_count = Counter()
        for cid in digests:
            digest_count[cid] += 1
        if any(v != 1 for v in digest_count.values()):
            violations.append(f"round {round_no}: duplicate digests")
        packets["digest"] += len(digests)

        for cid, c in clients.items():
            resp = responses.get(cid)
            packets["response"] += 1  # transport sends a packet either way
            if resp is not None:
                entry = c.handle_response(resp[0], resp[1], round_no)
                if entry is not None:
                    deliveries.append((round_no, cid, entry.sender, entry.text))
                    sr = send_round.get((entry.sender, cid, entry.text))
                    if sr is None:
                        violations.append(
                            f"round {round_no}: client {cid} received unsent message"
                        )
                    else:
                        latency_rounds.append(round_no - sr)
            else:
                c.pending_read = None
            c.parse_notf(digests[cid])

        round_no += 1
        pending = sum(c.pending_work for c in clients.values())
        if round_no >= cfg.rounds and (not cfg.drain or pending == 0):
            break
        if round_no >= cfg.max_total_rounds:
            violations.append(f"drain did not finish within {cfg.max_total_rounds} rounds")
            break

    # Delivery audit: exactly-once, correct recipient, correct plaintext.
    uniformity_violations = len(violations)
    sent_multiset = Counter((src, dst, text) for (_, src, dst, text) in sent)
    recv_multiset = Counter((sender, owner, text) for (_, owner, sender, text) in deliveries)
    missing = sent_multiset - recv_multiset
    extra = recv_multiset - sent_multiset
    duplicates = sum(v - 1 for v in recv_multiset.values() if v > 1)

    round_ms = params.round_duration
    lat_ms = [r * round_ms + cfg.hop_latency_ms for r in latency_rounds]
    metrics = {
        "clients": cfg.clients,
        "entries": cfg.entries,
        "backends": cfg.backends,
        "seed": cfg.seed,
        "workload_rounds": cfg.rounds,
        "total_rounds": round_no,
        "sent": sum(sent_multiset.values()),
        "delivered": sum(recv_multiset.values()),
        "missing": sum(missing.values()),
        "unexpected": sum(extra.values()),
        "duplicates": duplicates,
        "uniformity_violations": uniformity_violations,
        "packets": dict(packets),
        "avg_latency_ms": (sum(lat_ms) / len(lat_ms)) if lat_ms else 0.0,
        "max_latency_ms": max(lat_ms) if lat_ms else 0,
        "ping": dict(ping_cluster.counters),
        "pong": dict(pong_cluster.counters),
        "store": {
            f"node{i}": dict(st.counters) for i, st in enumerate(pong_cluster.stores)
        },
        "kernel_backend": backend.backend_name(),
    }
    if missing:
        violations.append(f"{sum(missing.values())} sent messages were never delivered")
    if extra:
        violations.append(f"{sum(extra.values())} deliveries did not match any send")
    if duplicates:
        violations.append(f"{duplicates} duplicate deliveries")
    inboxes = {
        cid: [(e.round, e.sender, e.text) for e in c.inbox] for cid, c in clients.items()
    }
    return SimResult(
        metrics=metrics,
        violations=violations,
        sent=sent,
        inboxes=inboxes,
        runtime_s=time.monotonic() - t_start,
    )
