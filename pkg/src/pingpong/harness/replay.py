"""Replay of real messaging metadata under two delivery frameworks.

``simulate_dial`` models coordinate-then-converse delivery: each recipient
handles one conversation (one sender) per fixed-length window; messages from
other senders wait for the next free window.  ``simulate_notify`` models the
notify-then-fetch flow: a fixed processing latency per message plus the
sub-round residual until the recipient's next pickup, one pickup per round.

Traces are SNAP-format edge lists: whitespace-separated ``SRC DST UNIXTIME``
lines, sorted by timestamp at load.
"""

from __future__ import annotations

import importlib.resources
import os
import urllib.request
from dataclasses import dataclass

import numpy as np

COLLEGEMSG_URL = "https://snap.stanford.edu/data/CollegeMsg.txt.gz"
SYNTHETIC_TRACE = "synthetic_trace.txt"


class TraceParseError(Exception):
    pass


@dataclass
class MsgTrace:
    senders: np.ndarray  # dense ids, int64
    receivers: np.ndarray
    times: np.ndarray  # float seconds, non-decreasing
    user_count: int

    @property
    def message_count(self) -> int:
        return int(self.senders.shape[0])


def load_trace(path: str) -> MsgTrace:
    """Parse and id-map a SNAP trace file; stable-sorted by timestamp."""
    senders, receivers, times = [], [], []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith(("#", "%")):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TraceParseError(f"{path}:{lineno}: expected 'SRC DST UNIXTIME'")
            try:
                senders.append(int(parts[0]))
                receivers.append(int(parts[1]))
                times.append(float(parts[2]))
            except ValueError as exc:
                raise TraceParseError(f"{path}:{lineno}: non-numeric field") from exc
    if not senders:
        return MsgTrace(
            senders=np.empty(0, dtype=np.int64),
            receivers=np.empty(0, dtype=np.int64),
            times=np.empty(0, dtype=np.float64),
            user_count=0,
        )
    s = np.asarray(senders, dtype=np.int64)
    r = np.asarray(receivers, dtype=np.int64)
    t = np.asarray(times, dtype=np.float64)
    order = np.argsort(t, kind="stable")
    s, r, t = s[order], r[order], t[order]
    ids, inverse = np.unique(np.concatenate([s, r]), return_inverse=True)
    return MsgTrace(
        senders=inverse[: len(s)].astype(np.int64),
        receivers=inverse[len(s) :].astype(np.int64),
        times=t,
        user_count=int(ids.shape[0]),
    )


def synthetic_trace_path() -> str:
    """Bundled small trace with bursty recipient contention for offline runs."""
    res = importlib.resources.files("pingpong.harness") / "data" / SYNTHETIC_TRACE
    return str(res)


def fetch_collegemsg(dest: str, url: str = COLLEGEMSG_URL) -> str:
    """Download and decompress the public CollegeMsg dataset to ``dest``."""
    import gzip

    os.makedirs(os.path.dirname(dest) or ".", exist_ok=True)
    gz_path = dest + ".gz"
    urllib.request.urlretrieve(url, gz_path)
    with gzip.open(gz_path, "rb") as src, open(dest, "wb") as out:
        out.write(src.read())
    os.unlink(gz_path)
    return dest


def simulate_dial(
    trace: MsgTrace,
    window_s: float,
    dial_latency_s: float = 0.0,
    conv_latency_s: float = 0.5,
) -> dict:
    """Recipient-side single-conversation queueing.

    A conversation is one (sender, recipient) occupancy of one window.  A
    message joins its sender's scheduled window if one is still pending or
    active; otherwise it opens a new window at the recipient's next free
    time.  Conversations that could not start on arrival count as conflicts.
    """
    latencies = np.empty(trace.message_count, dtype=np.float64)
    sched_end: dict[int, float] = {}
    own_window: dict[tuple[int, int], tuple[float, float]] = {}
    conversations = 0
    conflicted = 0
    for i in range(trace.message_count):
        s = int(trace.senders[i])
        r = int(trace.receivers[i])
        t = float(trace.times[i])
        win = own_window.get((s, r))
        if win is not None and t < win[1]:
            start = win[0]
            deliver = max(t, start) + dial_latency_s + conv_latency_s
        else:
            start = max(t, sched_end.get(r, t))
            end = start + window_s
            own_window[(s, r)] = (start, end)
            sched_end[r] = max(sched_end.get(r, 0.0), end)
            conversations += 1
            if start > t:
                conflicted += 1
            deliver = start + dial_latency_s + conv_latency_s
        latencies[i] = deliver - t
    return {
        "framework": "dial",
        "window_s": window_s,
        "messages": trace.message_count,
        "conversations": conversations,
        "conflict_fraction": (conflicted / conversations) if conversations else 0.0,
        "avg_latency_s": float(latencies.mean()) if latencies.size else 0.0,
        "latencies": latencies,
    }


def simulate_notify(
    trace: MsgTrace,
    proc_latency_s: float = 3.0,
    round_s: float = 0.5,
    seed: int = 0,
) -> dict:
    """Fixed per-message processing plus round-aligned pickup.

    Each recipient fetches one message per round on a privately phased round
    grid, so a message waits the processing latency plus a residual uniform
    in [0, round) -- and, in bursts, whole extra rounds of queueing.
    ``round_s=0`` degenerates to pure processing latency.
    """
    rng = np.random.default_rng(seed)
    latencies = np.empty(trace.message_count, dtype=np.float64)
    phase: dict[int, float] = {}
    next_free_slot: dict[int, int] = {}
    for i in range(trace.message_count):
        r = int(trace.receivers[i])
        t = float(trace.times[i])
        arrival = t + proc_latency_s
        if round_s <= 0:
            latencies[i] = proc_latency_s
            continue
        ph = phase.setdefault(r, float(rng.random()) * round_s)
        slot = int(np.ceil((arrival - ph) / round_s))
        slot = max(slot, next_free_slot.get(r, slot))
        next_free_slot[r] = slot + 1
        deliver = ph + slot * round_s
        latencies[i] = deliver - t
    return {
        "framework": "notify",
        "round_s": round_s,
        "messages": trace.message_count,
        "avg_latency_s": float(latencies.mean()) if latencies.size else 0.0,
        "latencies": latencies,
    }
