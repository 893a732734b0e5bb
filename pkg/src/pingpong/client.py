"""Client-side protocol: friend records, packet generation, token schedule.

A connected client emits exactly one notification, one message packet, and
one read request per round, real or not, so its traffic shape carries no
information.  Retrieval tokens are derived symmetrically from the pair
secret and a per-direction counter: the sender computes the token when
writing, the receiver recomputes it from the notification digest, and the
store never sees which is which.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import crypto
from .protocol import (
    MalformedPacket,
    Params,
    build_msg_plaintext,
    build_notf_plaintext,
    build_read_plaintext,
    one_hot_vec,
    vec_set_bits,
)

log = logging.getLogger(__name__)


@dataclass
class FriendRecord:
    """One buddy: identity, pair secret, counters, their sealed notify token."""

    id: int
    idx: int  # this friend's bit in my notification vector
    sk: bytes
    send_counter: int = 0
    recv_counter: int = 0
    notf_token: bytes | None = None  # sealed one-hot for notifying this buddy


@dataclass
class InboxEntry:
    round: int
    sender: int
    text: bytes


@dataclass
class _Outgoing:
    buddy_id: int
    text: bytes


class TokenQueue:
    """Pending retrieval tokens; FIFO unless a priority key is supplied."""

    def __init__(self, priority_key=None):
        self._q: deque[tuple[int, int]] = deque()  # (token, buddy idx)
        self._priority_key = priority_key

    def push(self, token: int, buddy_idx: int) -> None:
        self._q.append((token, buddy_idx))
        if self._priority_key is not None:
            self._q = deque(sorted(self._q, key=self._priority_key))

    def pop(self) -> tuple[int, int] | None:
        return self._q.popleft() if self._q else None

    def __len__(self) -> int:
        return len(self._q)


class Client:
    """Local protocol state machine; transport is supplied by the caller."""

    def __init__(
        self,
        client_id: int,
        params: Params,
        ping_pub: bytes,
        pong_pub: bytes,
        label: bytes | None = None,
        rng: np.random.Generator | None = None,
        priority_key=None,
    ):
        self.id = client_id
        self.params = params
        self.ping_pub = ping_pub
        self.pong_pub = pong_pub
        self.rng = rng or np.random.default_rng()
        self.label = label if label is not None else self.rng.bytes(params.label_bytes)
        if len(self.label) != params.label_bytes:
            raise ValueError("bad label length")
        self.friends: dict[int, FriendRecord] = {}
        self._by_idx: dict[int, FriendRecord] = {}
        self.token_queue = TokenQueue(priority_key)
        self.outgoing: deque[_Outgoing] = deque()
        self.inbox: list[InboxEntry] = []
        self.pending_read: tuple[int, bool] | None = None  # (token, dummy)
        self._lock = threading.RLock()

    # Friendship ----------------------------------------------------------
    def add_friend(self, friend_id: int, sk: bytes) -> tuple[int, bytes]:
        """Allocate a vector slot and mint the sealed token to hand over.

        The returned token lets the new friend set exactly my slot for them;
        they store it and use it verbatim in their notifications.
        """
        with self._lock:
            if friend_id in self.friends:
                raise ValueError(f"friend {friend_id} already present")
            if len(self.friends) >= self.params.max_friends:
                raise ValueError(f"friend list full ({self.params.max_friends})")
            idx = 0
            while idx in self._by_idx:
                idx += 1
            rec = FriendRecord(id=friend_id, idx=idx, sk=sk)
            self.friends[friend_id] = rec
            self._by_idx[idx] = rec
            pt = build_notf_plaintext(one_hot_vec(idx, self.params), self.label, self.params)
            return idx, crypto.seal(pt, self.ping_pub, self.rng)

    def set_friend_token(self, friend_id: int, token: bytes) -> None:
        if len(token) != self.params.notf_packet_len:
            raise ValueError("sealed token has wrong length")
        with self._lock:
            self.friends[friend_id].notf_token = token

    # Packet generation (Fig.-style local functions) ------------------------
    def gen_notf(self, buddy: FriendRecord | None) -> bytes:
        """Sealed notification body: the buddy's token, or an idle blank."""
        if buddy is not None:
            if buddy.notf_token is None:
                raise ValueError(f"no notification token installed for {buddy.id}")
            return buddy.notf_token
        pt = build_notf_plaintext(
            b"\x00" * self.params.vec_bytes, b"\x00" * self.params.label_bytes, self.params
        )
        return crypto.seal(pt, self.ping_pub, self.rng)

    def gen_msg(self, buddy: FriendRecord | None, msg: bytes | None) -> bytes:
        """Sealed message packet; dummy when no buddy, same length either way."""
        p = self.params
        if buddy is not None:
            if msg is None or len(msg) > p.msg_len:
                raise ValueError(f"message must be at most {p.msg_len} bytes")
            with self._lock:
                token = crypto.derive_token(buddy.sk, buddy.id, self.id, buddy.send_counter)
                buddy.send_counter += 1  # optimistic: batches never expire mid-run
            body = len(msg).to_bytes(2, "big") + msg + b"\x00" * (p.msg_len - len(msg))
            enc = crypto.aead_encrypt(buddy.sk, body, ad=token.to_bytes(8, "big"), rng=self.rng)
            pt = build_msg_plaintext(token, False, self.id, enc, p)
        else:
            pt = build_msg_plaintext(
                crypto.random_token(self.rng), True, self.id, self.rng.bytes(p.enc_msg_len), p
            )
        return crypto.seal(pt, self.pong_pub, self.rng)

    def parse_notf(self, vec: bytes) -> list[int]:
        """Digest vector -> retrieval tokens, advancing receive counters."""
        tokens = []
        with self._lock:
            for bit in vec_set_bits(vec):
                rec = self._by_idx.get(bit)
                if rec is None:
                    log.warning("digest bit %d has no friend; ignoring", bit)
                    continue
                token = crypto.derive_token(rec.sk, self.id, rec.id, rec.recv_counter)
                rec.recv_counter += 1
                self.token_queue.push(token, bit)
                tokens.append(token)
        return tokens

    def make_read(self) -> bytes:
        """Sealed read request for the next queued token (dummy if none)."""
        with self._lock:
            item = self.token_queue.pop()
        if item is None:
            token, dummy = crypto.random_token(self.rng), True
        else:
            token, dummy = item[0], False
        self.pending_read = (token, dummy)
        return crypto.seal(build_read_plaintext(token, dummy), self.pong_pub, self.rng)

    def handle_response(self, sender_id: int, enc_msg: bytes, round_no: int) -> InboxEntry | None:
        """Decrypt a store response against the pending token; drop silently
        on any mismatch (dummy read, dummy response, unknown sender)."""
        pending = self.pending_read
        self.pending_read = None
        if pending is None or pending[1]:
            return None
        token = pending[0]
        rec = self.friends.get(sender_id)
        if rec is None:
            return None
        try:
            body = crypto.aead_decrypt(rec.sk, enc_msg, ad=token.to_bytes(8, "big"))
        except crypto.AuthError:
            return None
        if len(body) != 2 + self.params.msg_len:
            return None
        msg_len = int.from_bytes(body[:2], "big")
        if msg_len > self.params.msg_len:
            return None
        entry = InboxEntry(round=round_no, sender=sender_id, text=body[2 : 2 + msg_len])
        with self._lock:
            self.inbox.append(entry)
        return entry

    # Round loop helpers ----------------------------------------------------
    def enqueue_message(self, buddy_id: int, text: bytes) -> None:
        if buddy_id not in self.friends:
            raise ValueError(f"{buddy_id} is not a friend")
        if len(text) > self.params.msg_len:
            raise ValueError("message too long")
        with self._lock:
            self.outgoing.append(_Outgoing(buddy_id, text))

    def tick_send(self) -> tuple[bytes, bytes]:
        """One round's uplink: (notification body, message body).

        Pops at most one queued outgoing message; emits idle/dummy packets
        otherwise, identical in shape.
        """
        with self._lock:
            item = self.outgoing.popleft() if self.outgoing else None
        if item is None:
            return self.gen_notf(None), self.gen_msg(None, None)
        buddy = self.friends[item.buddy_id]
        return self.gen_notf(buddy), self.gen_msg(buddy, item.text)

    @property
    def pending_work(self) -> int:
        with self._lock:
            return len(self.outgoing) + len(self.token_queue)


# Friends-file round trip ----------------------------------------------------


def save_friends_file(path: str, client: Client) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for rec in client.friends.values():
            token_hex = rec.notf_token.hex() if rec.notf_token else ""
            fh.write(f"{rec.id} {rec.sk.hex()} {token_hex} {rec.idx}\n")


def load_friends_file(path: str, client: Client) -> int:
    """Install friend rows of the form ``id hex_sk hex_sealed_token idx``."""
    count = 0
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise MalformedPacket(f"{path}:{lineno}: expected 4 fields")
            fid, sk_hex, token_hex, idx = int(parts[0]), parts[1], parts[2], int(parts[3])
            rec = FriendRecord(id=fid, idx=idx, sk=bytes.fromhex(sk_hex))
            if token_hex:
                rec.notf_token = bytes.fromhex(token_hex)
            client.friends[fid] = rec
            client._by_idx[idx] = rec
            count += 1
    return count
