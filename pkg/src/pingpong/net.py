"""Framed TCP transport with sealed session establishment.

A client seals (id, label, session key) to the service public key in a HELLO
frame; all subsequent bodies on that connection are AEAD-wrapped under the
session key.  Node-to-node sub-batch frames are AEAD-wrapped under a key
derived from the shared service secret (stand-in for mutually attested
channels).  Frames are ``kind(1) || round(8) || len(4) || body``.
"""

from __future__ import annotations

import hashlib
import socket
import struct

import numpy as np

from . import crypto
from .protocol import Kind, MalformedPacket, pack_frame

_HDR = struct.Struct(">BQI")


def send_frame(sock: socket.socket, kind: Kind, round_no: int, body: bytes) -> None:
    sock.sendall(pack_frame(kind, round_no, body))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def recv_frame(sock: socket.socket) -> tuple[Kind, int, bytes] | None:
    """One frame off the stream, or None on orderly EOF."""
    hdr = _recv_exact(sock, _HDR.size)
    if hdr is None:
        return None
    kind_raw, round_no, blen = _HDR.unpack(hdr)
    try:
        kind = Kind(kind_raw)
    except ValueError as exc:
        raise MalformedPacket(f"unknown frame kind {kind_raw}") from exc
    if blen > (1 << 26):
        raise MalformedPacket("frame too large")
    body = _recv_exact(sock, blen) if blen else b""
    if body is None:
        raise MalformedPacket("connection closed mid-frame")
    return kind, round_no, body


def peer_key(service_secret: bytes) -> bytes:
    """Symmetric key for node-to-node frames, derived from the shared secret."""
    return hashlib.sha256(b"pingpong-peer-v1" + service_secret).digest()


class Session:
    """Server-side view of one client connection."""

    def __init__(self, client_id: int, label: bytes, key: bytes, sock: socket.socket):
        self.client_id = client_id
        self.label = label
        self.key = key
        self.sock = sock

    def send(self, kind: Kind, round_no: int, plaintext: bytes, rng=None) -> None:
        send_frame(self.sock, kind, round_no, crypto.aead_encrypt(self.key, plaintext, rng=rng))

    def open(self, body: bytes) -> bytes:
        return crypto.aead_decrypt(self.key, body)


def client_hello(
    sock: socket.socket,
    client_id: int,
    label: bytes,
    service_pub: bytes,
    params,
    rng: np.random.Generator | None = None,
) -> tuple[bytes, int]:
    """Establish a session; returns (session key, server's current round)."""
    from .protocol import build_hello_plaintext

    session_key = crypto.gen_sym_key(rng)
    sealed = crypto.seal(build_hello_plaintext(client_id, label, session_key, params), service_pub, rng)
    send_frame(sock, Kind.HELLO, 0, sealed)
    got = recv_frame(sock)
    if got is None or got[0] != Kind.HELLO_OK:
        raise MalformedPacket("no HELLO_OK from server")
    pt = crypto.aead_decrypt(session_key, got[2])
    return session_key, int.from_bytes(pt, "big")
