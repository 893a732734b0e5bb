"""Wire formats, deployment parameters, and packet framing.

Every packet kind has a constant body length for a given deployment; traffic
uniformity starts here.  Integers are big-endian on the wire.  Frames are
``kind(1) || round(8) || body_len(4) || body`` over any reliable byte stream.

Notification vectors are byte-packed bit vectors: bit ``b`` lives in byte
``b // 8`` at position ``b % 8`` (LSB first), equivalently in little-endian
word ``b // 64``.
"""

from __future__ import annotations

import configparser
import math
import os
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .crypto import AEAD_OVERHEAD, SEAL_OVERHEAD


class MalformedPacket(Exception):
    """Wrong length, kind, or framing; servers drop and log."""


class Kind(IntEnum):
    HELLO = 1
    HELLO_OK = 2
    NOTF = 3
    MSG = 4
    READ = 5
    DIGEST = 6
    RESPONSE = 7
    PING_SUB = 8
    PING_SUB_RESP = 9
    PONG_SUB_WRITE = 10
    PONG_SUB_READ = 11
    PONG_SUB_RESP = 12
    METRICS = 13


@dataclass(frozen=True)
class Params:
    """Deployment parameters shared by every node.

    ``m`` of 0 means "derive": floor(sqrt(N / k)), the table size that
    minimizes the per-read container count at capacity.
    """

    max_friends: int = 512
    notf_packet_len: int = 256
    label_len: int = 256  # bits
    token_len: int = 64  # bits
    msg_len: int = 256
    k: int = 4  # batches consolidated per bin
    N: int = 8640  # stored-batch capacity before expiry
    m: int = 0  # bin groups merged per table (0 = sqrt(N/k))
    lam: int = 128
    epsilon_oht: float = 0.75
    Z: int = 17
    round_duration: int = 1000  # ms
    max_batch: int = 5000  # c: per-node write/read batch ceiling

    def __post_init__(self):
        if self.max_friends <= 0 or self.max_friends % 8 != 0:
            raise ValueError("max_friends must be a positive multiple of 8")
        if self.label_len % 64 != 0 or self.label_len <= 0:
            raise ValueError("label_len must be a positive multiple of 64 bits")
        if self.token_len != 64:
            raise ValueError("token_len is fixed at 64 bits")
        if self.k < 1 or self.N < 1:
            raise ValueError("k and N must be positive")
        if self.m_eff * self.k > self.N:
            raise ValueError("m*k must not exceed N")
        if not (0 < self.epsilon_oht <= 1):
            raise ValueError("epsilon_oht must be in (0, 1]")
        if self.Z < 1 or self.lam < 1:
            raise ValueError("Z and lambda must be positive")
        if self.notf_packet_len < self.vec_bytes + self.label_bytes + SEAL_OVERHEAD:
            raise ValueError("notf_packet_len too small for vector + label + sealing")

    # Derived sizes -------------------------------------------------------
    @property
    def m_eff(self) -> int:
        return self.m if self.m > 0 else math.isqrt(self.N // self.k)

    @property
    def vec_bytes(self) -> int:
        return self.max_friends // 8

    @property
    def vec_words(self) -> int:
        return (self.max_friends + 63) // 64

    @property
    def label_bytes(self) -> int:
        return self.label_len // 8

    @property
    def label_words(self) -> int:
        return self.label_len // 64

    @property
    def notf_pt_len(self) -> int:
        return self.notf_packet_len - SEAL_OVERHEAD

    @property
    def enc_msg_len(self) -> int:
        # u16 length prefix + padded content, AEAD-wrapped
        return AEAD_OVERHEAD + 2 + self.msg_len

    @property
    def body_len(self) -> dict[Kind, int]:
        # Client-facing bodies are session-AEAD wrapped on the wire; MSG and
        # READ additionally carry a service-sealed payload inside.
        sealed_msg_pt = 8 + 1 + 8 + self.enc_msg_len
        return {
            Kind.HELLO: SEAL_OVERHEAD + 8 + self.label_bytes + 32,
            Kind.HELLO_OK: AEAD_OVERHEAD + 8,
            Kind.NOTF: AEAD_OVERHEAD + self.notf_packet_len,
            Kind.MSG: AEAD_OVERHEAD + SEAL_OVERHEAD + sealed_msg_pt,
            Kind.READ: AEAD_OVERHEAD + SEAL_OVERHEAD + 8 + 1,
            Kind.DIGEST: AEAD_OVERHEAD + self.vec_bytes,
            Kind.RESPONSE: AEAD_OVERHEAD + 8 + self.enc_msg_len,
        }

    @property
    def value_words(self) -> int:
        # stored value: sender id word + encrypted message body words
        return 1 + (self.enc_msg_len + 7) // 8


DEFAULT_PARAMS = Params()

_INT_FIELDS = (
    "max_friends",
    "notf_packet_len",
    "label_len",
    "token_len",
    "msg_len",
    "k",
    "N",
    "m",
    "lam",
    "Z",
    "round_duration",
    "max_batch",
)


def load_params(path: str | None = None, env: bool = True, **overrides) -> Params:
    """Params from an INI file ([pingpong] section), PINGPONG_* env, kwargs."""
    values: dict = {}
    if path:
        cp = configparser.ConfigParser()
        read = cp.read(path)
        if not read:
            raise FileNotFoundError(path)
        if cp.has_section("pingpong"):
            for key, raw in cp.items("pingpong"):
                values[key.lower()] = raw
    if env:
        for f in _INT_FIELDS + ("epsilon_oht", "lambda"):
            raw = os.environ.get(f"PINGPONG_{f.upper()}")
            if raw is not None:
                values[f] = raw
    values.update({k: v for k, v in overrides.items() if v is not None})
    if "lambda" in values:  # config spells the security parameter "lambda"
        values["lam"] = values.pop("lambda")
    kwargs: dict = {}
    for key, raw in values.items():
        if key in _INT_FIELDS:
            kwargs[key] = int(raw)
        elif key == "lam":
            kwargs["lam"] = int(raw)
        elif key == "epsilon_oht":
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown parameter {key!r}")
    return Params(**kwargs)


# Frames ------------------------------------------------------------------

_FRAME_HDR = struct.Struct(">BQI")
MAX_BODY = 1 << 26


def pack_frame(kind: Kind, round_no: int, body: bytes) -> bytes:
    return _FRAME_HDR.pack(int(kind), round_no, len(body)) + body


def unpack_frame(buf: bytes) -> tuple[Kind, int, bytes]:
    if len(buf) < _FRAME_HDR.size:
        raise MalformedPacket("frame shorter than header")
    kind_raw, round_no, blen = _FRAME_HDR.unpack_from(buf)
    try:
        kind = Kind(kind_raw)
    except ValueError as exc:
        raise MalformedPacket(f"unknown frame kind {kind_raw}") from exc
    body = buf[_FRAME_HDR.size :]
    if len(body) != blen or blen > MAX_BODY:
        raise MalformedPacket(f"frame length mismatch: header {blen}, actual {len(body)}")
    return kind, round_no, body


def check_body_len(kind: Kind, body: bytes, params: Params) -> None:
    want = params.body_len.get(kind)
    if want is not None and len(body) != want:
        raise MalformedPacket(f"{kind.name} body must be {want} bytes, got {len(body)}")


# Packet plaintext layouts -------------------------------------------------


def build_notf_plaintext(vec: bytes, label: bytes, params: Params) -> bytes:
    if len(vec) != params.vec_bytes or len(label) != params.label_bytes:
        raise MalformedPacket("bad vector or label length")
    pad = params.notf_pt_len - params.vec_bytes - params.label_bytes
    return vec + label + b"\x00" * pad


def parse_notf_plaintext(pt: bytes, params: Params) -> tuple[bytes, bytes]:
    if len(pt) != params.notf_pt_len:
        raise MalformedPacket("bad notification plaintext length")
    return pt[: params.vec_bytes], pt[params.vec_bytes : params.vec_bytes + params.label_bytes]


def build_msg_plaintext(token: int, dummy: bool, sender_id: int, enc_msg: bytes, params: Params) -> bytes:
    if len(enc_msg) != params.enc_msg_len:
        raise MalformedPacket("bad encrypted message length")
    return token.to_bytes(8, "big") + bytes([1 if dummy else 0]) + sender_id.to_bytes(8, "big") + enc_msg


def parse_msg_plaintext(pt: bytes, params: Params) -> tuple[int, bool, int, bytes]:
    if len(pt) != 17 + params.enc_msg_len:
        raise MalformedPacket("bad message plaintext length")
    token = int.from_bytes(pt[:8], "big")
    dummy = pt[8] != 0
    sender = int.from_bytes(pt[9:17], "big")
    return token, dummy, sender, pt[17:]


def build_read_plaintext(token: int, dummy: bool) -> bytes:
    return token.to_bytes(8, "big") + bytes([1 if dummy else 0])


def parse_read_plaintext(pt: bytes) -> tuple[int, bool]:
    if len(pt) != 9:
        raise MalformedPacket("bad read plaintext length")
    return int.from_bytes(pt[:8], "big"), pt[8] != 0


def build_response_plaintext(sender_id: int, enc_msg: bytes, params: Params) -> bytes:
    if len(enc_msg) != params.enc_msg_len:
        raise MalformedPacket("bad encrypted message length")
    return sender_id.to_bytes(8, "big") + enc_msg


def parse_response_plaintext(pt: bytes, params: Params) -> tuple[int, bytes]:
    if len(pt) != 8 + params.enc_msg_len:
        raise MalformedPacket("bad response plaintext length")
    return int.from_bytes(pt[:8], "big"), pt[8:]


def build_hello_plaintext(client_id: int, label: bytes, session_key: bytes, params: Params) -> bytes:
    if len(label) != params.label_bytes or len(session_key) != 32:
        raise MalformedPacket("bad hello fields")
    return client_id.to_bytes(8, "big") + label + session_key


def parse_hello_plaintext(pt: bytes, params: Params) -> tuple[int, bytes, bytes]:
    if len(pt) != 8 + params.label_bytes + 32:
        raise MalformedPacket("bad hello plaintext length")
    return (
        int.from_bytes(pt[:8], "big"),
        pt[8 : 8 + params.label_bytes],
        pt[8 + params.label_bytes :],
    )


# Bit-vector helpers -------------------------------------------------------


def one_hot_vec(idx: int, params: Params) -> bytes:
    if not 0 <= idx < params.max_friends:
        raise ValueError(f"friend index {idx} out of range")
    vec = bytearray(params.vec_bytes)
    vec[idx // 8] |= 1 << (idx % 8)
    return bytes(vec)


def zero_vec(params: Params) -> bytes:
    return b"\x00" * params.vec_bytes


def vec_set_bits(vec: bytes) -> list[int]:
    bits = np.unpackbits(np.frombuffer(vec, dtype=np.uint8), bitorder="little")
    return np.flatnonzero(bits).tolist()


def vec_to_words(vec: bytes, params: Params) -> np.ndarray:
    words = np.zeros(params.vec_words, dtype=np.uint64)
    words[: len(vec) // 8] = np.frombuffer(vec, dtype="<u8")
    return words


def words_to_vec(words: np.ndarray, params: Params) -> bytes:
    return words.astype("<u8").tobytes()[: params.vec_bytes]


def label_to_words(label: bytes) -> np.ndarray:
    return np.frombuffer(label, dtype="<u8").copy()


def words_to_label(words: np.ndarray) -> bytes:
    return words.astype("<u8").tobytes()


# Sub-batch row serialization (entry <-> backend) ---------------------------

_SUB_HDR = struct.Struct(">IIII")


def pack_rows(entry_id: int, rows: np.ndarray) -> bytes:
    rows = np.ascontiguousarray(rows, dtype=np.uint64)
    n, w = rows.shape
    return _SUB_HDR.pack(entry_id, n, w, 0) + rows.astype("<u8").tobytes()


def unpack_rows(body: bytes) -> tuple[int, np.ndarray]:
    if len(body) < _SUB_HDR.size:
        raise MalformedPacket("sub-batch body too short")
    entry_id, n, w, _ = _SUB_HDR.unpack_from(body)
    raw = body[_SUB_HDR.size :]
    if len(raw) != n * w * 8:
        raise MalformedPacket("sub-batch row payload length mismatch")
    rows = np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(n, w)
    return entry_id, rows


__all__ = [
    "Params",
    "DEFAULT_PARAMS",
    "Kind",
    "MalformedPacket",
    "load_params",
    "pack_frame",
    "unpack_frame",
    "check_body_len",
    "replace",
    "field",
]
