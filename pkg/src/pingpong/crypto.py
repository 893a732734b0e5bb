"""Keys, sealing, and token derivation.

Three layers of protection:

* ``seal``/``unseal`` -- public-key encryption to a service key (stands in
  for encrypting to an enclave's provisioned key): X25519 ephemeral exchange
  + HKDF + ChaCha20-Poly1305.  Ciphertext length is plaintext length plus a
  fixed 48-byte overhead, so packet sizes stay uniform.
* ``aead_encrypt``/``aead_decrypt`` -- symmetric channel and message-body
  encryption with a random nonce prepended (fixed 28-byte expansion).
* ``derive_token`` -- PRF mapping (pair secret, receiver, sender, counter)
  to the 64-bit retrieval token both endpoints compute independently.  Input
  encoding is fixed-width big-endian receiver||sender||counter, which avoids
  the ambiguity collisions of string concatenation.

All randomness can be driven from a seeded generator for reproducible
simulation; by default it comes from the OS.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

SYM_KEY_LEN = 32
SEAL_OVERHEAD = 48  # 32-byte ephemeral public key + 16-byte tag
AEAD_OVERHEAD = 28  # 12-byte nonce + 16-byte tag
TOKEN_BYTES = 8

_SEAL_NONCE = b"\x00" * 12  # key is fresh per seal, a fixed nonce is safe


class AuthError(Exception):
    """Decryption or authentication failure; callers drop the packet."""


def _rand_bytes(rng: np.random.Generator | None, n: int) -> bytes:
    if rng is None:
        return os.urandom(n)
    return rng.bytes(n)


def gen_sym_key(rng: np.random.Generator | None = None) -> bytes:
    return _rand_bytes(rng, SYM_KEY_LEN)


@dataclass(frozen=True)
class ServiceKeyPair:
    """Sealing keypair for one subsystem; the secret is shared by its nodes."""

    public: bytes
    secret: bytes

    @classmethod
    def generate(cls, rng: np.random.Generator | None = None) -> "ServiceKeyPair":
        sk = X25519PrivateKey.from_private_bytes(_rand_bytes(rng, 32))
        from cryptography.hazmat.primitives import serialization

        pub = sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        raw = sk.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )
        return cls(public=pub, secret=raw)


def _seal_key(shared: bytes, eph_pub: bytes, pk: bytes) -> bytes:
    return hashlib.sha256(b"pingpong-seal-v1" + shared + eph_pub + pk).digest()


def seal(payload: bytes, public_key: bytes, rng: np.random.Generator | None = None) -> bytes:
    """Encrypt ``payload`` to the holder of the service secret key."""
    eph = X25519PrivateKey.from_private_bytes(_rand_bytes(rng, 32))
    from cryptography.hazmat.primitives import serialization

    eph_pub = eph.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    shared = eph.exchange(X25519PublicKey.from_public_bytes(public_key))
    key = _seal_key(shared, eph_pub, public_key)
    ct = ChaCha20Poly1305(key).encrypt(_SEAL_NONCE, payload, None)
    return eph_pub + ct


def unseal(blob: bytes, keypair: ServiceKeyPair) -> bytes:
    if len(blob) < SEAL_OVERHEAD:
        raise AuthError("sealed blob too short")
    eph_pub, ct = blob[:32], blob[32:]
    sk = X25519PrivateKey.from_private_bytes(keypair.secret)
    try:
        shared = sk.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _seal_key(shared, eph_pub, keypair.public)
        return ChaCha20Poly1305(key).decrypt(_SEAL_NONCE, ct, None)
    except (InvalidTag, ValueError) as exc:
        raise AuthError("unseal failed") from exc


def aead_encrypt(
    key: bytes, plaintext: bytes, ad: bytes = b"", rng: np.random.Generator | None = None
) -> bytes:
    nonce = _rand_bytes(rng, 12)
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, ad or None)


def aead_decrypt(key: bytes, blob: bytes, ad: bytes = b"") -> bytes:
    if len(blob) < AEAD_OVERHEAD:
        raise AuthError("ciphertext too short")
    try:
        return ChaCha20Poly1305(key).decrypt(blob[:12], blob[12:], ad or None)
    except InvalidTag as exc:
        raise AuthError("AEAD tag mismatch") from exc


def derive_token(sk: bytes, receiver_id: int, sender_id: int, counter: int) -> int:
    """64-bit retrieval token for the ``counter``-th message receiver<-sender.

    Deterministic and identical on both endpoints: the sender passes the
    buddy as receiver, the receiver passes itself.
    """
    msg = (
        int(receiver_id).to_bytes(8, "big")
        + int(sender_id).to_bytes(8, "big")
        + int(counter).to_bytes(8, "big")
    )
    digest = hmac.new(sk, msg, hashlib.sha256).digest()
    return int.from_bytes(digest[:TOKEN_BYTES], "big")


def random_token(rng: np.random.Generator | None = None) -> int:
    return int.from_bytes(_rand_bytes(rng, TOKEN_BYTES), "big")


def write_key_file(path: str, data: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(data)


def read_key_file(path: str, expect_len: int = 32) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) != expect_len:
        raise ValueError(f"{path}: expected {expect_len} key bytes, found {len(data)}")
    return data
