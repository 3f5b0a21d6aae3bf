"""Cryptographic primitives behind every security property of the package.

The concrete suite is pinned in :data:`SUITE`; all golden values in the tests
and in FORMATS.md are computed under it.

* digest: SHA-256
* signatures: Ed25519 (deterministic, 32-byte public keys, 64-byte signatures)
* key agreement: X25519
* key derivation: HKDF-SHA256
* AEAD: ChaCha20-Poly1305 (32-byte key, 12-byte nonce, 16-byte tag)

Nothing here performs I/O.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import DecryptFail, RejectedPublicKey

SUITE = "SHA256/Ed25519/X25519/HKDF-SHA256/ChaCha20-Poly1305"

DIGEST_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16

SESSION_INFO = b"enclavefm/session/v1"


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def random_bytes(n: int) -> bytes:
    return os.urandom(n)


# -- signatures ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SigningKeyPair:
    private: Ed25519PrivateKey
    public: bytes

    @classmethod
    def generate(cls) -> "SigningKeyPair":
        return cls.from_private_bytes(os.urandom(32))

    @classmethod
    def from_private_bytes(cls, seed: bytes) -> "SigningKeyPair":
        priv = Ed25519PrivateKey.from_private_bytes(seed)
        return cls(priv, priv.public_key().public_bytes_raw())

    def private_bytes(self) -> bytes:
        """Raw 32-byte seed. Only for sealed storage and key files."""
        return self.private.private_bytes_raw()

    def sign(self, msg: bytes) -> bytes:
        return self.private.sign(msg)


def sign(key: SigningKeyPair, msg: bytes) -> bytes:
    return key.sign(msg)


def verify(public: bytes, msg: bytes, sig: bytes) -> bool:
    """Malformed keys or signatures verify as False instead of raising."""
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(sig), msg)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


# -- key agreement -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ExchangeKeyPair:
    private: X25519PrivateKey
    public: bytes

    @classmethod
    def generate(cls) -> "ExchangeKeyPair":
        return cls.from_private_bytes(os.urandom(32))

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> "ExchangeKeyPair":
        priv = X25519PrivateKey.from_private_bytes(raw)
        return cls(priv, priv.public_key().public_bytes_raw())


def key_agree(my_private: ExchangeKeyPair | X25519PrivateKey, their_public: bytes) -> bytes:
    if isinstance(my_private, ExchangeKeyPair):
        my_private = my_private.private
    if len(their_public) != PUBLIC_KEY_SIZE or not any(their_public):
        raise RejectedPublicKey("public value outside the X25519 domain")
    try:
        shared = my_private.exchange(X25519PublicKey.from_public_bytes(bytes(their_public)))
    except ValueError as exc:
        # low-order points produce the all-zero secret
        raise RejectedPublicKey(str(exc)) from exc
    return shared


@dataclass(frozen=True)
class SessionKeys:
    client_to_server: bytes
    server_to_client: bytes


def derive_session_keys(shared: bytes, transcript_digest: bytes) -> SessionKeys:
    okm = HKDF(
        algorithm=hashes.SHA256(),
        length=2 * KEY_SIZE,
        salt=transcript_digest,
        info=SESSION_INFO,
    ).derive(shared)
    return SessionKeys(okm[:KEY_SIZE], okm[KEY_SIZE:])


def hkdf(secret: bytes, salt: bytes, info: bytes, length: int = KEY_SIZE) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(secret)


# -- AEAD ------------------------------------------------------------------------

def counter_nonce(counter: int) -> bytes:
    """12-byte big-endian encoding of a per-direction message counter."""
    return counter.to_bytes(NONCE_SIZE, "big")


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, associated_data: bytes = b"") -> bytes:
    return ChaCha20Poly1305(key).encrypt(nonce, plaintext, associated_data)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, associated_data: bytes = b"") -> bytes:
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, ciphertext, associated_data)
    except (InvalidTag, ValueError) as exc:
        raise DecryptFail("authentication failed") from exc
