"""Toy model weights, the ``.fmte`` encrypted package, and in-enclave loading.

Weights are generated from a seed with integer arithmetic only, so the same
seed yields the same bytes everywhere. The package header is the AEAD
associated data, so any header change makes decryption fail.
"""

from __future__ import annotations

import os
import sys
from array import array
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from . import crypto, kernels
from .codec import DecodeError, Reader, Writer
from .defenses import ALL_ON, Defenses
from .enclave import EnclaveRuntime, Region
from .errors import DecryptFail, DigestMismatch, KeyNotProvisioned, NoModelLoaded

WEIGHTS_MAGIC = b"FMW1"
PACKAGE_MAGIC = b"FMTE"
PACKAGE_VERSION = 1
KEY_ID_SIZE = 16
HEADER_SIZE = 4 + 1 + KEY_ID_SIZE + crypto.NONCE_SIZE + crypto.DIGEST_SIZE


def _to_be(a: array) -> bytes:
    if sys.byteorder == "little":
        a = array(a.typecode, a)
        a.byteswap()
    return a.tobytes()


def _from_be(data: bytes) -> array:
    a = array("i")
    a.frombytes(data)
    if sys.byteorder == "little":
        a.byteswap()
    return a


@lru_cache(maxsize=32)
def _buckets(context_window: int, vocab: int, embed_dim: int) -> array:
    return kernels.bucket_table(context_window, vocab, embed_dim)


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Hashed-feature linear scorer.

    ``table`` has ``embed_dim`` rows of ``vocab_size`` int32 weights; each
    (position, token) pair in the context window hashes to one row.
    ``bias`` holds one int32 per vocabulary entry.
    """

    seed: int
    vocab_size: int
    embed_dim: int
    context_window: int
    table: array = field(repr=False)
    bias: array = field(repr=False)

    @classmethod
    def generate(cls, seed: int, vocab_size: int = 256, embed_dim: int = 64, context_window: int = 8) -> "ModelWeights":
        if min(vocab_size, embed_dim, context_window) < 1:
            raise ValueError("model dimensions must be positive")
        values = kernels.fill_weights(seed, (embed_dim + 1) * vocab_size)
        split = embed_dim * vocab_size
        return cls(seed, vocab_size, embed_dim, context_window, values[:split], values[split:])

    @property
    def buckets(self) -> array:
        return _buckets(self.context_window, self.vocab_size, self.embed_dim)

    def serialize(self) -> bytes:
        return (
            Writer().raw(WEIGHTS_MAGIC).u64(self.seed).u32(self.vocab_size)
            .u32(self.embed_dim).u32(self.context_window)
            .raw(_to_be(self.table)).raw(_to_be(self.bias)).getvalue()
        )

    @classmethod
    def deserialize(cls, data: bytes) -> "ModelWeights":
        r = Reader(data)
        if r.raw(4) != WEIGHTS_MAGIC:
            raise DecodeError("not a weights blob")
        seed, vocab, embed, window = r.u64(), r.u32(), r.u32(), r.u32()
        if min(vocab, embed, window) < 1 or vocab * (embed + 1) * 4 != r.remaining:
            raise DecodeError("weights blob has inconsistent dimensions")
        table = _from_be(r.raw(4 * vocab * embed))
        bias = _from_be(r.raw(4 * vocab))
        return cls(seed, vocab, embed, window, table, bias)

    def digest(self) -> bytes:
        return crypto.digest(self.serialize())

    def __eq__(self, other):
        if not isinstance(other, ModelWeights):
            return NotImplemented
        return self.serialize() == other.serialize()

    def __hash__(self):
        return hash(self.digest())


@dataclass(frozen=True)
class EncryptedModelPackage:
    key_id: bytes
    nonce: bytes
    model_digest: bytes
    ciphertext: bytes
    version: int = PACKAGE_VERSION

    def header(self) -> bytes:
        return (
            Writer().raw(PACKAGE_MAGIC).u8(self.version).raw(self.key_id)
            .raw(self.nonce).raw(self.model_digest).getvalue()
        )

    def to_bytes(self) -> bytes:
        return self.header() + self.ciphertext

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedModelPackage":
        """Structural parse only. Anything malformed counts as a decryption failure."""
        if len(data) < HEADER_SIZE + crypto.TAG_SIZE:
            raise DecryptFail("package truncated")
        if data[:4] != PACKAGE_MAGIC:
            raise DecryptFail("bad package magic")
        if data[4] != PACKAGE_VERSION:
            raise DecryptFail(f"unsupported package version {data[4]}")
        r = Reader(data[5:])
        return cls(r.raw(KEY_ID_SIZE), r.raw(crypto.NONCE_SIZE), r.raw(crypto.DIGEST_SIZE), r.rest())


def pack_model(w: ModelWeights, key: bytes, key_id: bytes, nonce: bytes | None = None) -> EncryptedModelPackage:
    if len(key_id) != KEY_ID_SIZE:
        raise ValueError("key_id must be 16 bytes")
    payload = w.serialize()
    pkg = EncryptedModelPackage(key_id, nonce or os.urandom(crypto.NONCE_SIZE), crypto.digest(payload), b"")
    ct = crypto.aead_seal(key, pkg.nonce, payload, pkg.header())
    return EncryptedModelPackage(pkg.key_id, pkg.nonce, pkg.model_digest, ct)


def decrypt_package(pkg: EncryptedModelPackage, key: bytes, defenses: Defenses = ALL_ON) -> bytes:
    """Return the verified plaintext payload."""
    if not defenses.package_authentication:
        # raw ChaCha20 keystream, block counter 1 as in the AEAD construction; tag ignored
        nonce16 = (1).to_bytes(4, "little") + pkg.nonce
        dec = Cipher(algorithms.ChaCha20(key, nonce16), mode=None).decryptor()
        return dec.update(pkg.ciphertext[:-crypto.TAG_SIZE])
    payload = crypto.aead_open(key, pkg.nonce, pkg.ciphertext, pkg.header())
    if crypto.digest(payload) != pkg.model_digest:
        raise DigestMismatch("decrypted payload does not match header digest")
    return payload


def unpack_model(pkg: EncryptedModelPackage, key: bytes) -> ModelWeights:
    """Provider-side decryption (for ``provider verify-model``)."""
    return ModelWeights.deserialize(decrypt_package(pkg, key))


@dataclass(frozen=True)
class LoadedModel:
    region: Region
    digest: bytes


def provision_key(rt: EnclaveRuntime, key_id: bytes, key: bytes) -> None:
    rt.seal(key_id, key)


def unpack_model_in_enclave(rt: EnclaveRuntime, pkg: EncryptedModelPackage | bytes, key_id: bytes,
                            defenses: Defenses = ALL_ON) -> ModelWeights:
    if bytes(key_id) not in rt.enclave.sealed_store:
        raise KeyNotProvisioned(f"no key provisioned under {bytes(key_id).hex()}")
    key = rt.unseal(key_id)
    if isinstance(pkg, (bytes, bytearray)):
        pkg = EncryptedModelPackage.from_bytes(bytes(pkg))
    if pkg.key_id != bytes(key_id):
        raise DecryptFail("package was sealed under a different key id")
    payload = decrypt_package(pkg, key, defenses)
    try:
        weights = ModelWeights.deserialize(payload)
    except DecodeError as exc:
        raise DecryptFail(f"payload is not a model: {exc}") from exc
    region = rt.store(payload, "model")
    rt.slots["model"] = LoadedModel(region, crypto.digest(payload))
    return weights


def loaded_model_bytes(rt: EnclaveRuntime) -> bytes:
    loaded: LoadedModel | None = rt.slots.get("model")
    if loaded is None:
        raise NoModelLoaded("no model loaded in this enclave")
    return rt.read(loaded.region.offset, loaded.region.length)


def load_model(rt: EnclaveRuntime) -> ModelWeights:
    """Materialize the model from protected memory (integrity-checked on every call)."""
    return ModelWeights.deserialize(loaded_model_bytes(rt))


def attest_model_hash(rt: EnclaveRuntime):
    return rt.get_quote(crypto.digest(loaded_model_bytes(rt)))
