"""Software stand-in for a TEE platform.

Protected memory is modeled as encrypted, MAC-tagged pages. The host only
ever sees the physical (encrypted) bytes, so reads through
:func:`enclave_read_as_host` come back garbled. Host writes succeed silently;
the MAC mismatch is noticed on the next in-enclave access to the page, which
crashes the enclave for good.

In-enclave code proves it runs inside by presenting the enclave's owner
token, a process-local capability handed to the measured entrypoint at launch
(see :meth:`Enclave.enter`).
"""

from __future__ import annotations

import enum
import hashlib
import os
import threading
from collections.abc import Mapping
from dataclasses import dataclass, field

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from . import crypto
from .codec import DecodeError, Reader, Writer
from .defenses import ALL_ON, Defenses
from .errors import (
    DecryptFail,
    EnclaveCrashed,
    EnclaveError,
    IntegrityFault,
    NotOwner,
    SealMismatch,
    ValidationFailed,
)
from .manifest import Manifest, compute_measurement, validate_against_tree

PAGE_SIZE = 4096
REPORT_DATA_SIZE = 32
PLATFORM_ID_SIZE = 16
QUOTE_VERSION = 1
SEAL_VERSION = 1
TEE_TYPES = ("application", "vm")


class State(enum.Enum):
    LAUNCHED = "launched"
    RUNNING = "running"
    CRASHED = "crashed"


@dataclass(frozen=True, eq=False)
class PlatformRoot:
    platform_id: bytes
    root_signing: crypto.SigningKeyPair
    tee_type: str = "application"
    seal_secret: bytes = field(default_factory=lambda: os.urandom(32), repr=False)

    def __post_init__(self):
        if len(self.platform_id) != PLATFORM_ID_SIZE:
            raise ValueError("platform_id must be 16 bytes")
        if self.tee_type not in TEE_TYPES:
            raise ValueError(f"tee_type must be one of {TEE_TYPES}")

    @classmethod
    def generate(cls, tee_type: str = "application", seed: bytes | None = None) -> "PlatformRoot":
        """Fresh platform; with ``seed`` the platform is reproducible."""
        if seed is None:
            seed = os.urandom(32)
        material = crypto.hkdf(seed, b"", b"enclavefm/platform/v1", 16 + 32 + 32)
        return cls(
            platform_id=material[:16],
            root_signing=crypto.SigningKeyPair.from_private_bytes(material[16:48]),
            tee_type=tee_type,
            seal_secret=material[48:],
        )

    @property
    def root_public(self) -> bytes:
        return self.root_signing.public


@dataclass(frozen=True)
class AttestationQuote:
    tee_type: str
    platform_id: bytes
    measurement: bytes
    report_data: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return (
            Writer()
            .u8(QUOTE_VERSION)
            .u8(TEE_TYPES.index(self.tee_type))
            .blob(self.platform_id)
            .blob(self.measurement)
            .blob(self.report_data)
            .getvalue()
        )

    def to_bytes(self) -> bytes:
        return self.body() + Writer().blob(self.signature).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationQuote":
        r = Reader(data)
        version = r.u8()
        if version != QUOTE_VERSION:
            raise DecodeError(f"unsupported quote version {version}")
        tee_code = r.u8()
        if tee_code >= len(TEE_TYPES):
            raise DecodeError(f"unknown tee type {tee_code}")
        platform_id = r.blob(PLATFORM_ID_SIZE)
        measurement = r.blob(crypto.DIGEST_SIZE)
        report_data = r.blob(REPORT_DATA_SIZE)
        signature = r.blob(crypto.SIGNATURE_SIZE)
        r.done()
        if (len(platform_id), len(measurement), len(report_data), len(signature)) != (
            PLATFORM_ID_SIZE, crypto.DIGEST_SIZE, REPORT_DATA_SIZE, crypto.SIGNATURE_SIZE,
        ):
            raise DecodeError("quote field has wrong length")
        return cls(TEE_TYPES[tee_code], platform_id, measurement, report_data, signature)

    def signature_valid(self, root_public: bytes) -> bool:
        return crypto.verify(root_public, self.body(), self.signature)


def sign_quote(root: crypto.SigningKeyPair, quote: AttestationQuote) -> AttestationQuote:
    """Used by the platform, and by tests forging quotes with other keys."""
    return AttestationQuote(
        quote.tee_type, quote.platform_id, quote.measurement, quote.report_data,
        root.sign(quote.body()),
    )


class _Page:
    __slots__ = ("physical", "version")

    def __init__(self, physical: bytearray, version: int):
        self.physical = physical
        self.version = version


@dataclass(frozen=True)
class Region:
    offset: int
    length: int
    label: str


class Enclave:
    """One launched enclave. Create through :func:`launch_enclave`."""

    def __init__(self, platform: PlatformRoot, manifest: Manifest, measurement: bytes,
                 defenses: Defenses = ALL_ON):
        self.platform = platform
        self.manifest = manifest
        self._measurement = measurement
        self.defenses = defenses
        self.state = State.LAUNCHED
        self.sealed_store: dict[bytes, bytes] = {}
        self.regions: list[Region] = []
        self._owner_token = object()
        self._page_key = os.urandom(32)
        self._mac_key = os.urandom(32)
        self._pages: dict[int, _Page] = {}
        self._shadow: dict[int, bytes] = {}
        self._cursor = 0
        self._lock = threading.RLock()
        self.crash_reason: str | None = None

    # -- identity ---------------------------------------------------------

    @property
    def measurement(self) -> bytes:
        return self._measurement

    @property
    def size(self) -> int:
        return self.manifest.enclave_size

    @property
    def crashed(self) -> bool:
        return self.state is State.CRASHED

    def enter(self) -> "EnclaveRuntime":
        """Hand the owner capability to the measured entrypoint.

        Called once by the launcher; host-side code (CSP, adversaries) works
        with the :class:`Enclave` object through the ``host_*`` methods only.
        """
        return EnclaveRuntime(self, self._owner_token)

    # -- page machinery ---------------------------------------------------

    def _keystream_xor(self, index: int, version: int, data: bytes) -> bytes:
        if not self.defenses.memory_encryption:
            return bytes(data)
        nonce = index.to_bytes(8, "little") + version.to_bytes(8, "little")
        enc = Cipher(algorithms.ChaCha20(self._page_key, nonce), mode=None).encryptor()
        return enc.update(bytes(data))

    def _tag(self, index: int, page: _Page) -> bytes:
        h = hashlib.blake2b(key=self._mac_key, digest_size=16)
        h.update(index.to_bytes(8, "big"))
        h.update(page.version.to_bytes(8, "big"))
        h.update(page.physical)
        return h.digest()

    def _page(self, index: int) -> _Page:
        page = self._pages.get(index)
        if page is None:
            page = _Page(bytearray(self._keystream_xor(index, 0, bytes(PAGE_SIZE))), 0)
            self._pages[index] = page
            self._shadow[index] = self._tag(index, page)
        return page

    def _check_range(self, offset: int, length: int) -> None:
        if offset < 0 or length < 0 or offset + length > self.size:
            raise EnclaveError(f"range [{offset}, {offset + length}) outside enclave of size {self.size}")

    def _pages_for(self, offset: int, length: int):
        first = offset // PAGE_SIZE
        last = (offset + length - 1) // PAGE_SIZE
        return range(first, last + 1)

    def _open_page(self, index: int) -> bytes:
        page = self._page(index)
        if self.defenses.memory_integrity and self._tag(index, page) != self._shadow[index]:
            self._crash(f"integrity check failed on page {index}")
            raise IntegrityFault(f"page {index} modified outside the enclave", page=index)
        return self._keystream_xor(index, page.version, page.physical)

    def _store_page(self, index: int, plaintext: bytes) -> None:
        page = self._page(index)
        page.version += 1
        page.physical = bytearray(self._keystream_xor(index, page.version, plaintext))
        self._shadow[index] = self._tag(index, page)

    def _crash(self, reason: str) -> None:
        self.state = State.CRASHED
        self.crash_reason = reason

    def _require(self, token) -> None:
        if self.state is State.CRASHED:
            raise EnclaveCrashed(self.crash_reason or "enclave crashed")
        if token is not self._owner_token:
            raise NotOwner("operation requires the enclave owner token")

    # -- in-enclave operations ----------------------------------------------

    def read(self, offset: int, length: int, *, token) -> bytes:
        with self._lock:
            self._require(token)
            self._check_range(offset, length)
            if length == 0:
                return b""
            out = bytearray()
            for index in self._pages_for(offset, length):
                out += self._open_page(index)
            start = offset - (offset // PAGE_SIZE) * PAGE_SIZE
            return bytes(out[start:start + length])

    def write(self, offset: int, data: bytes, *, token) -> None:
        with self._lock:
            self._require(token)
            self._check_range(offset, len(data))
            pos = 0
            while pos < len(data):
                index, within = divmod(offset + pos, PAGE_SIZE)
                chunk = data[pos:pos + PAGE_SIZE - within]
                plain = bytearray(self._open_page(index))
                plain[within:within + len(chunk)] = chunk
                self._store_page(index, bytes(plain))
                pos += len(chunk)

    def allocate(self, length: int, label: str = "", *, token) -> int:
        with self._lock:
            self._require(token)
            offset = self._cursor
            pages = max(1, -(-length // PAGE_SIZE))
            self._check_range(offset, pages * PAGE_SIZE)
            self._cursor += pages * PAGE_SIZE
            self.regions.append(Region(offset, length, label))
            return offset

    def get_quote(self, report_data: bytes, *, token) -> AttestationQuote:
        with self._lock:
            self._require(token)
            if len(report_data) != REPORT_DATA_SIZE:
                raise ValueError("report_data must be exactly 32 bytes")
            quote = AttestationQuote(
                self.platform.tee_type, self.platform.platform_id, self._measurement, bytes(report_data)
            )
            return sign_quote(self.platform.root_signing, quote)

    def _seal_key(self) -> bytes:
        return crypto.hkdf(self.platform.seal_secret, self._measurement, b"enclavefm/seal/v1")

    def seal(self, key_id: bytes, data: bytes, *, token) -> bytes:
        with self._lock:
            self._require(token)
            nonce = os.urandom(crypto.NONCE_SIZE)
            header = (
                Writer().u8(SEAL_VERSION).raw(self.platform.platform_id)
                .raw(self._measurement).raw(nonce).getvalue()
            )
            ad = Writer().blob(key_id).raw(header).getvalue()
            blob = header + crypto.aead_seal(self._seal_key(), nonce, data, ad)
            self.sealed_store[bytes(key_id)] = blob
            return blob

    def unseal(self, key_id: bytes, blob: bytes | None = None, *, token) -> bytes:
        with self._lock:
            self._require(token)
            if blob is None:
                blob = self.sealed_store[bytes(key_id)]
            header_len = 1 + PLATFORM_ID_SIZE + crypto.DIGEST_SIZE + crypto.NONCE_SIZE
            if len(blob) < header_len + crypto.TAG_SIZE or blob[0] != SEAL_VERSION:
                raise DecryptFail("malformed sealed blob")
            platform_id = blob[1:1 + PLATFORM_ID_SIZE]
            measurement = blob[1 + PLATFORM_ID_SIZE:1 + PLATFORM_ID_SIZE + crypto.DIGEST_SIZE]
            if platform_id != self.platform.platform_id or measurement != self._measurement:
                raise SealMismatch("blob sealed to a different enclave identity")
            nonce = blob[header_len - crypto.NONCE_SIZE:header_len]
            ad = Writer().blob(key_id).raw(blob[:header_len]).getvalue()
            return crypto.aead_open(self._seal_key(), nonce, blob[header_len:], ad)

    # -- host view --------------------------------------------------------------

    def host_read(self, offset: int, length: int) -> bytes:
        with self._lock:
            self._check_range(offset, length)
            if length == 0:
                return b""
            out = bytearray()
            for index in self._pages_for(offset, length):
                out += self._page(index).physical
            start = offset % PAGE_SIZE
            return bytes(out[start:start + length])

    def host_write(self, offset: int, data: bytes) -> None:
        with self._lock:
            self._check_range(offset, len(data))
            for i, b in enumerate(data):
                index, within = divmod(offset + i, PAGE_SIZE)
                self._page(index).physical[within] = b

    def host_flip_bit(self, offset: int, bit: int) -> None:
        with self._lock:
            self._check_range(offset, 1)
            index, within = divmod(offset, PAGE_SIZE)
            self._page(index).physical[within] ^= 1 << bit


class EnclaveRuntime:
    """The in-enclave view: an enclave plus its owner token.

    ``slots`` holds application state that lives inside the enclave.
    """

    def __init__(self, enclave: Enclave, token):
        self.enclave = enclave
        self._token = token
        self.slots: dict = {}

    @property
    def measurement(self) -> bytes:
        return self.enclave.measurement

    def read(self, offset: int, length: int) -> bytes:
        return self.enclave.read(offset, length, token=self._token)

    def write(self, offset: int, data: bytes) -> None:
        self.enclave.write(offset, data, token=self._token)

    def allocate(self, length: int, label: str = "") -> int:
        return self.enclave.allocate(length, label, token=self._token)

    def store(self, data: bytes, label: str = "") -> Region:
        offset = self.allocate(len(data), label)
        self.write(offset, data)
        return Region(offset, len(data), label)

    def get_quote(self, report_data: bytes) -> AttestationQuote:
        return self.enclave.get_quote(report_data, token=self._token)

    def seal(self, key_id: bytes, data: bytes) -> bytes:
        return self.enclave.seal(key_id, data, token=self._token)

    def unseal(self, key_id: bytes, blob: bytes | None = None) -> bytes:
        return self.enclave.unseal(key_id, blob, token=self._token)


def launch_enclave(platform: PlatformRoot, manifest: Manifest, tree: Mapping[str, bytes],
                   defenses: Defenses = ALL_ON) -> Enclave:
    issues = validate_against_tree(manifest, tree)
    if issues:
        raise ValidationFailed(", ".join(map(str, issues)), issues=issues)
    enclave = Enclave(platform, manifest, compute_measurement(manifest, tree), defenses)
    token = enclave._owner_token
    for path in sorted(manifest.trusted_files):
        content = tree[path]
        offset = enclave.allocate(len(content), f"file:{path}", token=token)
        enclave.write(offset, content, token=token)
    enclave.state = State.RUNNING
    return enclave


def get_quote(e: Enclave, report_data: bytes, token=None) -> AttestationQuote:
    return e.get_quote(report_data, token=token)


def enclave_read_as_host(e: Enclave, offset: int, length: int) -> bytes:
    return e.host_read(offset, length)


def enclave_write_as_host(e: Enclave, offset: int, data: bytes) -> None:
    e.host_write(offset, data)
