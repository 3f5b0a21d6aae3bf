"""Attested secure channel in the style of RA-TLS.

The server's X25519 key is generated inside the enclave and bound into a
quote: ``quote.report_data == digest(server_public)``. The client accepts the
server only if the quote checks out (through a live verifier or a signed
verdict the server staples to its hello) and the binding holds. Session keys
come from HKDF over the shared secret, salted with the transcript digest.

Record frames::

    u64 counter | u16 ciphertext length | ChaCha20-Poly1305(ciphertext)

The 10-byte header is the associated data; the nonce is the counter as a
12-byte big-endian integer. Each direction has its own key and counter.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

from . import crypto
from .codec import DecodeError, Reader, Writer
from .defenses import ALL_ON, Defenses
from .enclave import AttestationQuote, EnclaveRuntime
from .errors import (
    AttestationFailed,
    CounterExhausted,
    DecryptFail,
    HandshakeMalformed,
    KeyBindingMismatch,
    ReplayDetected,
)
from .verifier import MEASUREMENT_MISMATCH, Verdict

HELLO_VERSION = 1
RANDOM_SIZE = 32
RECORD_HEADER = struct.Struct(">QH")
MAX_COUNTER = (1 << 64) - 1
MAX_CIPHERTEXT = 0xFFFF

NO_VERDICT = "NO_VERDICT"
VERDICT_INVALID = "VERDICT_INVALID"


def binding_for(public: bytes) -> bytes:
    """report_data value that binds a channel key into a quote."""
    return crypto.digest(public)


def transcript_digest(client_hello: bytes, server_hello: bytes) -> bytes:
    return crypto.digest(Writer().blob(client_hello).blob(server_hello).getvalue())


class SecureChannel:
    def __init__(self, keys: crypto.SessionKeys, is_client: bool, peer_measurement: bytes | None = None,
                 defenses: Defenses = ALL_ON):
        self.keys = keys
        self.is_client = is_client
        self.peer_measurement = peer_measurement
        self.send_counter = 0
        self.recv_counter = -1  # last accepted
        self._encrypt = defenses.channel_encryption
        if is_client:
            self._send_key, self._recv_key = keys.client_to_server, keys.server_to_client
        else:
            self._send_key, self._recv_key = keys.server_to_client, keys.client_to_server

    def send(self, plaintext: bytes) -> bytes:
        if self.send_counter > MAX_COUNTER:
            raise CounterExhausted("send counter exhausted")
        counter = self.send_counter
        length = len(plaintext) + crypto.TAG_SIZE
        if length > MAX_CIPHERTEXT:
            raise ValueError(f"record of {len(plaintext)} bytes is too large")
        header = RECORD_HEADER.pack(counter, length)
        if self._encrypt:
            body = crypto.aead_seal(self._send_key, crypto.counter_nonce(counter), plaintext, header)
        else:
            body = bytes(plaintext) + bytes(crypto.TAG_SIZE)
        self.send_counter += 1
        return header + body

    def recv(self, frame: bytes) -> bytes:
        if len(frame) < RECORD_HEADER.size + crypto.TAG_SIZE:
            raise DecryptFail("short record")
        header = frame[:RECORD_HEADER.size]
        counter, length = RECORD_HEADER.unpack(header)
        body = frame[RECORD_HEADER.size:]
        if length != len(body):
            raise DecryptFail("record length mismatch")
        if self._encrypt:
            plaintext = crypto.aead_open(self._recv_key, crypto.counter_nonce(counter), body, header)
        else:
            plaintext = body[:-crypto.TAG_SIZE]
        if counter <= self.recv_counter:
            raise ReplayDetected(f"counter {counter} <= {self.recv_counter}")
        self.recv_counter = counter
        return plaintext


# -- hello messages -----------------------------------------------------------------

@dataclass(frozen=True)
class ClientHello:
    public: bytes
    random: bytes

    def to_bytes(self) -> bytes:
        return Writer().u8(HELLO_VERSION).raw(self.public).raw(self.random).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClientHello":
        try:
            r = Reader(data)
            if r.u8() != HELLO_VERSION:
                raise DecodeError("bad hello version")
            hello = cls(r.raw(crypto.PUBLIC_KEY_SIZE), r.raw(RANDOM_SIZE))
            r.done()
        except DecodeError as exc:
            raise HandshakeMalformed(f"client hello: {exc}") from exc
        return hello


@dataclass(frozen=True)
class ServerHello:
    public: bytes
    quote_bytes: bytes
    verdict_bytes: bytes = b""

    def to_bytes(self) -> bytes:
        return Writer().raw(self.public).blob(self.quote_bytes).blob(self.verdict_bytes).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ServerHello":
        try:
            r = Reader(data)
            hello = cls(r.raw(crypto.PUBLIC_KEY_SIZE), r.blob(4096), r.blob(4096))
            r.done()
        except DecodeError as exc:
            raise HandshakeMalformed(f"server hello: {exc}") from exc
        return hello

    @property
    def quote(self) -> AttestationQuote:
        try:
            return AttestationQuote.from_bytes(self.quote_bytes)
        except DecodeError as exc:
            raise HandshakeMalformed(f"quote: {exc}") from exc


# -- server side ----------------------------------------------------------------

class ServerHandshake:
    """Channel identity of an enclave: key pair plus the quote binding it."""

    def __init__(self, rt: EnclaveRuntime, exchange_pair: crypto.ExchangeKeyPair | None = None,
                 defenses: Defenses = ALL_ON):
        self.rt = rt
        self.exchange_pair = exchange_pair or crypto.ExchangeKeyPair.generate()
        self.quote = rt.get_quote(binding_for(self.exchange_pair.public))
        self.verdict: Verdict | None = None
        self.defenses = defenses

    def server_hello(self) -> bytes:
        verdict = self.verdict.to_bytes() if self.verdict is not None else b""
        return ServerHello(self.exchange_pair.public, self.quote.to_bytes(), verdict).to_bytes()

    def accept(self, client_hello: bytes) -> tuple[bytes, SecureChannel]:
        # a crashed enclave must not keep serving handshakes
        self.rt.get_quote(binding_for(self.exchange_pair.public))
        hello = ClientHello.from_bytes(client_hello)
        server_hello = self.server_hello()
        shared = crypto.key_agree(self.exchange_pair, hello.public)
        keys = crypto.derive_session_keys(shared, transcript_digest(client_hello, server_hello))
        return server_hello, SecureChannel(keys, is_client=False, defenses=self.defenses)


def handshake_server(rt: EnclaveRuntime, exchange_pair: crypto.ExchangeKeyPair | None = None,
                     defenses: Defenses = ALL_ON) -> ServerHandshake:
    return ServerHandshake(rt, exchange_pair, defenses)


# -- client side ----------------------------------------------------------------

class Attestor:
    """Decides whether a server hello comes from an acceptable enclave.

    With ``verifier`` set, the quote is sent to that verifier (in-process
    :class:`~enclavefm.verifier.Verifier` or remote ``VerifierClient``).
    Otherwise the verdict stapled to the server hello is used, checked
    against the pinned ``verifier_public``. ``expected_measurements`` of
    ``None`` skips the client's own measurement pin.
    """

    def __init__(self, verifier_public: bytes, expected_measurements=None, verifier=None):
        self.verifier_public = verifier_public
        self.expected = None if expected_measurements is None else frozenset(expected_measurements)
        self.verifier = verifier

    def verdict_for(self, hello: ServerHello) -> tuple[Verdict | None, tuple[str, ...]]:
        if self.verifier is not None:
            verdict = self.verifier.verify(hello.quote_bytes)
        elif hello.verdict_bytes:
            try:
                verdict = Verdict.from_bytes(hello.verdict_bytes)
            except DecodeError:
                return None, (VERDICT_INVALID,)
        else:
            return None, (NO_VERDICT,)
        if not verdict.signature_valid(self.verifier_public) or verdict.quote_digest != crypto.digest(hello.quote_bytes):
            return verdict, (VERDICT_INVALID,)
        return verdict, verdict.reasons

    def check(self, hello: ServerHello) -> Verdict:
        quote = hello.quote
        verdict, reasons = self.verdict_for(hello)
        reasons = set(reasons)
        if self.expected is not None and quote.measurement not in self.expected:
            reasons.add(MEASUREMENT_MISMATCH)
        if reasons:
            raise AttestationFailed(reasons)
        return verdict


class ClientHandshake:
    def __init__(self, defenses: Defenses = ALL_ON):
        self.exchange_pair = crypto.ExchangeKeyPair.generate()
        self.client_hello = ClientHello(self.exchange_pair.public, os.urandom(RANDOM_SIZE)).to_bytes()
        self.defenses = defenses
        self.server_hello_bytes: bytes | None = None
        self.server_hello: ServerHello | None = None

    def receive(self, server_hello: bytes) -> ServerHello:
        self.server_hello_bytes = bytes(server_hello)
        self.server_hello = ServerHello.from_bytes(server_hello)
        self.server_hello.quote  # noqa: B018  (parse check)
        return self.server_hello

    def check_binding(self) -> None:
        hello = self.server_hello
        if hello.quote.report_data != binding_for(hello.public):
            raise KeyBindingMismatch("quote report_data does not bind the server key")

    def finish(self) -> SecureChannel:
        hello = self.server_hello
        shared = crypto.key_agree(self.exchange_pair, hello.public)
        keys = crypto.derive_session_keys(shared, transcript_digest(self.client_hello, self.server_hello_bytes))
        return SecureChannel(keys, is_client=True, peer_measurement=hello.quote.measurement, defenses=self.defenses)


def handshake_client(attestor: Attestor, server_hello: bytes, state: ClientHandshake) -> tuple[SecureChannel, Verdict]:
    """Complete the client side: attestation, key binding, key derivation."""
    hello = state.receive(server_hello)
    verdict = attestor.check(hello)
    state.check_binding()
    return state.finish(), verdict
