"""Talking to a deployed enclave service over the attested channel."""

from __future__ import annotations

from dataclasses import dataclass

from ..channel import Attestor, ClientHandshake, SecureChannel, handshake_client
from ..codec import DecodeError, Reader, Writer, decode_tokens, encode_tokens
from ..defenses import ALL_ON, Defenses
from ..enclave import AttestationQuote
from ..errors import (
    AttestationFailed,
    ChannelError,
    ConnectionClosed,
    CounterExhausted,
    DecryptFail,
    HandshakeMalformed,
    KeyBindingMismatch,
    ProtocolError,
    RejectedPublicKey,
    ReplayDetected,
    ServiceCrashed,
)
from ..inference import AccuracyReport, AttestedAccuracy
from ..transport import MsgType, request
from ..verifier import Verdict, VerifierClient
from . import protocol as P

CHANNEL_FAILURES = (DecryptFail, ReplayDetected, HandshakeMalformed, ProtocolError, RejectedPublicKey,
                    CounterExhausted)


class ServiceClient:
    """An open, attested session with one enclave service."""

    def __init__(self, conn, channel: SecureChannel, verdict: Verdict | None, quote: AttestationQuote):
        self.conn = conn
        self.channel = channel
        self.verdict = verdict
        self.quote = quote

    @classmethod
    def connect(cls, network, address: str, attestor: Attestor, *, source: str = "client",
                defenses: Defenses = ALL_ON) -> "ServiceClient":
        conn = network.connect(address, source)
        try:
            state = ClientHandshake(defenses)
            hello = request(conn, MsgType.CLIENT_HELLO, state.client_hello, MsgType.SERVER_HELLO)
            channel, verdict = handshake_client(attestor, hello, state)
        except BaseException:
            conn.close()
            raise
        return cls(conn, channel, verdict, state.server_hello.quote)

    @property
    def open(self) -> bool:
        return self.conn.open

    def call(self, op: int, body: bytes = b"") -> bytes:
        frame = self.channel.send(bytes([op]) + body)
        reply = request(self.conn, MsgType.RECORD, frame, MsgType.RECORD)
        return P.unwrap(self.channel.recv(reply))

    def generate(self, prompt, max_new_tokens: int, beam_width: int = 1) -> list[int]:
        reply = self.call(P.Op.GENERATE, P.encode_generate(prompt, max_new_tokens, beam_width))
        r = Reader(reply)
        tokens = decode_tokens(r)
        r.done()
        return tokens

    def attest_payload(self) -> AttestationQuote:
        return AttestationQuote.from_bytes(self.call(P.Op.ATTEST_PAYLOAD))

    def accuracy(self, dataset) -> AttestedAccuracy:
        r = Reader(self.call(P.Op.ACCURACY, P.encode_dataset(dataset)))
        report = AccuracyReport.from_bytes(r.blob())
        quote = AttestationQuote.from_bytes(r.blob())
        r.done()
        return AttestedAccuracy(report, quote)

    def provenance(self, dataset_digest: bytes) -> AttestationQuote:
        return AttestationQuote.from_bytes(self.call(P.Op.PROVENANCE, Writer().raw(dataset_digest).getvalue()))

    def rag_query(self, prompt) -> list[int] | None:
        r = Reader(self.call(P.Op.RAG_QUERY, encode_tokens(list(P.retrieval_key(prompt)))))
        found = r.u8()
        document = decode_tokens(r) if found else None
        r.done()
        return document

    def close(self) -> None:
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def attestor_for(descriptor: P.ServiceDescriptor, network, mode: str = "live", source: str = "client") -> Attestor:
    """``live`` asks the verifier; ``verdict`` trusts the verdict the server staples."""
    if mode not in ("live", "verdict"):
        raise ValueError(f"unknown attestation mode {mode!r}")
    verifier = None
    if mode == "live":
        verifier = VerifierClient(network, descriptor.verifier_address, descriptor.verifier_public, source)
    return Attestor(descriptor.verifier_public, {descriptor.accepted_measurement}, verifier)


def connect_service(descriptor: P.ServiceDescriptor, network, *, mode: str = "live", source: str = "client",
                    defenses: Defenses = ALL_ON) -> ServiceClient:
    attestor = attestor_for(descriptor, network, mode, source)
    try:
        return ServiceClient.connect(network, descriptor.address, attestor, source=source, defenses=defenses)
    except KeyBindingMismatch as exc:
        raise AttestationFailed(["KEY_BINDING_MISMATCH"], str(exc)) from exc


@dataclass(frozen=True)
class UserResult:
    completion: list[int]
    verdict: Verdict | None


def user_prompt(descriptor: P.ServiceDescriptor, prompt, network, *, mode: str = "live", max_new_tokens: int = 16,
                beam_width: int = 1, source: str = "user", defenses: Defenses = ALL_ON) -> UserResult:
    """Attest the service, send one prompt, return the completion.

    Failures surface as ``AttestationFailed`` (the service is not what the
    descriptor pins), ``ServiceCrashed`` (the connection was dropped) or
    ``ChannelError`` (anything wrong on the wire).
    """
    try:
        with connect_service(descriptor, network, mode=mode, source=source, defenses=defenses) as client:
            completion = client.generate(prompt, max_new_tokens, beam_width)
            return UserResult(completion, client.verdict)
    except ConnectionClosed as exc:
        raise ServiceCrashed(str(exc)) from exc
    except CHANNEL_FAILURES as exc:
        raise ChannelError(str(exc)) from exc
    except DecodeError as exc:
        raise ChannelError(f"malformed reply: {exc}") from exc

