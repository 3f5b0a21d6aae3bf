"""Attestation verifier: quote checks against a reference policy, signed verdicts.

The verifier is usable in-process (:class:`Verifier`) or as a network
service (:func:`serve`); both produce bit-identical verdicts because Ed25519
signatures are deterministic.
"""

from __future__ import annotations

import threading
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from . import crypto, kvfile
from .codec import DecodeError, Reader, Writer
from .enclave import TEE_TYPES, AttestationQuote
from .errors import InvariantViolation, ProtocolError
from .transport import MsgType, error_payload, request

VERDICT_VERSION = 1

SIGNATURE_INVALID = "SIGNATURE_INVALID"
UNKNOWN_PLATFORM = "UNKNOWN_PLATFORM"
MEASUREMENT_MISMATCH = "MEASUREMENT_MISMATCH"
TEE_TYPE_REJECTED = "TEE_TYPE_REJECTED"
REASONS = (MEASUREMENT_MISMATCH, SIGNATURE_INVALID, TEE_TYPE_REJECTED, UNKNOWN_PLATFORM)
# reasons that mean "not a genuine TEE", as opposed to "not the expected software"
PLATFORM_REASONS = frozenset({SIGNATURE_INVALID, UNKNOWN_PLATFORM, TEE_TYPE_REJECTED})


@dataclass(frozen=True)
class ReferencePolicy:
    accepted_measurements: frozenset[bytes]
    accepted_tee_types: frozenset[str]
    trusted_platform_roots: Mapping[bytes, bytes]  # platform_id -> root public key

    def __post_init__(self):
        object.__setattr__(self, "accepted_measurements", frozenset(self.accepted_measurements))
        object.__setattr__(self, "accepted_tee_types", frozenset(self.accepted_tee_types))
        object.__setattr__(self, "trusted_platform_roots", dict(self.trusted_platform_roots))
        if not self.trusted_platform_roots:
            raise InvariantViolation("policy needs at least one trusted platform root")
        unknown = self.accepted_tee_types - set(TEE_TYPES)
        if unknown:
            raise InvariantViolation(f"unknown tee types {sorted(unknown)}")

    def with_measurements(self, measurements: Iterable[bytes]) -> "ReferencePolicy":
        return ReferencePolicy(frozenset(measurements), self.accepted_tee_types, self.trusted_platform_roots)


def parse_policy(text: str) -> ReferencePolicy:
    d = kvfile.parse_dict(text, repeatable=("accepted_measurement", "accepted_tee_type", "trusted_root"))
    extra = set(d) - {"accepted_measurement", "accepted_tee_type", "trusted_root"}
    if extra:
        raise InvariantViolation(f"unknown policy keys {sorted(extra)}")
    roots = {}
    for entry in d["trusted_root"]:
        pid, _, pub = entry.partition(":")
        roots[bytes.fromhex(pid)] = bytes.fromhex(pub)
    return ReferencePolicy(
        frozenset(bytes.fromhex(m) for m in d["accepted_measurement"]),
        frozenset(d["accepted_tee_type"] or TEE_TYPES),
        roots,
    )


def render_policy(p: ReferencePolicy) -> str:
    pairs = [("accepted_measurement", m.hex()) for m in sorted(p.accepted_measurements)]
    pairs += [("accepted_tee_type", t) for t in sorted(p.accepted_tee_types)]
    pairs += [("trusted_root", f"{pid.hex()}:{pub.hex()}") for pid, pub in sorted(p.trusted_platform_roots.items())]
    return kvfile.render_pairs(pairs)


@dataclass(frozen=True)
class Verdict:
    result: str  # "pass" | "fail"
    reasons: tuple[str, ...]
    quote_digest: bytes
    verifier_public: bytes
    signature: bytes = field(default=b"", compare=True)

    @property
    def passed(self) -> bool:
        return self.result == "pass"

    def body(self) -> bytes:
        w = Writer().u8(VERDICT_VERSION).u8(1 if self.passed else 0).u32(len(self.reasons))
        for reason in self.reasons:
            w.text(reason)
        return w.raw(self.quote_digest).blob(self.verifier_public).getvalue()

    def to_bytes(self) -> bytes:
        return self.body() + Writer().blob(self.signature).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Verdict":
        r = Reader(data)
        if r.u8() != VERDICT_VERSION:
            raise DecodeError("unsupported verdict version")
        passed = r.u8()
        n = r.u32()
        if n > len(REASONS):
            raise DecodeError("too many reasons")
        reasons = tuple(r.text() for _ in range(n))
        quote_digest = r.raw(crypto.DIGEST_SIZE)
        pub = r.blob(crypto.PUBLIC_KEY_SIZE)
        sig = r.blob(crypto.SIGNATURE_SIZE)
        r.done()
        if passed not in (0, 1) or bool(passed) == bool(reasons):
            raise DecodeError("verdict result inconsistent with reasons")
        return cls("pass" if passed else "fail", reasons, quote_digest, pub, sig)

    def signature_valid(self, verifier_public: bytes) -> bool:
        return self.verifier_public == verifier_public and crypto.verify(
            verifier_public, self.body(), self.signature
        )


def evaluate(quote: AttestationQuote, policy: ReferencePolicy) -> tuple[str, ...]:
    reasons = set()
    root = policy.trusted_platform_roots.get(quote.platform_id)
    if root is None:
        reasons |= {UNKNOWN_PLATFORM, SIGNATURE_INVALID}
    elif not quote.signature_valid(root):
        reasons.add(SIGNATURE_INVALID)
    if quote.measurement not in policy.accepted_measurements:
        reasons.add(MEASUREMENT_MISMATCH)
    if quote.tee_type not in policy.accepted_tee_types:
        reasons.add(TEE_TYPE_REJECTED)
    return tuple(sorted(reasons))


def verify_quote(q: AttestationQuote, p: ReferencePolicy, signer: crypto.SigningKeyPair) -> Verdict:
    reasons = evaluate(q, p)
    verdict = Verdict("fail" if reasons else "pass", reasons, crypto.digest(q.to_bytes()), signer.public)
    return Verdict(verdict.result, verdict.reasons, verdict.quote_digest, verdict.verifier_public,
                   signer.sign(verdict.body()))


class Verifier:
    """Policy plus verdict-signing identity."""

    def __init__(self, policy: ReferencePolicy, signing_key: crypto.SigningKeyPair | None = None):
        self.policy = policy
        self.signing_key = signing_key or crypto.SigningKeyPair.generate()
        self._sign_lock = threading.Lock()

    @property
    def public(self) -> bytes:
        return self.signing_key.public

    def verify(self, quote: AttestationQuote | bytes) -> Verdict:
        if isinstance(quote, (bytes, bytearray)):
            quote = AttestationQuote.from_bytes(bytes(quote))
        with self._sign_lock:
            return verify_quote(quote, self.policy, self.signing_key)

    # Service protocol
    def open_session(self, peer: str) -> "_VerifierSession":
        return _VerifierSession(self)


class _VerifierSession:
    def __init__(self, verifier: Verifier):
        self.verifier = verifier

    def handle(self, msg_type: int, payload: bytes):
        if msg_type != MsgType.VERIFY_REQ:
            return [(MsgType.ERROR, error_payload(ProtocolError(f"unexpected message type {msg_type:#x}")))]
        try:
            quote = AttestationQuote.from_bytes(payload)
        except DecodeError as exc:
            return [(MsgType.ERROR, error_payload(ProtocolError(f"malformed quote: {exc}")))]
        return [(MsgType.VERIFY_RESP, self.verifier.verify(quote).to_bytes())]

    def close(self) -> None:
        pass


def serve(bind_address: str, policy: ReferencePolicy, network, signing_key: crypto.SigningKeyPair | None = None):
    """Start a verifier on ``network``; returns ``(verifier, listener)``."""
    verifier = Verifier(policy, signing_key)
    listener = network.listen(bind_address, verifier)
    return verifier, listener


class VerifierClient:
    """Talks to a remote verifier; drop-in for :class:`Verifier` on the client side."""

    def __init__(self, network, address: str, verifier_public: bytes, source: str = "client"):
        self.network = network
        self.address = address
        self.public = verifier_public
        self.source = source

    def verify(self, quote: AttestationQuote | bytes) -> Verdict:
        raw = quote if isinstance(quote, (bytes, bytearray)) else quote.to_bytes()
        conn = self.network.connect(self.address, self.source)
        try:
            reply = request(conn, MsgType.VERIFY_REQ, bytes(raw), MsgType.VERIFY_RESP)
        finally:
            conn.close()
        try:
            return Verdict.from_bytes(reply)
        except DecodeError as exc:
            raise ProtocolError(f"malformed verdict: {exc}") from exc


__all__ = [
    "ReferencePolicy", "Verdict", "Verifier", "VerifierClient", "verify_quote", "serve",
    "parse_policy", "render_policy", "evaluate",
]
