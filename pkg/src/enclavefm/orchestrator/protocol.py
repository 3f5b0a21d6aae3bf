"""Message bodies exchanged between the roles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .. import crypto, kvfile
from ..codec import DecodeError, Reader, Writer, decode_tokens, encode_tokens
from ..errors import EnclaveFMError, ProtocolError, error_for_code
from ..manifest import FileTree

RAG_KEY_TOKENS = 2


class Op(enum.IntEnum):
    """Application requests carried inside the secure channel."""

    PROVISION = 0x01
    ATTEST_PAYLOAD = 0x02
    GENERATE = 0x03
    ACCURACY = 0x04
    PROVENANCE = 0x05
    RAG_QUERY = 0x06


STATUS_OK = 0
STATUS_ERROR = 1


def ok(body: bytes = b"") -> bytes:
    return bytes([STATUS_OK]) + body


def err(exc: EnclaveFMError) -> bytes:
    return bytes([STATUS_ERROR]) + Writer().text(exc.code).text(str(exc)).getvalue()


def unwrap(reply: bytes) -> bytes:
    if not reply:
        raise ProtocolError("empty reply")
    if reply[0] == STATUS_OK:
        return reply[1:]
    try:
        r = Reader(reply[1:])
        code, message = r.text(), r.text()
    except DecodeError:
        raise ProtocolError("malformed error reply") from None
    raise error_for_code(code, message)


# -- deployment ------------------------------------------------------------------

@dataclass(frozen=True)
class DeploymentRequest:
    kind: str  # "inference" | "rag"
    tee_type: str
    manifest_text: str
    tree: FileTree
    package: bytes = b""

    def to_bytes(self) -> bytes:
        w = Writer().text(self.kind).text(self.tee_type).text(self.manifest_text).u32(len(self.tree))
        for path in sorted(self.tree):
            w.text(path).blob(self.tree[path])
        return w.blob(self.package).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeploymentRequest":
        r = Reader(data)
        kind, tee_type, manifest_text = r.text(), r.text(), r.text()
        files = {}
        for _ in range(r.u32()):
            path = r.text()
            files[path] = r.blob()
        package = r.blob()
        r.done()
        try:
            tree = FileTree(files)
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        return cls(kind, tee_type, manifest_text, tree, package)


@dataclass(frozen=True)
class DeploymentHandle:
    address: str
    platform_id: bytes

    def to_bytes(self) -> bytes:
        return Writer().text(self.address).blob(self.platform_id).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DeploymentHandle":
        r = Reader(data)
        handle = cls(r.text(), r.blob(16))
        r.done()
        return handle


@dataclass(frozen=True)
class ServiceDescriptor:
    """What the provider publishes at the end of deployment.

    End users pin ``accepted_measurement`` and ``verifier_public`` when they
    attest the service themselves.
    """

    address: str
    kind: str
    accepted_measurement: bytes
    tee_type: str
    platform_id: bytes
    payload_digest: bytes
    verifier_address: str
    verifier_public: bytes

    def render(self) -> str:
        return kvfile.render_pairs([
            ("address", self.address),
            ("kind", self.kind),
            ("accepted_measurement", self.accepted_measurement.hex()),
            ("tee_type", self.tee_type),
            ("platform_id", self.platform_id.hex()),
            ("payload_digest", self.payload_digest.hex()),
            ("verifier_address", self.verifier_address),
            ("verifier_public", self.verifier_public.hex()),
        ])

    @classmethod
    def parse(cls, text: str) -> "ServiceDescriptor":
        d = kvfile.parse_dict(text)
        try:
            return cls(
                d["address"], d["kind"], bytes.fromhex(d["accepted_measurement"]), d["tee_type"],
                bytes.fromhex(d["platform_id"]), bytes.fromhex(d["payload_digest"]),
                d["verifier_address"], bytes.fromhex(d["verifier_public"]),
            )
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"bad service descriptor: {exc}") from exc

    def to_bytes(self) -> bytes:
        return self.render().encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ServiceDescriptor":
        return cls.parse(data.decode())


@dataclass(frozen=True)
class Provisioning:
    """Step-6 message: secrets and configuration the enclave needs to start serving."""

    verifier_address: str
    verifier_public: bytes
    key_id: bytes = b""
    key: bytes = field(default=b"", repr=False)
    documents: dict = field(default_factory=dict)  # RAG: key tokens -> document tokens
    rag: ServiceDescriptor | None = None

    def to_bytes(self) -> bytes:
        w = Writer().text(self.verifier_address).blob(self.verifier_public)
        w.blob(self.key_id).blob(self.key).blob(encode_index(self.documents))
        w.blob(self.rag.to_bytes() if self.rag else b"")
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Provisioning":
        r = Reader(data)
        address, pub, key_id, key = r.text(), r.blob(), r.blob(), r.blob()
        documents = decode_index(r.blob())
        rag_raw = r.blob()
        r.done()
        return cls(address, pub, key_id, key, documents, ServiceDescriptor.from_bytes(rag_raw) if rag_raw else None)


def encode_index(documents: dict) -> bytes:
    w = Writer().u32(len(documents))
    for key in sorted(documents):
        w.raw(encode_tokens(list(key))).raw(encode_tokens(documents[key]))
    return w.getvalue()


def decode_index(data: bytes) -> dict:
    r = Reader(data)
    out = {}
    for _ in range(r.u32()):
        key = tuple(decode_tokens(r))
        out[key] = decode_tokens(r)
    r.done()
    return out


def index_digest(documents: dict) -> bytes:
    return crypto.digest(encode_index(documents))


def retrieval_key(prompt) -> tuple[int, ...]:
    return tuple(prompt[:RAG_KEY_TOKENS])


def encode_generate(prompt, max_new_tokens: int, beam_width: int = 1) -> bytes:
    return Writer().u16(beam_width).u16(max_new_tokens).raw(encode_tokens(prompt)).getvalue()


def decode_generate(data: bytes) -> tuple[list[int], int, int]:
    r = Reader(data)
    beam, steps = r.u16(), r.u16()
    prompt = decode_tokens(r)
    r.done()
    return prompt, steps, beam


def encode_dataset(dataset) -> bytes:
    w = Writer().u32(len(dataset))
    for prompt, expected in dataset:
        w.raw(encode_tokens(prompt)).u32(expected)
    return w.getvalue()


def decode_dataset(data: bytes):
    r = Reader(data)
    out = []
    for _ in range(r.u32()):
        prompt = decode_tokens(r)
        out.append((prompt, r.u32()))
    r.done()
    return out
