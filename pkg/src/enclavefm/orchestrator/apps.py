"""Applications running inside a launched enclave.

Each app is a :class:`~enclavefm.transport.Service`. A session first runs
the attested handshake (CLIENT_HELLO / SERVER_HELLO) and then carries
application requests as RECORD frames over the secure channel. A request
is one opcode byte plus a body; a reply is a status byte plus a body.

An integrity fault or a crashed enclave drops the connection without a
reply, which is all the host can observe of the failure.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable

from .. import crypto
from ..channel import ServerHandshake
from ..codec import DecodeError, Reader, Writer, decode_tokens, encode_tokens
from ..defenses import ALL_ON, Defenses
from ..enclave import EnclaveRuntime
from ..errors import (
    DecryptFail,
    EmptyContext,
    EnclaveCrashed,
    EnclaveFMError,
    IntegrityFault,
    NoModelLoaded,
    ProtocolError,
    ReplayDetected,
)
from ..inference import (
    GenerationConfig,
    bind_training_provenance,
    evaluate_and_attest_accuracy,
    generate,
)
from ..model_store import attest_model_hash, load_model, loaded_model_bytes, provision_key, unpack_model_in_enclave
from ..transport import CloseSession, MsgType, error_payload
from ..verifier import VerifierClient
from . import protocol as P
from .client import connect_service

log = logging.getLogger(__name__)

FATAL = (IntegrityFault, EnclaveCrashed)


class AppSession:
    def __init__(self, app: "EnclaveApp", peer: str):
        self.app = app
        self.peer = peer
        self.channel = None

    def handle(self, msg_type: int, payload: bytes):
        try:
            if self.channel is None:
                if msg_type != MsgType.CLIENT_HELLO:
                    raise ProtocolError(f"expected CLIENT_HELLO, got {msg_type:#x}")
                server_hello, self.channel = self.app.handshake.accept(payload)
                return [(MsgType.SERVER_HELLO, server_hello)]
            if msg_type != MsgType.RECORD:
                raise ProtocolError(f"expected RECORD, got {msg_type:#x}")
            try:
                plaintext = self.channel.recv(payload)
            except (DecryptFail, ReplayDetected) as exc:
                raise CloseSession([(MsgType.ERROR, error_payload(exc))]) from exc
            return [(MsgType.RECORD, self.channel.send(self.app.dispatch(plaintext)))]
        except FATAL:
            raise CloseSession() from None

    def close(self) -> None:
        pass


class EnclaveApp:
    """Common plumbing: channel identity, request dispatch, provisioning."""

    kind = ""

    def __init__(self, rt: EnclaveRuntime, network, *, package_source: Callable[[], bytes] = lambda: b"",
                 defenses: Defenses = ALL_ON, enclave_tax: float = 0.0, name: str = "enclave"):
        self.rt = rt
        self.network = network
        self.package_source = package_source
        self.defenses = defenses
        self.enclave_tax = enclave_tax
        self.name = name
        self.handshake = ServerHandshake(rt, defenses=defenses)
        self._lock = threading.Lock()  # in-enclave execution is serialized
        self.handlers = {P.Op.PROVISION: self._provision, P.Op.ATTEST_PAYLOAD: self.attest_payload}

    def open_session(self, peer: str) -> AppSession:
        return AppSession(self, peer)

    def dispatch(self, request: bytes) -> bytes:
        if not request:
            return P.err(ProtocolError("empty request"))
        handler = self.handlers.get(request[0])
        if handler is None:
            return P.err(ProtocolError(f"unknown opcode {request[0]:#x}"))
        with self._lock:
            try:
                return P.ok(handler(request[1:]))
            except FATAL:
                raise
            except EnclaveFMError as exc:
                return P.err(exc)
            except (DecodeError, ValueError) as exc:
                return P.err(ProtocolError(str(exc)))

    def _provision(self, body: bytes) -> bytes:
        prov = P.Provisioning.from_bytes(body)
        self.provision(prov)
        # staple a verdict so users can attest without contacting the verifier
        try:
            client = VerifierClient(self.network, prov.verifier_address, prov.verifier_public, self.name)
            verdict = client.verify(self.handshake.quote)
            if verdict.signature_valid(prov.verifier_public):
                self.handshake.verdict = verdict
        except EnclaveFMError as exc:
            log.warning("could not obtain a verdict to staple: %s", exc)
        return b""

    def provision(self, prov: P.Provisioning) -> None:
        raise NotImplementedError

    def attest_payload(self, body: bytes) -> bytes:
        raise NotImplementedError


class InferenceApp(EnclaveApp):
    """Serves the provider's model; optionally augments prompts from a RAG enclave."""

    kind = "inference"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.rag_descriptor: P.ServiceDescriptor | None = None
        self._rag = None
        self.handlers.update({
            P.Op.GENERATE: self._generate,
            P.Op.ACCURACY: self._accuracy,
            P.Op.PROVENANCE: self._provenance,
        })

    def provision(self, prov: P.Provisioning) -> None:
        provision_key(self.rt, prov.key_id, prov.key)
        unpack_model_in_enclave(self.rt, self.package_source(), prov.key_id, self.defenses)
        if prov.rag is not None:
            self.rag_descriptor = prov.rag
            self._rag_client()  # attest the retrieval service now, not on first query

    def _rag_client(self):
        if self._rag is None or not self._rag.open:
            self._rag = connect_service(self.rag_descriptor, self.network, mode="live", source=self.name,
                                        defenses=self.defenses)
        return self._rag

    def attest_payload(self, body: bytes) -> bytes:
        return attest_model_hash(self.rt).to_bytes()

    def _generate(self, body: bytes) -> bytes:
        prompt, steps, beam = P.decode_generate(body)
        if not prompt:
            raise EmptyContext("empty prompt")
        model = load_model(self.rt)
        context = list(prompt)
        if self.rag_descriptor is not None:
            document = self._rag_client().rag_query(prompt)
            if document:
                context = document + context
        cfg = GenerationConfig(1, max(beam, 1), max(steps, 1), len(context))
        result = generate(model, [context], cfg, enclave_tax=self.enclave_tax)
        return encode_tokens(result.completions[0] if steps else [])

    def _accuracy(self, body: bytes) -> bytes:
        attested = evaluate_and_attest_accuracy(self.rt, P.decode_dataset(body))
        return Writer().blob(attested.report.to_bytes()).blob(attested.quote.to_bytes()).getvalue()

    def _provenance(self, body: bytes) -> bytes:
        r = Reader(body)
        dataset_digest = r.raw(crypto.DIGEST_SIZE)
        r.done()
        model_digest = crypto.digest(loaded_model_bytes(self.rt))
        return bind_training_provenance(self.rt, dataset_digest, model_digest).to_bytes()


class RagApp(EnclaveApp):
    """Exact-match document retrieval keyed by the first prompt tokens."""

    kind = "rag"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.handlers[P.Op.RAG_QUERY] = self._query

    def provision(self, prov: P.Provisioning) -> None:
        self.rt.slots["index"] = self.rt.store(P.encode_index(prov.documents), "index")

    def _index_bytes(self) -> bytes:
        region = self.rt.slots.get("index")
        if region is None:
            raise NoModelLoaded("no document index provisioned")
        return self.rt.read(region.offset, region.length)

    def attest_payload(self, body: bytes) -> bytes:
        return self.rt.get_quote(crypto.digest(self._index_bytes())).to_bytes()

    def _query(self, body: bytes) -> bytes:
        r = Reader(body)
        key = tuple(decode_tokens(r))
        r.done()
        document = P.decode_index(self._index_bytes()).get(key)
        if document is None:
            return Writer().u8(0).getvalue()
        return Writer().u8(1).raw(encode_tokens(document)).getvalue()


APPS = {InferenceApp.kind: InferenceApp, RagApp.kind: RagApp}
