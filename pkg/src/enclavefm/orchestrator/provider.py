"""Model provider: deploy a service on an untrusted CSP, step by step.

1. ask the CSP to launch the enclave
2. receive the instance address and connect
3. handshake; check the quote binds the channel key
4. have the verifier check the quote is from a genuine TEE
5. check the measurement is the one the provider built
6. provision secrets over the channel; the enclave loads its payload
7. check the enclave attests the expected payload digest

Any failure raises ``DeploymentAborted(step, reason)``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path

from .. import crypto, kvfile
from ..channel import ClientHandshake
from ..codec import DecodeError
from ..defenses import ALL_ON, Defenses
from ..errors import DeploymentAborted, EnclaveFMError, InvariantViolation
from ..manifest import FileTree, compute_measurement, parse_manifest
from ..model_store import EncryptedModelPackage, unpack_model
from ..transport import MsgType, request
from ..verifier import MEASUREMENT_MISMATCH, PLATFORM_REASONS, VerifierClient
from . import protocol as P
from .client import ServiceClient

VERDICT_INVALID = "VERDICT_INVALID"
MODEL_DIGEST_MISMATCH = "MODEL_DIGEST_MISMATCH"
INDEX_DIGEST_MISMATCH = "INDEX_DIGEST_MISMATCH"


@dataclass(frozen=True)
class ProviderConfig:
    kind: str
    tee_type: str
    manifest_text: str
    tree: FileTree
    expected_measurement: bytes
    verifier_address: str
    verifier_public: bytes
    package: bytes = b""
    key_id: bytes = b""
    model_key: bytes = field(default=b"", repr=False)
    expected_model_digest: bytes = b""
    documents: dict = field(default_factory=dict)
    rag: P.ServiceDescriptor | None = None
    defenses: Defenses = ALL_ON

    @property
    def expected_payload_digest(self) -> bytes:
        if self.kind == "rag":
            return P.index_digest(self.documents)
        return self.expected_model_digest

    def provisioning(self) -> P.Provisioning:
        return P.Provisioning(self.verifier_address, self.verifier_public, self.key_id, self.model_key,
                              self.documents, self.rag)


def _abort(step: int, exc: BaseException) -> DeploymentAborted:
    code = getattr(exc, "code", type(exc).__name__)
    return DeploymentAborted(step, code, str(exc))


def provider_deploy(cfg: ProviderConfig, csp_address: str, network, *, source: str = "provider",
                    on_step: Callable[[int, str], None] | None = None) -> P.ServiceDescriptor:
    note = on_step or (lambda step, text: None)

    # 1: launch
    req = P.DeploymentRequest(cfg.kind, cfg.tee_type, cfg.manifest_text, cfg.tree, cfg.package)
    try:
        conn = network.connect(csp_address, source)
        try:
            raw_handle = request(conn, MsgType.DEPLOY_REQ, req.to_bytes(), MsgType.DEPLOY_RESP)
        finally:
            conn.close()
    except EnclaveFMError as exc:
        raise _abort(1, exc) from exc
    note(1, f"CSP at {csp_address} launched the {cfg.kind} enclave ({cfg.tee_type} TEE)")

    # 2: connect to the instance
    try:
        handle = P.DeploymentHandle.from_bytes(raw_handle)
        conn = network.connect(handle.address, source)
    except (DecodeError, EnclaveFMError) as exc:
        raise _abort(2, exc) from exc
    note(2, f"connected to enclave at {handle.address}")

    try:
        # 3: handshake and key binding
        state = ClientHandshake(cfg.defenses)
        try:
            hello = state.receive(request(conn, MsgType.CLIENT_HELLO, state.client_hello, MsgType.SERVER_HELLO))
            state.check_binding()
        except EnclaveFMError as exc:
            raise _abort(3, exc) from exc
        quote = hello.quote
        note(3, "quote binds the enclave's channel key")

        # 4: genuine TEE?
        verifier = VerifierClient(network, cfg.verifier_address, cfg.verifier_public, source)
        try:
            verdict = verifier.verify(hello.quote_bytes)
        except EnclaveFMError as exc:
            raise _abort(4, exc) from exc
        if not verdict.signature_valid(cfg.verifier_public) or verdict.quote_digest != crypto.digest(hello.quote_bytes):
            raise DeploymentAborted(4, VERDICT_INVALID)
        platform_reasons = sorted(set(verdict.reasons) & PLATFORM_REASONS)
        if platform_reasons:
            raise DeploymentAborted(4, ",".join(platform_reasons))
        note(4, f"verifier confirms a genuine {quote.tee_type} TEE")

        # 5: the expected software?
        if cfg.defenses.measurement_check and quote.measurement != cfg.expected_measurement:
            raise DeploymentAborted(5, MEASUREMENT_MISMATCH, quote.measurement.hex())
        note(5, f"measurement {quote.measurement.hex()[:16]}... matches the provider's build")

        # 6: provision
        client = ServiceClient(conn, state.finish(), verdict, quote)
        try:
            client.call(P.Op.PROVISION, cfg.provisioning().to_bytes())
        except EnclaveFMError as exc:
            raise _abort(6, exc) from exc
        note(6, "secrets provisioned over the attested channel; payload loaded")

        # 7: the expected payload?
        try:
            payload_quote = client.attest_payload()
            check = verifier.verify(payload_quote)
        except (EnclaveFMError, DecodeError) as exc:
            raise _abort(7, exc) from exc
        platform_reasons = sorted(set(check.reasons) & PLATFORM_REASONS)
        if platform_reasons:
            raise DeploymentAborted(7, ",".join(platform_reasons))
        if payload_quote.measurement != quote.measurement:
            raise DeploymentAborted(7, MEASUREMENT_MISMATCH)
        mismatch = INDEX_DIGEST_MISMATCH if cfg.kind == "rag" else MODEL_DIGEST_MISMATCH
        if cfg.defenses.model_digest_check and payload_quote.report_data != cfg.expected_payload_digest:
            raise DeploymentAborted(7, mismatch, payload_quote.report_data.hex())
        note(7, f"enclave attests payload digest {payload_quote.report_data.hex()[:16]}...")
    finally:
        conn.close()

    return P.ServiceDescriptor(
        handle.address, cfg.kind, quote.measurement, quote.tee_type, quote.platform_id,
        payload_quote.report_data, cfg.verifier_address, cfg.verifier_public,
    )


def deploy_rag_chain(inference_cfg: ProviderConfig, rag_cfg: ProviderConfig, csp_address: str, network, *,
                     source: str = "provider", on_step=None) -> tuple[P.ServiceDescriptor, P.ServiceDescriptor]:
    """Deploy the retrieval enclave, then an inference enclave that attests and uses it."""
    rag = provider_deploy(rag_cfg, csp_address, network, source=source, on_step=on_step)
    inference = provider_deploy(replace(inference_cfg, rag=rag), csp_address, network, source=source,
                                on_step=on_step)
    return inference, rag


# -- files -------------------------------------------------------------------------

def render_key_file(key_id: bytes, key: bytes) -> str:
    return kvfile.render_pairs([("key_id", key_id.hex()), ("key", key.hex())])


def parse_key_file(text: str) -> tuple[bytes, bytes]:
    d = kvfile.parse_dict(text)
    try:
        key_id, key = bytes.fromhex(d["key_id"]), bytes.fromhex(d["key"])
    except (KeyError, ValueError) as exc:
        raise InvariantViolation(f"bad key file: {exc}") from exc
    if len(key_id) != 16 or len(key) != crypto.KEY_SIZE:
        raise InvariantViolation("key file needs a 16-byte key_id and a 32-byte key")
    return key_id, key


def parse_documents(text: str) -> dict:
    """One document per line: ``key tokens<TAB>document tokens``, comma-separated."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            key_s, doc_s = line.split("\t")
            key = tuple(int(t) for t in key_s.split(","))
            out[key] = [int(t) for t in doc_s.split(",") if t.strip()]
        except ValueError:
            raise InvariantViolation(f"documents line {lineno}: expected 'tokens<TAB>tokens'") from None
        if len(key) != P.RAG_KEY_TOKENS:
            raise InvariantViolation(f"documents line {lineno}: key must have {P.RAG_KEY_TOKENS} tokens")
    return out


def render_documents(documents: dict) -> str:
    return "".join(
        ",".join(map(str, k)) + "\t" + ",".join(map(str, documents[k])) + "\n" for k in sorted(documents)
    )


CONFIG_KEYS = {
    "kind", "tee_type", "manifest", "software_root", "package", "key_file", "documents",
    "expected_measurement", "expected_model_digest", "verifier_address", "verifier_public",
}


def load_provider_config(path: str | Path, *, verifier_address: str | None = None,
                         verifier_public: bytes | None = None) -> ProviderConfig:
    """Read a provider config file. Relative paths resolve against its directory.

    ``expected_measurement`` defaults to measuring ``manifest`` over
    ``software_root``; ``expected_model_digest`` defaults to decrypting the
    provider's own package with its key. The verifier keyword arguments
    fill in a verifier the file does not name.
    """
    path = Path(path)
    base = path.parent
    d = kvfile.parse_dict(path.read_text())
    unknown = set(d) - CONFIG_KEYS
    if unknown:
        raise InvariantViolation(f"unknown config keys {sorted(unknown)}")
    try:
        kind = d.get("kind", "inference")
        manifest_text = (base / d["manifest"]).read_text()
        tree = FileTree.from_directory(base / d["software_root"])
        verifier_address = d.get("verifier_address", verifier_address)
        if "verifier_public" in d:
            verifier_public = bytes.fromhex(d["verifier_public"])
        if verifier_address is None or verifier_public is None:
            raise KeyError("verifier_address" if verifier_address is None else "verifier_public")
    except KeyError as exc:
        raise InvariantViolation(f"config is missing {exc}") from exc
    manifest = parse_manifest(manifest_text)
    expected = bytes.fromhex(d["expected_measurement"]) if "expected_measurement" in d else \
        compute_measurement(manifest, tree)
    package = key_id = key = model_digest = b""
    documents = {}
    if kind == "inference":
        package = (base / d["package"]).read_bytes()
        key_id, key = parse_key_file((base / d["key_file"]).read_text())
        if "expected_model_digest" in d:
            model_digest = bytes.fromhex(d["expected_model_digest"])
        else:
            model_digest = unpack_model(EncryptedModelPackage.from_bytes(package), key).digest()
    elif kind == "rag":
        documents = parse_documents((base / d["documents"]).read_text())
    else:
        raise InvariantViolation(f"unknown kind {kind!r}")
    return ProviderConfig(
        kind, d.get("tee_type", "application"), manifest_text, tree, expected, verifier_address, verifier_public,
        package, key_id, key, model_digest, documents,
    )
