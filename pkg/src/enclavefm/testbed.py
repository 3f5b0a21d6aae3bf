"""A complete deployment on one network: verifier, CSP, provider configs.

Used by the demo, the attack harness and the tests. Everything is built
from the sample software tree shipped with the package plus a generated
model, so a testbed needs no files on disk.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from . import crypto
from .defenses import ALL_ON, Defenses
from .enclave import TEE_TYPES, PlatformRoot
from .manifest import FileTree, compute_measurement, parse_manifest
from .model_store import ModelWeights, pack_model
from .orchestrator import CspBehavior, CspHost, ProviderConfig, ServiceDescriptor, deploy_rag_chain, provider_deploy
from .transport import SimNetwork
from .verifier import ReferencePolicy, Verifier

SAMPLE_DIR = Path(__file__).parent / "data" / "sample"
KINDS = ("inference", "rag")


def sample_manifest(kind: str) -> str:
    return (SAMPLE_DIR / f"{kind}.manifest").read_text()


def sample_software() -> FileTree:
    return FileTree.from_directory(SAMPLE_DIR / "software")


def sample_measurement(kind: str) -> bytes:
    return compute_measurement(parse_manifest(sample_manifest(kind)), sample_software())


@lru_cache(maxsize=16)
def cached_weights(seed: int, vocab_size: int = 256, embed_dim: int = 64, context_window: int = 8) -> ModelWeights:
    return ModelWeights.generate(seed, vocab_size, embed_dim, context_window)


def sample_documents(vocab_size: int = 256, count: int = 8, length: int = 6) -> dict:
    """Deterministic index: key ``(2i, 2i+1)`` maps to a short token run."""
    return {
        (2 * i % vocab_size, (2 * i + 1) % vocab_size): [(7 * i + 3 * j + 11) % vocab_size for j in range(length)]
        for i in range(count)
    }


@dataclass
class Testbed:
    network: object
    platforms: dict
    verifier: Verifier
    verifier_address: str
    csp: CspHost
    csp_address: str
    weights: ModelWeights
    model_key: bytes = field(repr=False)
    key_id: bytes
    package: bytes = field(repr=False)
    inference_cfg: ProviderConfig = field(repr=False)
    rag_cfg: ProviderConfig = field(repr=False)
    _listeners: list = field(default_factory=list, repr=False)

    def deploy(self, cfg: ProviderConfig | None = None, on_step=None) -> ServiceDescriptor:
        return provider_deploy(cfg or self.inference_cfg, self.csp_address, self.network, on_step=on_step)

    def deploy_chain(self, on_step=None) -> tuple[ServiceDescriptor, ServiceDescriptor]:
        return deploy_rag_chain(self.inference_cfg, self.rag_cfg, self.csp_address, self.network, on_step=on_step)

    def package_for(self, seed: int) -> bytes:
        """Another model encrypted under the provider's key."""
        w = cached_weights(seed, self.weights.vocab_size, self.weights.embed_dim, self.weights.context_window)
        return pack_model(w, self.model_key, self.key_id).to_bytes()

    def close(self) -> None:
        self.csp.close()
        for listener in self._listeners:
            listener.close()
        self._listeners.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def build_testbed(*, network=None, defenses: Defenses = ALL_ON, behavior: CspBehavior | None = None,
                  seed: int = 1, vocab_size: int = 256, embed_dim: int = 64, context_window: int = 8,
                  enclave_tax: float = 0.0, tee_type: str = "application",
                  platform_seed: bytes | None = None) -> Testbed:
    network = network or SimNetwork()
    platforms = {
        t: PlatformRoot.generate(t, None if platform_seed is None else platform_seed + t.encode()) for t in TEE_TYPES
    }
    software = sample_software()
    policy = ReferencePolicy(
        frozenset(sample_measurement(k) for k in KINDS),
        frozenset(TEE_TYPES),
        {p.platform_id: p.root_public for p in platforms.values()},
    )
    verifier = Verifier(policy)
    sim = isinstance(network, SimNetwork)
    verifier_listener = network.listen("verifier" if sim else "127.0.0.1:0", verifier)
    csp = CspHost(network, platforms, enclave_tax=enclave_tax, defenses=defenses, behavior=behavior)
    csp_listener = csp.serve("csp" if sim else "127.0.0.1:0")

    weights = cached_weights(seed, vocab_size, embed_dim, context_window)
    model_key = os.urandom(crypto.KEY_SIZE)
    key_id = crypto.digest(b"key-id" + model_key)[:16]
    package = pack_model(weights, model_key, key_id).to_bytes()
    common = dict(
        tee_type=tee_type, tree=software, verifier_address=verifier_listener.address,
        verifier_public=verifier.public, defenses=defenses,
    )
    inference_cfg = ProviderConfig(
        kind="inference", manifest_text=sample_manifest("inference"),
        expected_measurement=sample_measurement("inference"), package=package, key_id=key_id,
        model_key=model_key, expected_model_digest=weights.digest(), **common,
    )
    rag_cfg = ProviderConfig(
        kind="rag", manifest_text=sample_manifest("rag"), expected_measurement=sample_measurement("rag"),
        documents=sample_documents(vocab_size), **common,
    )
    return Testbed(
        network, platforms, verifier, verifier_listener.address, csp, csp_listener.address, weights,
        model_key, key_id, package, inference_cfg, rag_cfg, [verifier_listener],
    )
