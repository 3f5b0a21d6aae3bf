"""Attacks by a network eavesdropper, a host-privileged tamperer and a dishonest CSP.

Each scenario runs against a freshly built deployment and reports whether
the defense held. Attacks only use what the host has: network taps and
interceptors, the CSP's host endpoints (physical memory, stored package)
and the CSP's control over what it launches. They never touch an enclave's
owner capability.

``Fixture.defenses`` can switch a single defense off. Running a scenario
against the matching switch is the negative control: the harness must then
report the attack as NOT blocked, which shows it detects real leaks.
"""

from __future__ import annotations

import enum
import json
import random
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field

from .codec import encode_tokens
from .defenses import ALL_ON, Defenses
from .errors import (
    ChannelError,
    DeploymentAborted,
    EnclaveFMError,
    FixtureUnhealthy,
    ServiceCrashed,
)
from .inference import greedy_decode
from .enclave import PAGE_SIZE
from .manifest import FileTree, parse_manifest
from .orchestrator import CspAdminClient, CspBehavior, user_prompt
from .testbed import Testbed, build_testbed, sample_manifest
from .transport import SimNetwork, TcpNetwork

WINDOW = 16
REPORT_VERSION = 1


class AttackKind(str, enum.Enum):
    EAVESDROP_NETWORK = "EAVESDROP_NETWORK"
    EAVESDROP_MEMORY = "EAVESDROP_MEMORY"
    TAMPER_MEMORY = "TAMPER_MEMORY"
    TAMPER_PACKAGE = "TAMPER_PACKAGE"
    CSP_SWAP_MODEL = "CSP_SWAP_MODEL"
    CSP_SWAP_SOFTWARE = "CSP_SWAP_SOFTWARE"


# the defense each scenario exercises, for negative controls
DEFENSE_FOR = {
    AttackKind.EAVESDROP_NETWORK: "channel_encryption",
    AttackKind.EAVESDROP_MEMORY: "memory_encryption",
    AttackKind.TAMPER_MEMORY: "memory_integrity",
    AttackKind.TAMPER_PACKAGE: "package_authentication",
    AttackKind.CSP_SWAP_MODEL: "model_digest_check",
    AttackKind.CSP_SWAP_SOFTWARE: "measurement_check",
}

DEFAULT_PARAMS = {
    AttackKind.EAVESDROP_NETWORK: {"sessions": 1, "prompt_length": 8, "seed": 0},
    AttackKind.EAVESDROP_MEMORY: {},
    AttackKind.TAMPER_MEMORY: {"page": 1, "byte": 17, "bit": 3},
    AttackKind.TAMPER_PACKAGE: {"byte": 200, "bit": 0},
    AttackKind.CSP_SWAP_MODEL: {"replacement_seed": 1001},
    AttackKind.CSP_SWAP_SOFTWARE: {"path": None, "byte": 0},
}


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"{self.kind.value} takes no parameters {sorted(unknown)}")
        object.__setattr__(self, "params", {**DEFAULT_PARAMS[self.kind], **self.params})


@dataclass(frozen=True)
class AttackReport:
    scenario: str
    blocked: bool
    evidence: dict
    params: dict = field(default_factory=dict)
    disabled_defenses: tuple[str, ...] = ()

    def to_json(self) -> str:
        d = asdict(self)
        d["disabled_defenses"] = list(self.disabled_defenses)
        return json.dumps({"type": "attack", **d}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "AttackReport":
        d = json.loads(line)
        if d.pop("type", None) != "attack":
            raise ValueError("not an attack record")
        d["disabled_defenses"] = tuple(d["disabled_defenses"])
        return cls(**d)


@dataclass(frozen=True)
class SuiteReport:
    reports: tuple[AttackReport, ...]
    expect_blocked: bool = True

    @property
    def passed(self) -> bool:
        return all(r.blocked == self.expect_blocked for r in self.reports)

    def to_jsonl(self) -> str:
        header = json.dumps({"type": "header", "version": REPORT_VERSION, "expect_blocked": self.expect_blocked})
        summary = json.dumps({
            "type": "summary", "passed": self.passed, "total": len(self.reports),
            "blocked": sum(r.blocked for r in self.reports),
        })
        return "\n".join([header, *(r.to_json() for r in self.reports), summary]) + "\n"


@dataclass(frozen=True)
class Fixture:
    """How to build a deployment for an attack run."""

    defenses: Defenses = ALL_ON
    seed: int = 1
    transport: str = "inproc"

    def build(self, behavior: CspBehavior | None = None) -> Testbed:
        network = SimNetwork() if self.transport == "inproc" else TcpNetwork(timeout=10.0)
        return build_testbed(network=network, defenses=self.defenses, behavior=behavior, seed=self.seed)

    @property
    def disabled(self) -> tuple[str, ...]:
        return tuple(name for name in ALL_ON.__dataclass_fields__ if not getattr(self.defenses, name))


# -- containment scan ----------------------------------------------------------------

def windows(secret: bytes, size: int = WINDOW) -> set[bytes]:
    if len(secret) <= size:
        return {bytes(secret)}
    return {secret[i:i + size] for i in range(len(secret) - size + 1)}


def containment_hits(haystack: bytes, secret: bytes, size: int = WINDOW) -> int:
    """Number of offsets in ``haystack`` where some ``size``-byte window of ``secret`` occurs."""
    if len(secret) <= size:
        count, start = 0, haystack.find(secret)
        while start != -1:
            count += 1
            start = haystack.find(secret, start + 1)
        return count
    needles = windows(secret, size)
    return sum(1 for i in range(len(haystack) - size + 1) if haystack[i:i + size] in needles)


# -- health ---------------------------------------------------------------------------

def check_health(fixture: Fixture) -> None:
    """An honest deployment must work end to end before any attack is judged."""
    try:
        with fixture.build() as tb:
            descriptor = tb.deploy()
            prompt = [1, 2, 3, 4]
            got = user_prompt(descriptor, prompt, tb.network, max_new_tokens=4, defenses=fixture.defenses)
            if got.completion != greedy_decode(tb.weights, prompt, 4):
                raise FixtureUnhealthy("service output differs from the reference model")
    except FixtureUnhealthy:
        raise
    except EnclaveFMError as exc:
        raise FixtureUnhealthy(f"honest deployment failed: {exc}") from exc


# -- scenarios ------------------------------------------------------------------------

def _eavesdrop_network(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    rng = random.Random(params["seed"])
    with fixture.build() as tb:
        tap = tb.network.tap()
        inference, _ = tb.deploy_chain()
        vocab = tb.weights.vocab_size
        prompts = []
        for _ in range(params["sessions"]):
            prompt = [rng.randrange(vocab) for _ in range(params["prompt_length"])]
            if rng.random() < 0.5:  # half the sessions hit a retrieval document
                prompt[:2] = rng.choice(sorted(tb.rag_cfg.documents))
            prompts.append(prompt)
            user_prompt(inference, prompt, tb.network, max_new_tokens=4, defenses=fixture.defenses)
        captured = tap.captured()
        weight_hits = containment_hits(captured, tb.weights.serialize())
        prompt_hits = sum(containment_hits(captured, encode_tokens(p)) for p in prompts)
        document_hits = sum(containment_hits(captured, encode_tokens(d)) for d in tb.rag_cfg.documents.values())
        key_hits = containment_hits(captured, tb.model_key)
        evidence = {
            "captured_bytes": len(captured), "frames": len(tap.records), "links": sorted(tap.links()),
            "sessions": len(prompts), "weight_window_hits": weight_hits, "prompt_hits": prompt_hits,
            "document_hits": document_hits, "model_key_hits": key_hits,
        }
    return weight_hits + prompt_hits + document_hits + key_hits == 0, evidence


def _model_region(admin: CspAdminClient, address: str):
    _, regions = admin.layout(address)
    for region in regions:
        if region.label == "model":
            return region
    raise FixtureUnhealthy("no model region in enclave layout")


def _eavesdrop_memory(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    with fixture.build() as tb:
        descriptor = tb.deploy()
        admin = CspAdminClient(tb.network, tb.csp_address)
        region = _model_region(admin, descriptor.address)
        dump = admin.read(descriptor.address, region.offset, region.length)
        plaintext = tb.weights.serialize()
        hits = containment_hits(dump, plaintext)
        evidence = {
            "region_offset": region.offset, "bytes_read": len(dump), "weight_window_hits": hits,
            "identical_to_plaintext": dump == plaintext,
        }
    return hits == 0 and dump != plaintext, evidence


def _tamper_memory(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    with fixture.build() as tb:
        descriptor = tb.deploy()
        admin = CspAdminClient(tb.network, tb.csp_address)
        region = _model_region(admin, descriptor.address)
        pages = -(-region.length // PAGE_SIZE)
        page = params["page"] % pages
        offset = region.offset + page * PAGE_SIZE + params["byte"] % min(PAGE_SIZE, region.length - page * PAGE_SIZE)
        prompt = [3, 1, 4, 1, 5]
        before = user_prompt(descriptor, prompt, tb.network, max_new_tokens=4, defenses=fixture.defenses)
        admin.flip_bit(descriptor.address, offset, params["bit"])
        evidence = {"offset": offset, "bit": params["bit"], "before": before.completion}
        outcome = None
        try:
            after = user_prompt(descriptor, prompt, tb.network, max_new_tokens=4, defenses=fixture.defenses)
            evidence["after"] = after.completion
            outcome = "COMPLETED"
        except ServiceCrashed:
            outcome = ServiceCrashed.code
        except EnclaveFMError as exc:
            outcome = exc.code
        evidence["outcome"] = outcome
        inst = tb.csp.instances[descriptor.address]
        evidence["enclave_crashed"] = inst.enclave.crashed
        # a crashed enclave stays crashed: a fresh session is refused as well
        try:
            user_prompt(descriptor, prompt, tb.network, max_new_tokens=1, defenses=fixture.defenses)
            evidence["next_session"] = "COMPLETED"
        except EnclaveFMError as exc:
            evidence["next_session"] = exc.code
    blocked = outcome == ServiceCrashed.code and evidence["next_session"] == ServiceCrashed.code
    return blocked, evidence


def _deploy_outcome(tb: Testbed) -> dict:
    try:
        descriptor = tb.deploy()
    except DeploymentAborted as exc:
        return {"outcome": "ABORTED", "step": exc.step, "reason": exc.reason}
    return {"outcome": "DEPLOYED", "payload_digest": descriptor.payload_digest.hex()}


def _tamper_package(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    def flip(package: bytes) -> bytes:
        data = bytearray(package)
        data[params["byte"] % len(data)] ^= 1 << params["bit"]
        return bytes(data)

    with fixture.build(CspBehavior(tamper_package=flip)) as tb:
        evidence = _deploy_outcome(tb)
    # the package authentication itself must reject the load
    blocked = evidence.get("step") == 6 and evidence.get("reason") == "DECRYPT_FAIL"
    return blocked, evidence


def _swap_model(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    with fixture.build() as tb:
        # another model the provider once encrypted under the same key
        tb.csp.behavior = CspBehavior(swap_package=tb.package_for(params["replacement_seed"]))
        evidence = _deploy_outcome(tb)
    blocked = evidence.get("step") == 7 and evidence.get("reason") == "MODEL_DIGEST_MISMATCH"
    return blocked, evidence


def _swap_software(fixture: Fixture, params: dict) -> tuple[bool, dict]:
    path = params["path"] or parse_manifest(sample_manifest("inference")).entrypoint

    def swap(tree: FileTree) -> FileTree:
        data = bytearray(tree[path])
        data[params["byte"] % len(data)] ^= 0x01
        return tree.replace(path, bytes(data))

    with fixture.build(CspBehavior(swap_software=swap)) as tb:
        evidence = _deploy_outcome(tb)
    evidence["path"] = path
    blocked = evidence.get("step") == 5 and evidence.get("reason") == "MEASUREMENT_MISMATCH"
    return blocked, evidence


RUNNERS = {
    AttackKind.EAVESDROP_NETWORK: _eavesdrop_network,
    AttackKind.EAVESDROP_MEMORY: _eavesdrop_memory,
    AttackKind.TAMPER_MEMORY: _tamper_memory,
    AttackKind.TAMPER_PACKAGE: _tamper_package,
    AttackKind.CSP_SWAP_MODEL: _swap_model,
    AttackKind.CSP_SWAP_SOFTWARE: _swap_software,
}


def run_attack(scenario: AttackScenario | str, fixture: Fixture = Fixture(), *, health_check: bool = True) -> AttackReport:
    if not isinstance(scenario, AttackScenario):
        scenario = AttackScenario(AttackKind(scenario))
    if health_check:
        check_health(fixture)
    try:
        blocked, evidence = RUNNERS[scenario.kind](fixture, scenario.params)
    except ChannelError as exc:
        blocked, evidence = False, {"outcome": "ERROR", "error": str(exc)}
    return AttackReport(scenario.kind.value, blocked, evidence, dict(scenario.params), fixture.disabled)


def run_all(fixture: Fixture = Fixture(), kinds: Iterable[AttackKind] = tuple(AttackKind)) -> SuiteReport:
    check_health(fixture)
    return SuiteReport(tuple(run_attack(AttackScenario(k), fixture, health_check=False) for k in kinds))


def run_negative_controls(fixture: Fixture = Fixture(), kinds: Iterable[AttackKind] = tuple(AttackKind)) -> SuiteReport:
    """Each scenario against a fixture with exactly its defense switched off."""
    reports = []
    for kind in kinds:
        weakened = Fixture(fixture.defenses.without(DEFENSE_FOR[kind]), fixture.seed, fixture.transport)
        reports.append(run_attack(AttackScenario(kind), weakened))
    return SuiteReport(tuple(reports), expect_blocked=False)
