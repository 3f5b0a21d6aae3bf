"""The cloud service provider's host: launches enclaves and exposes host powers.

The CSP is untrusted. Besides deploying, its endpoint lets anyone with host
access read and write enclave physical memory and read or replace the model
package it stores on behalf of the provider. :class:`CspBehavior` scripts a
misbehaving CSP for the adversary harness.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable
from dataclasses import dataclass, field

from ..codec import Reader, Writer
from ..defenses import ALL_ON, Defenses
from ..enclave import Enclave, PlatformRoot, launch_enclave
from ..errors import ProtocolError
from ..manifest import FileTree, parse_manifest
from ..transport import Listener, MsgType, request
from . import protocol as P
from .apps import APPS, EnclaveApp

log = logging.getLogger(__name__)


@dataclass
class CspBehavior:
    """Hooks a malicious CSP applies before launching or when storing packages."""

    swap_software: Callable[[FileTree], FileTree] | None = None
    swap_package: bytes | None = None
    tamper_package: Callable[[bytes], bytes] | None = None


@dataclass
class Instance:
    address: str
    kind: str
    enclave: Enclave
    app: EnclaveApp
    listener: Listener
    package: bytes = field(default=b"", repr=False)


class CspHost:
    def __init__(self, network, platforms: dict[str, PlatformRoot], *, enclave_tax: float = 0.0,
                 defenses: Defenses = ALL_ON, behavior: CspBehavior | None = None, name: str = "csp"):
        self.network = network
        self.platforms = dict(platforms)
        self.enclave_tax = enclave_tax
        self.defenses = defenses
        self.behavior = behavior or CspBehavior()
        self.name = name
        self.instances: dict[str, Instance] = {}
        self._lock = threading.Lock()
        self._listener: Listener | None = None

    # -- lifecycle ---------------------------------------------------------

    def serve(self, address: str) -> Listener:
        self._listener = self.network.listen(address, self)
        self.name = self._listener.address
        return self._listener

    @property
    def address(self) -> str:
        if self._listener is None:
            raise ProtocolError("CSP is not serving")
        return self._listener.address

    def close(self) -> None:
        for inst in list(self.instances.values()):
            inst.listener.close()
        self.instances.clear()
        if self._listener is not None:
            self._listener.close()
            self._listener = None

    # -- deployment --------------------------------------------------------

    def deploy(self, req: P.DeploymentRequest) -> Instance:
        app_cls = APPS.get(req.kind)
        if app_cls is None:
            raise ProtocolError(f"unknown service kind {req.kind!r}")
        platform = self.platforms.get(req.tee_type)
        if platform is None:
            raise ProtocolError(f"this host offers no {req.tee_type!r} TEE")
        manifest = parse_manifest(req.manifest_text)
        tree = req.tree
        if self.behavior.swap_software is not None:
            tree = self.behavior.swap_software(tree)
        package = req.package
        if self.behavior.swap_package is not None:
            package = self.behavior.swap_package
        if self.behavior.tamper_package is not None:
            package = self.behavior.tamper_package(package)
        enclave = launch_enclave(platform, manifest, tree, self.defenses)
        holder: dict = {}
        address = self.network.ephemeral_address(f"{self.name}/enclave")
        app = app_cls(
            enclave.enter(), self.network, package_source=lambda: holder["instance"].package,
            defenses=self.defenses, enclave_tax=self.enclave_tax, name=f"enclave@{address}",
        )
        listener = self.network.listen(address, app)
        app.name = f"enclave@{listener.address}"
        inst = Instance(listener.address, req.kind, enclave, app, listener, package)
        holder["instance"] = inst
        with self._lock:
            self.instances[inst.address] = inst
        log.info("launched %s enclave at %s", req.kind, inst.address)
        return inst

    def instance(self, address: str) -> Instance:
        inst = self.instances.get(address)
        if inst is None:
            raise ProtocolError(f"no enclave at {address!r}")
        return inst

    # -- Service protocol --------------------------------------------------

    def open_session(self, peer: str) -> "_CspSession":
        return _CspSession(self)


class _CspSession:
    def __init__(self, host: CspHost):
        self.host = host

    def handle(self, msg_type: int, payload: bytes):
        r = Reader(payload)
        if msg_type == MsgType.DEPLOY_REQ:
            inst = self.host.deploy(P.DeploymentRequest.from_bytes(payload))
            handle = P.DeploymentHandle(inst.address, inst.enclave.platform.platform_id)
            return [(MsgType.DEPLOY_RESP, handle.to_bytes())]
        if msg_type == MsgType.HOST_LAYOUT_REQ:
            inst = self.host.instance(r.text())
            r.done()
            w = Writer().u64(inst.enclave.size).u32(len(inst.enclave.regions))
            for region in inst.enclave.regions:
                w.u64(region.offset).u64(region.length).text(region.label)
            return [(MsgType.HOST_LAYOUT_RESP, w.getvalue())]
        if msg_type == MsgType.HOST_READ_REQ:
            inst = self.host.instance(r.text())
            offset, length = r.u64(), r.u32()
            r.done()
            return [(MsgType.HOST_READ_RESP, inst.enclave.host_read(offset, length))]
        if msg_type == MsgType.HOST_WRITE_REQ:
            inst = self.host.instance(r.text())
            offset, data = r.u64(), r.blob()
            r.done()
            inst.enclave.host_write(offset, data)
            return [(MsgType.HOST_OK, b"")]
        if msg_type == MsgType.HOST_PACKAGE_REQ:
            inst = self.host.instance(r.text())
            replace, data = r.u8(), r.blob()
            r.done()
            if replace:
                inst.package = data
            return [(MsgType.HOST_PACKAGE_RESP, Writer().blob(inst.package).getvalue())]
        raise ProtocolError(f"unexpected message type {msg_type:#x}")

    def close(self) -> None:
        pass


@dataclass(frozen=True)
class HostRegion:
    offset: int
    length: int
    label: str


class CspAdminClient:
    """Host-level access to a CSP: what a malicious administrator can do."""

    def __init__(self, network, csp_address: str, source: str = "csp-admin"):
        self.network = network
        self.address = csp_address
        self.source = source

    def _call(self, msg_type: int, payload: bytes, expect: int) -> bytes:
        conn = self.network.connect(self.address, self.source)
        try:
            return request(conn, msg_type, payload, expect)
        finally:
            conn.close()

    def deploy(self, req: P.DeploymentRequest) -> P.DeploymentHandle:
        return P.DeploymentHandle.from_bytes(self._call(MsgType.DEPLOY_REQ, req.to_bytes(), MsgType.DEPLOY_RESP))

    def layout(self, instance: str) -> tuple[int, list[HostRegion]]:
        r = Reader(self._call(MsgType.HOST_LAYOUT_REQ, Writer().text(instance).getvalue(), MsgType.HOST_LAYOUT_RESP))
        size = r.u64()
        regions = [HostRegion(r.u64(), r.u64(), r.text()) for _ in range(r.u32())]
        r.done()
        return size, regions

    def read(self, instance: str, offset: int, length: int) -> bytes:
        payload = Writer().text(instance).u64(offset).u32(length).getvalue()
        return self._call(MsgType.HOST_READ_REQ, payload, MsgType.HOST_READ_RESP)

    def write(self, instance: str, offset: int, data: bytes) -> None:
        self._call(MsgType.HOST_WRITE_REQ, Writer().text(instance).u64(offset).blob(data).getvalue(), MsgType.HOST_OK)

    def flip_bit(self, instance: str, offset: int, bit: int) -> None:
        byte = self.read(instance, offset, 1)[0]
        self.write(instance, offset, bytes([byte ^ (1 << bit)]))

    def package(self, instance: str, replace: bytes | None = None) -> bytes:
        payload = Writer().text(instance).u8(replace is not None).blob(replace or b"").getvalue()
        r = Reader(self._call(MsgType.HOST_PACKAGE_REQ, payload, MsgType.HOST_PACKAGE_RESP))
        data = r.blob()
        r.done()
        return data


__all__ = ["CspHost", "CspBehavior", "CspAdminClient", "HostRegion", "Instance"]
