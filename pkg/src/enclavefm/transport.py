"""Framed message transport: in-process simulated network and TCP.

Every frame on every link is ``u32 length | u8 type | payload`` where the
length counts the type byte plus the payload. Both transports speak the same
framing and drive the same :class:`Service` objects, so a component tested on
:class:`SimNetwork` behaves identically over :class:`TcpNetwork`.

Services are synchronous state machines: a session receives one frame and
returns the frames to send back. That keeps the simulated network fully
deterministic and lets taps and interceptors sit on any link.
"""

from __future__ import annotations

import enum
import logging
import socket
import socketserver
import struct
import threading
import time
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass
from typing import Protocol

from .codec import DecodeError, Reader, Writer
from .errors import (
    BindFailed,
    ConnectionClosed,
    EnclaveFMError,
    ProtocolError,
    error_for_code,
)

log = logging.getLogger(__name__)

MAX_FRAME = 64 << 20
HEADER = struct.Struct(">IB")


class MsgType(enum.IntEnum):
    VERIFY_REQ = 0x01
    VERIFY_RESP = 0x02
    CLIENT_HELLO = 0x10
    SERVER_HELLO = 0x11
    RECORD = 0x12
    DEPLOY_REQ = 0x20
    DEPLOY_RESP = 0x21
    HOST_READ_REQ = 0x22
    HOST_READ_RESP = 0x23
    HOST_WRITE_REQ = 0x24
    HOST_LAYOUT_REQ = 0x25
    HOST_LAYOUT_RESP = 0x26
    HOST_OK = 0x27
    HOST_PACKAGE_REQ = 0x28
    HOST_PACKAGE_RESP = 0x29
    ERROR = 0x7F


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError("frame too large")
    return HEADER.pack(len(payload) + 1, msg_type) + payload


def decode_frame(frame: bytes) -> tuple[int, bytes]:
    if len(frame) < HEADER.size:
        raise ProtocolError("short frame")
    length, msg_type = HEADER.unpack_from(frame)
    if length != len(frame) - 4 or length < 1:
        raise ProtocolError("frame length mismatch")
    return msg_type, frame[HEADER.size:]


def error_payload(exc: BaseException) -> bytes:
    code = getattr(exc, "code", "PROTOCOL_ERROR")
    return Writer().text(code).text(str(exc)).getvalue()


def raise_error_payload(payload: bytes) -> None:
    try:
        r = Reader(payload)
        code, message = r.text(), r.text()
    except DecodeError:
        raise ProtocolError("malformed ERROR frame") from None
    raise error_for_code(code, message)


class CloseSession(Exception):
    """Raised by a session to send ``frames`` and then drop the connection."""

    def __init__(self, frames: list[tuple[int, bytes]] | None = None):
        super().__init__("session closed")
        self.frames = frames or []


class Session(Protocol):
    def handle(self, msg_type: int, payload: bytes) -> list[tuple[int, bytes]]: ...

    def close(self) -> None: ...


class Service(Protocol):
    def open_session(self, peer: str) -> Session: ...


def dispatch(session: Session, msg_type: int, payload: bytes) -> tuple[list[tuple[int, bytes]], bool]:
    """Run one frame through a session; returns (frames, keep_open)."""
    try:
        return session.handle(msg_type, payload), True
    except CloseSession as close:
        return close.frames, False
    except EnclaveFMError as exc:
        return [(MsgType.ERROR, error_payload(exc))], True
    except DecodeError as exc:
        return [(MsgType.ERROR, error_payload(ProtocolError(str(exc))))], True


# -- taps ------------------------------------------------------------------------

@dataclass(frozen=True)
class TapRecord:
    link: str
    direction: str  # "c2s" or "s2c"
    timestamp: float
    data: bytes


class TapPoint:
    """Append-only log of frames crossing one or more links."""

    def __init__(self, link_filter: str | None = None):
        self.link_filter = link_filter
        self._records: list[TapRecord] = []
        self._lock = threading.Lock()

    def observe(self, record: TapRecord) -> None:
        if self.link_filter is not None and record.link != self.link_filter:
            return
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> tuple[TapRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def captured(self) -> bytes:
        return b"".join(r.data for r in self.records)

    def links(self) -> set[str]:
        return {r.link for r in self.records}


Interceptor = Callable[[str, bytes], bytes]


class _Taps:
    def __init__(self):
        self._taps: list[TapPoint] = []
        self._lock = threading.Lock()

    def add(self, tap: TapPoint) -> TapPoint:
        with self._lock:
            self._taps.append(tap)
        return tap

    def emit(self, link: str, direction: str, data: bytes) -> None:
        record = TapRecord(link, direction, time.monotonic(), bytes(data))
        with self._lock:
            taps = list(self._taps)
        for tap in taps:
            tap.observe(record)


# -- simulated network -------------------------------------------------------------

class Listener:
    def __init__(self, address: str, closer: Callable[[], None]):
        self.address = address
        self._closer = closer

    def close(self) -> None:
        self._closer()


class SimConnection:
    def __init__(self, network: "SimNetwork", link: str, address: str, session: Session):
        self._net = network
        self.link = link
        self.address = address
        self._session = session
        self._inbox: deque[bytes] = deque()
        self._open = True

    @property
    def open(self) -> bool:
        return self._open or bool(self._inbox)

    def send_frame(self, frame: bytes) -> None:
        if not self._open:
            raise ConnectionClosed(f"connection to {self.address} is closed")
        frame = self._net._intercept(self.address, "c2s", frame)
        self._net._taps.emit(self.link, "c2s", frame)
        try:
            msg_type, payload = decode_frame(frame)
        except ProtocolError as exc:
            out, keep = [(MsgType.ERROR, error_payload(exc))], True
        else:
            out, keep = dispatch(self._session, msg_type, payload)
        for t, p in out:
            reply = self._net._intercept(self.address, "s2c", encode_frame(t, p))
            self._net._taps.emit(self.link, "s2c", reply)
            self._inbox.append(reply)
        if not keep:
            self._shutdown()

    def send(self, msg_type: int, payload: bytes) -> None:
        self.send_frame(encode_frame(msg_type, payload))

    def recv(self) -> tuple[int, bytes]:
        if self._inbox:
            return decode_frame(self._inbox.popleft())
        if not self._open:
            raise ConnectionClosed(f"connection to {self.address} closed by peer")
        raise ProtocolError("no frame pending")

    def _shutdown(self) -> None:
        if self._open:
            self._open = False
            self._session.close()

    def close(self) -> None:
        self._shutdown()


class SimNetwork:
    """Deterministic in-process network with taps and interceptors."""

    def __init__(self):
        self._services: dict[str, Service] = {}
        self._interceptors: dict[str, list[Interceptor]] = {}
        self._taps = _Taps()
        self._lock = threading.Lock()
        self._counter = 0

    def ephemeral_address(self, hint: str) -> str:
        with self._lock:
            self._counter += 1
            return f"{hint}-{self._counter}"

    def listen(self, address: str, service: Service) -> Listener:
        with self._lock:
            if address in self._services:
                raise BindFailed(f"address {address!r} already bound")
            self._services[address] = service
        return Listener(address, lambda: self._services.pop(address, None))

    def connect(self, address: str, source: str = "client") -> SimConnection:
        service = self._services.get(address)
        if service is None:
            raise ConnectionClosed(f"nothing listening at {address!r}")
        return SimConnection(self, f"{source}->{address}", address, service.open_session(source))

    def tap(self, link: str | None = None) -> TapPoint:
        return self._taps.add(TapPoint(link))

    def add_interceptor(self, address: str, fn: Interceptor) -> None:
        self._interceptors.setdefault(address, []).append(fn)

    def clear_interceptors(self) -> None:
        self._interceptors.clear()

    def _intercept(self, address: str, direction: str, frame: bytes) -> bytes:
        for fn in self._interceptors.get(address, ()):
            frame = fn(direction, frame)
        return frame


# -- TCP -------------------------------------------------------------------------------

def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionClosed("peer closed the connection")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    head = _read_exact(sock, 4)
    (length,) = struct.unpack(">I", head)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    return head + _read_exact(sock, length)


def split_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise BindFailed(f"address {address!r} is not host:port")
    return host, int(port)


class TcpConnection:
    def __init__(self, network: "TcpNetwork", address: str, source: str, timeout: float):
        self._net = network
        self.address = address
        self.link = f"{source}->{address}"
        try:
            self._sock = socket.create_connection(split_address(address), timeout=timeout)
        except OSError as exc:
            raise ConnectionClosed(f"cannot connect to {address}: {exc}") from exc
        self._open = True

    @property
    def open(self) -> bool:
        return self._open

    def send_frame(self, frame: bytes) -> None:
        if not self._open:
            raise ConnectionClosed("connection closed")
        self._net._taps.emit(self.link, "c2s", frame)
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            self._open = False
            raise ConnectionClosed(str(exc)) from exc

    def send(self, msg_type: int, payload: bytes) -> None:
        self.send_frame(encode_frame(msg_type, payload))

    def recv(self) -> tuple[int, bytes]:
        try:
            frame = read_frame(self._sock)
        except ConnectionClosed:
            self._open = False
            raise
        except OSError as exc:
            self._open = False
            raise ConnectionClosed(str(exc)) from exc
        self._net._taps.emit(self.link, "s2c", frame)
        return decode_frame(frame)

    def close(self) -> None:
        if self._open:
            self._open = False
            self._sock.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: Service = self.server.service  # type: ignore[attr-defined]
        session = service.open_session("%s:%d" % self.client_address[:2])
        sock: socket.socket = self.request
        try:
            while True:
                try:
                    frame = read_frame(sock)
                except ConnectionClosed:
                    return
                except ProtocolError as exc:
                    sock.sendall(encode_frame(MsgType.ERROR, error_payload(exc)))
                    return
                msg_type, payload = decode_frame(frame)
                out, keep = dispatch(session, msg_type, payload)
                for t, p in out:
                    sock.sendall(encode_frame(t, p))
                if not keep:
                    return
        except OSError as exc:
            log.debug("connection error: %s", exc)
        finally:
            session.close()


class _Server(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class TcpNetwork:
    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout
        self._taps = _Taps()

    def ephemeral_address(self, hint: str) -> str:
        return "127.0.0.1:0"

    def listen(self, address: str, service: Service) -> Listener:
        try:
            server = _Server(split_address(address), _Handler)
        except OSError as exc:
            raise BindFailed(f"cannot bind {address}: {exc}") from exc
        server.service = service  # type: ignore[attr-defined]
        thread = threading.Thread(target=server.serve_forever, name=f"serve-{address}", daemon=True)
        thread.start()
        host, port = server.server_address[:2]

        def close():
            server.shutdown()
            server.server_close()

        return Listener(f"{host}:{port}", close)

    def connect(self, address: str, source: str = "client") -> TcpConnection:
        return TcpConnection(self, address, source, self.timeout)

    def tap(self, link: str | None = None) -> TapPoint:
        return self._taps.add(TapPoint(link))


def request(conn, msg_type: int, payload: bytes, expect: int) -> bytes:
    """Send one frame and return the payload of the expected reply type."""
    conn.send(msg_type, payload)
    reply_type, reply = conn.recv()
    if reply_type == MsgType.ERROR:
        raise_error_payload(reply)
    if reply_type != expect:
        raise ProtocolError(f"expected message type {expect:#x}, got {reply_type:#x}")
    return reply
