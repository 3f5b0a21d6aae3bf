"""Big-endian, length-prefixed binary encoding shared by every wire format."""

from __future__ import annotations

import struct


class DecodeError(ValueError):
    pass


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">B", v))
        return self

    def u16(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">H", v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">I", v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(struct.pack(">Q", v))
        return self

    def raw(self, b: bytes) -> "Writer":
        self._parts.append(bytes(b))
        return self

    def blob(self, b: bytes) -> "Writer":
        """u32 length followed by the bytes."""
        self._parts.append(struct.pack(">I", len(b)))
        self._parts.append(bytes(b))
        return self

    def text(self, s: str) -> "Writer":
        return self.blob(s.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = memoryview(bytes(data))
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError(f"truncated: need {n} bytes at offset {self._pos}")
        out = self._data[self._pos:self._pos + n].tobytes()
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self, max_len: int | None = None) -> bytes:
        n = self.u32()
        if max_len is not None and n > max_len:
            raise DecodeError(f"field length {n} exceeds {max_len}")
        return self._take(n)

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from exc

    def rest(self) -> bytes:
        return self._take(len(self._data) - self._pos)

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def done(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes")


def encode_tokens(tokens) -> bytes:
    """Token sequences travel as u32 count + u32 per token."""
    return struct.pack(f">I{len(tokens)}I", len(tokens), *tokens)


def decode_tokens(r: Reader) -> list[int]:
    n = r.u32()
    if n > 1 << 20:
        raise DecodeError("token sequence too long")
    return list(struct.unpack(f">{n}I", r.raw(4 * n)))
