"""Enclave manifests: parsing, validation against a file tree, measurement.

Text format, one ``key = value`` per line, ``#`` starts a comment::

    enclave_size = 16M
    thread_count = 4
    entrypoint = app/server.py
    trusted_file = app/server.py
    trusted_file = lib/libtoy.so
    allowed_file = models/model.fmte
    key_provider = provider://attested-channel
    attestation_mode = remote

``trusted_file`` and ``allowed_file`` may repeat; every other key may appear
once. Trusted files are bound into the measurement by content digest; allowed
files are only listed (path, not content).
"""

from __future__ import annotations

import os
import posixpath
import re
from collections.abc import Iterator, Mapping
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .codec import Writer
from .errors import (
    DuplicateKey,
    InvariantViolation,
    ManifestSyntaxError,
    ValidationFailed,
)

MIB = 1 << 20
ATTESTATION_MODES = ("none", "local", "remote")
MEASUREMENT_TAG = b"enclavefm/measurement/v1"

_SCALAR_KEYS = ("enclave_size", "thread_count", "entrypoint", "key_provider", "attestation_mode")
_LIST_KEYS = ("trusted_file", "allowed_file")
_SIZE_RE = re.compile(r"^(\d+)([KMG]?)$")
_SUFFIX = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


@dataclass(frozen=True)
class Manifest:
    enclave_size: int
    thread_count: int
    entrypoint: str
    trusted_files: tuple[str, ...]
    allowed_files: tuple[str, ...] = ()
    key_provider: str = "provider://attested-channel"
    attestation_mode: str = "remote"

    def __post_init__(self):
        object.__setattr__(self, "trusted_files", tuple(self.trusted_files))
        object.__setattr__(self, "allowed_files", tuple(self.allowed_files))
        check_invariants(self)


def is_normalized(path: str) -> bool:
    if not path or path.startswith("/") or "\\" in path:
        return False
    if posixpath.normpath(path) != path:
        return False
    return ".." not in path.split("/")


def check_invariants(m: Manifest) -> None:
    if m.enclave_size < MIB or m.enclave_size & (m.enclave_size - 1):
        raise InvariantViolation(f"enclave_size {m.enclave_size} must be a power of two >= 1 MiB")
    if m.thread_count < 1:
        raise InvariantViolation("thread_count must be positive")
    if m.attestation_mode not in ATTESTATION_MODES:
        raise InvariantViolation(f"attestation_mode must be one of {ATTESTATION_MODES}")
    for label, files in (("trusted", m.trusted_files), ("allowed", m.allowed_files)):
        if len(set(files)) != len(files):
            raise InvariantViolation(f"duplicate {label} file")
        for p in files:
            if not is_normalized(p):
                raise InvariantViolation(f"path {p!r} is not normalized")
    both = set(m.trusted_files) & set(m.allowed_files)
    if both:
        raise InvariantViolation(f"paths both trusted and allowed: {sorted(both)}")
    if m.entrypoint not in m.trusted_files:
        raise InvariantViolation("entrypoint must be a trusted file")


def _parse_size(value: str, line: int) -> int:
    match = _SIZE_RE.match(value.upper())
    if not match:
        raise ManifestSyntaxError(f"bad size {value!r}", line)
    return int(match.group(1)) * _SUFFIX[match.group(2)]


def parse_manifest(text: str) -> Manifest:
    scalars: dict[str, str] = {}
    scalar_lines: dict[str, int] = {}
    lists: dict[str, list[str]] = {k: [] for k in _LIST_KEYS}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestSyntaxError("expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not value:
            raise ManifestSyntaxError(f"empty value for {key!r}", lineno)
        if key in _LIST_KEYS:
            lists[key].append(value)
        elif key in _SCALAR_KEYS:
            if key in scalars:
                raise DuplicateKey(key, lineno)
            scalars[key] = value
            scalar_lines[key] = lineno
        else:
            raise ManifestSyntaxError(f"unknown key {key!r}", lineno)

    for key in ("enclave_size", "thread_count", "entrypoint"):
        if key not in scalars:
            raise InvariantViolation(f"missing required key {key!r}")
    size = _parse_size(scalars["enclave_size"], scalar_lines["enclave_size"])
    try:
        threads = int(scalars["thread_count"])
    except ValueError:
        raise ManifestSyntaxError("thread_count must be an integer", scalar_lines["thread_count"]) from None
    kwargs = {}
    if "key_provider" in scalars:
        kwargs["key_provider"] = scalars["key_provider"]
    if "attestation_mode" in scalars:
        kwargs["attestation_mode"] = scalars["attestation_mode"]
    return Manifest(
        enclave_size=size,
        thread_count=threads,
        entrypoint=scalars["entrypoint"],
        trusted_files=tuple(lists["trusted_file"]),
        allowed_files=tuple(lists["allowed_file"]),
        **kwargs,
    )


def render_manifest(m: Manifest) -> str:
    lines = [
        f"enclave_size = {m.enclave_size}",
        f"thread_count = {m.thread_count}",
        f"entrypoint = {m.entrypoint}",
    ]
    lines += [f"trusted_file = {p}" for p in m.trusted_files]
    lines += [f"allowed_file = {p}" for p in m.allowed_files]
    lines.append(f"key_provider = {m.key_provider}")
    lines.append(f"attestation_mode = {m.attestation_mode}")
    return "\n".join(lines) + "\n"


class FileTree(Mapping):
    """Immutable path -> content map with normalized relative paths."""

    def __init__(self, files: Mapping[str, bytes] | None = None):
        self._files: dict[str, bytes] = {}
        for path, content in (files or {}).items():
            if not is_normalized(path):
                raise ValueError(f"path {path!r} is not normalized")
            self._files[path] = bytes(content)

    @classmethod
    def from_directory(cls, root: str | os.PathLike) -> "FileTree":
        root = Path(root)
        files = {}
        for p in sorted(root.rglob("*")):
            if p.is_file():
                files[p.relative_to(root).as_posix()] = p.read_bytes()
        return cls(files)

    def replace(self, path: str, content: bytes) -> "FileTree":
        files = dict(self._files)
        files[path] = content
        return FileTree(files)

    def __getitem__(self, path: str) -> bytes:
        return self._files[path]

    def __iter__(self) -> Iterator[str]:
        return iter(self._files)

    def __len__(self) -> int:
        return len(self._files)

    def __repr__(self) -> str:
        return f"FileTree({sorted(self._files)})"


@dataclass(frozen=True)
class Issue:
    code: str
    path: str

    def __str__(self) -> str:
        return f"{self.code}({self.path})"


def validate_against_tree(m: Manifest, tree: Mapping[str, bytes]) -> list[Issue]:
    issues = [Issue("MISSING_TRUSTED_FILE", p) for p in m.trusted_files if p not in tree]
    if m.entrypoint not in tree:
        issues.append(Issue("MISSING_ENTRYPOINT", m.entrypoint))
    return issues


def measurement_encoding(m: Manifest, tree: Mapping[str, bytes]) -> bytes:
    w = Writer().blob(MEASUREMENT_TAG)
    w.u64(m.enclave_size).u32(m.thread_count)
    w.text(m.entrypoint).text(m.key_provider).u8(ATTESTATION_MODES.index(m.attestation_mode))
    trusted = sorted(m.trusted_files)
    w.u32(len(trusted))
    for path in trusted:
        w.text(path).raw(crypto.digest(tree[path]))
    allowed = sorted(m.allowed_files)
    w.u32(len(allowed))
    for path in allowed:
        w.text(path)
    return w.getvalue()


def compute_measurement(m: Manifest, tree: Mapping[str, bytes]) -> bytes:
    issues = validate_against_tree(m, tree)
    if issues:
        raise ValidationFailed(", ".join(map(str, issues)), issues=issues)
    return crypto.digest(measurement_encoding(m, tree))
