"""``key = value`` text files (policies, configs, descriptors)."""

from __future__ import annotations

from collections.abc import Iterable

from .errors import DuplicateKey, ManifestSyntaxError


def parse_pairs(text: str) -> list[tuple[str, str, int]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ManifestSyntaxError("expected 'key = value'", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ManifestSyntaxError("empty key", lineno)
        out.append((key, value, lineno))
    return out


def parse_dict(text: str, repeatable: Iterable[str] = ()) -> dict:
    """Scalars map to strings, keys in ``repeatable`` map to lists."""
    repeatable = set(repeatable)
    out: dict = {k: [] for k in repeatable}
    for key, value, lineno in parse_pairs(text):
        if key in repeatable:
            out[key].append(value)
        elif key in out:
            raise DuplicateKey(key, lineno)
        else:
            out[key] = value
    return out


def render_pairs(pairs: Iterable[tuple[str, object]]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)
