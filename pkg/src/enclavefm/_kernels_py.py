"""Pure-Python kernels. Bit-for-bit twin of ``_kernels.pyx``."""

from __future__ import annotations

import heapq
from array import array

BACKEND = "python"

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fill_weights(seed: int, n: int) -> array:
    """``n`` int32 values in [-32768, 32767] from a splitmix64 stream."""
    out = array("i", bytes(4 * n))
    state = seed & MASK64
    for i in range(n):
        state = (state + GOLDEN) & MASK64
        out[i] = (mix64(state) >> 48) - 32768
    return out


def bucket_table(context_window: int, vocab: int, buckets: int) -> array:
    """Feature bucket for (position j, token t) at index j * vocab + t."""
    out = array("i", bytes(4 * context_window * vocab))
    for j in range(context_window):
        for t in range(vocab):
            out[j * vocab + t] = mix64(((j << 32) | t) & MASK64) % buckets
    return out


def raw_scores(table, bias, vocab: int, rows, coefs) -> list[int]:
    acc = list(bias)
    for r, c in zip(rows, coefs):
        base = r * vocab
        acc = [a + c * w for a, w in zip(acc, table[base:base + vocab])]
    return acc


def topk(table, bias, vocab: int, rows, coefs, k: int) -> list[tuple[int, int]]:
    """Best ``k`` tokens as (normalized score, token), best first.

    Scores are shifted so the maximum is 0; ties go to the smaller token.
    """
    acc = raw_scores(table, bias, vocab, rows, coefs)
    top = max(acc)
    best = heapq.nsmallest(k, range(vocab), key=lambda v: (-acc[v], v))
    return [(acc[v] - top, v) for v in best]
