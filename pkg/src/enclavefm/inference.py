"""Deterministic toy language model: scoring, greedy and beam decoding,
accuracy attestation and training-provenance binding.

Scores are integers. ``score_next`` returns the raw scores shifted so the
best token scores 0, which makes every per-token score <= 0 and cumulative
beam scores non-increasing. Ties always go to the smaller token index, then
to the lexicographically smaller sequence.
"""

from __future__ import annotations

import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from fractions import Fraction

from . import crypto, kernels
from .codec import DecodeError, Reader, Writer, encode_tokens
from .enclave import AttestationQuote, EnclaveRuntime
from .errors import BatchSizeMismatch, EmptyContext, EmptyDataset
from .model_store import ModelWeights, load_model, loaded_model_bytes

ACCURACY_TAG = b"enclavefm/accuracy/v1"
DATASET_TAG = b"enclavefm/dataset/v1"


@dataclass(frozen=True)
class GenerationConfig:
    batch_size: int = 1
    beam_width: int = 1
    max_new_tokens: int = 128
    input_length: int = 1024

    def __post_init__(self):
        for name in ("batch_size", "beam_width", "max_new_tokens", "input_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


LATENCY_CONFIG = GenerationConfig(batch_size=1, beam_width=1, max_new_tokens=128, input_length=1024)
THROUGHPUT_CONFIG = GenerationConfig(batch_size=6, beam_width=4, max_new_tokens=128, input_length=1024)


def _features(model: ModelWeights, context: Sequence[int]) -> tuple[list[int], list[int]]:
    if not context:
        raise EmptyContext("context must contain at least one token")
    k = model.context_window
    vocab = model.vocab_size
    buckets = model.buckets
    tail = context[-k:]
    rows, coefs = [], []
    for j, tok in enumerate(reversed(tail)):
        if not 0 <= tok < vocab:
            raise ValueError(f"token {tok} outside vocabulary of {vocab}")
        rows.append(buckets[j * vocab + tok])
        coefs.append(k - j)
    return rows, coefs


def raw_scores(model: ModelWeights, context: Sequence[int]) -> list[int]:
    rows, coefs = _features(model, context)
    return kernels.raw_scores(model.table, model.bias, model.vocab_size, rows, coefs)


def score_next(model: ModelWeights, context: Sequence[int]) -> list[int]:
    """Normalized next-token scores (max 0) from the last ``context_window`` tokens."""
    raw = raw_scores(model, context)
    top = max(raw)
    return [s - top for s in raw]


def top_next(model: ModelWeights, context: Sequence[int], k: int) -> list[tuple[int, int]]:
    rows, coefs = _features(model, context)
    return kernels.topk(model.table, model.bias, model.vocab_size, rows, coefs, k)


def greedy_next(model: ModelWeights, context: Sequence[int]) -> int:
    return top_next(model, context, 1)[0][1]


@dataclass(frozen=True)
class ScoredBeam:
    tokens: tuple[int, ...]
    cumulative_score: int

    def sort_key(self):
        return (-self.cumulative_score, self.tokens)


def beam_step(model: ModelWeights, prompt: Sequence[int], beams: list[ScoredBeam], width: int) -> list[ScoredBeam]:
    """Extend every beam and keep the best ``width`` candidates.

    Only the best ``width`` extensions of each beam can survive, so each
    beam contributes at most that many candidates.
    """
    k = model.context_window
    head = list(prompt[-k:])
    candidates = []
    for beam in beams:
        ctx = (head + list(beam.tokens))[-k:]
        for score, tok in top_next(model, ctx, width):
            candidates.append(ScoredBeam(beam.tokens + (tok,), beam.cumulative_score + score))
    candidates.sort(key=ScoredBeam.sort_key)
    return candidates[:width]


def beam_search(model: ModelWeights, prompt: Sequence[int], width: int, steps: int) -> list[ScoredBeam]:
    beams = [ScoredBeam((), 0)]
    for _ in range(steps):
        beams = beam_step(model, prompt, beams, width)
    return beams


def greedy_decode(model: ModelWeights, prompt: Sequence[int], steps: int) -> list[int]:
    ctx = list(prompt)
    out = []
    for _ in range(steps):
        tok = greedy_next(model, ctx)
        out.append(tok)
        ctx.append(tok)
    return out


@dataclass
class GenerationResult:
    completions: list[list[int]]
    timings: list[float]  # seconds per generated token position (whole batch)


class Generation:
    """Incremental decoding of one batch.

    Each :meth:`step` extends every prompt by one token and returns the
    step's wall-clock duration. ``enclave_tax`` stretches every step by that
    fraction of its own duration, standing in for the cost of protected
    memory accesses. The step ends at the clock read that closes the
    stretch, so an untaxed step costs exactly one read after the compute.
    """

    def __init__(self, model: ModelWeights, prompts: Sequence[Sequence[int]], cfg: GenerationConfig, *,
                 enclave_tax: float = 0.0, clock: Callable[[], float] = time.perf_counter):
        if len(prompts) != cfg.batch_size:
            raise BatchSizeMismatch(f"got {len(prompts)} prompts for batch size {cfg.batch_size}")
        for p in prompts:
            if len(p) != cfg.input_length:
                raise BatchSizeMismatch(f"prompt length {len(p)} != input_length {cfg.input_length}")
            if not p:
                raise EmptyContext("empty prompt")
        if enclave_tax < 0:
            raise ValueError("enclave_tax must be non-negative")
        self.model = model
        self.prompts = [list(p) for p in prompts]
        self.cfg = cfg
        self.enclave_tax = enclave_tax
        self.clock = clock
        self.beams = [[ScoredBeam((), 0)] for _ in prompts]
        self.timings: list[float] = []

    @property
    def done(self) -> bool:
        return len(self.timings) >= self.cfg.max_new_tokens

    def step(self) -> float:
        clock = self.clock
        start = clock()
        for b, prompt in enumerate(self.prompts):
            self.beams[b] = beam_step(self.model, prompt, self.beams[b], self.cfg.beam_width)
        now = clock()
        deadline = start + (now - start) * (1.0 + self.enclave_tax)
        while now < deadline:
            now = clock()
        elapsed = now - start
        self.timings.append(elapsed)
        return elapsed

    @property
    def completions(self) -> list[list[int]]:
        return [list(b[0].tokens) for b in self.beams]

    def run(self) -> GenerationResult:
        while not self.done:
            self.step()
        return GenerationResult(self.completions, list(self.timings))


def generate(model: ModelWeights, prompts: Sequence[Sequence[int]], cfg: GenerationConfig, *,
             enclave_tax: float = 0.0, clock: Callable[[], float] = time.perf_counter) -> GenerationResult:
    """Decode ``cfg.max_new_tokens`` tokens for every prompt in the batch.

    One timing sample is taken per token position; each covers the whole
    batch.
    """
    return Generation(model, prompts, cfg, enclave_tax=enclave_tax, clock=clock).run()


# -- dataset, accuracy, provenance -------------------------------------------------

Dataset = list[tuple[list[int], int]]


def parse_dataset(text: str) -> Dataset:
    """One example per line: ``comma-separated prompt tokens<TAB>expected token``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            prompt_s, expected_s = line.split("\t")
            prompt = [int(t) for t in prompt_s.split(",") if t.strip()]
            out.append((prompt, int(expected_s)))
        except ValueError:
            raise ValueError(f"line {lineno}: expected 'tokens<TAB>token'") from None
    return out


def render_dataset(dataset: Dataset) -> str:
    return "".join(",".join(map(str, p)) + f"\t{e}\n" for p, e in dataset)


def dataset_digest(dataset: Dataset) -> bytes:
    w = Writer().blob(DATASET_TAG).u32(len(dataset))
    for prompt, expected in dataset:
        w.raw(encode_tokens(prompt)).u32(expected)
    return crypto.digest(w.getvalue())


@dataclass(frozen=True)
class AccuracyReport:
    model_digest: bytes
    dataset_digest: bytes
    correct: int
    total: int

    @property
    def accuracy(self) -> Fraction:
        return Fraction(self.correct, self.total)

    def to_bytes(self) -> bytes:
        return (
            Writer().blob(ACCURACY_TAG).raw(self.model_digest).raw(self.dataset_digest)
            .u32(self.correct).u32(self.total).getvalue()
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "AccuracyReport":
        r = Reader(data)
        if r.blob() != ACCURACY_TAG:
            raise DecodeError("not an accuracy report")
        report = cls(r.raw(crypto.DIGEST_SIZE), r.raw(crypto.DIGEST_SIZE), r.u32(), r.u32())
        r.done()
        return report

    def digest(self) -> bytes:
        return crypto.digest(self.to_bytes())


@dataclass(frozen=True)
class AttestedAccuracy:
    report: AccuracyReport
    quote: AttestationQuote


def accuracy_on(model: ModelWeights, dataset: Dataset) -> int:
    return sum(1 for prompt, expected in dataset if greedy_next(model, prompt) == expected)


def evaluate_and_attest_accuracy(rt: EnclaveRuntime, dataset: Dataset) -> AttestedAccuracy:
    model_bytes = loaded_model_bytes(rt)
    if not dataset:
        raise EmptyDataset("dataset is empty")
    model = load_model(rt)
    report = AccuracyReport(crypto.digest(model_bytes), dataset_digest(dataset), accuracy_on(model, dataset), len(dataset))
    return AttestedAccuracy(report, rt.get_quote(report.digest()))


def provenance_binding(dataset_digest_: bytes, model_digest: bytes) -> bytes:
    return crypto.digest(dataset_digest_ + model_digest)


def bind_training_provenance(rt: EnclaveRuntime, dataset_digest_: bytes, model_digest: bytes) -> AttestationQuote:
    if len(dataset_digest_) != crypto.DIGEST_SIZE or len(model_digest) != crypto.DIGEST_SIZE:
        raise ValueError("digests must be 32 bytes")
    return rt.get_quote(provenance_binding(dataset_digest_, model_digest))
