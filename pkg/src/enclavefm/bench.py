"""Token-level benchmarking: timing capture, Z-score filtering, summaries, overhead.

Pipeline: ``measure`` collects one wall-clock sample per generated token
position (each sample covers the whole batch), ``filter_outliers`` drops
samples with |z| > 3 in a single pass over the pooled raw samples using the
population standard deviation, ``summarize`` turns the rest into latency and
throughput figures, and ``compare`` computes overheads from the means:

    throughput overhead % = (base_tps - secured_tps) / base_tps * 100
    latency overhead %    = (secured_lat - base_lat) / base_lat * 100

where ``tps`` is the mean of per-token throughput samples (batch_size /
duration) and ``lat`` the mean per-token duration.
"""

from __future__ import annotations

import gc
import json
import math
import platform
import random
import statistics
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass

from . import kernels
from .errors import ConfigMismatch, EmptyInput, EnclaveFMError, TargetFailed, TooFewSamples
from .inference import LATENCY_CONFIG, THROUGHPUT_CONFIG, Generation, GenerationConfig
from .model_store import ModelWeights, load_model

REPORT_VERSION = 1
Z_THRESHOLD = 3.0
READING_SPEED_S = 0.2  # seconds per word
THROUGHPUT_FORMULA = "(baseline_tps - secured_tps) / baseline_tps * 100, tps = mean(batch_size / duration)"
LATENCY_FORMULA = "(secured_latency - baseline_latency) / baseline_latency * 100, latency = mean(duration)"

# A target starts one generation run for a config; the harness drives it.
Target = Callable[[GenerationConfig], Generation]


@dataclass(frozen=True)
class TokenTimingSample:
    token_index: int
    duration: float
    run_id: int

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")


def measure(target: Target, cfg: GenerationConfig, min_tokens: int = 1000, *, warmup: bool = True) -> list[TokenTimingSample]:
    """Run ``target`` until at least ``min_tokens`` token samples are collected.

    One untimed warm-up run comes first so caches and lazily built tables do
    not land in the first sample. Any failure discards everything collected.
    """
    return measure_interleaved({"target": target}, cfg, min_tokens, warmup=warmup)["target"]


def measure_interleaved(targets: dict[str, Target], cfg: GenerationConfig, min_tokens: int = 1000, *,
                        warmup: bool = True) -> dict[str, list[TokenTimingSample]]:
    """Measure several targets with their token steps interleaved.

    Every run starts one generation per target and then advances them one
    step at a time, rotating which target goes first at each step. Slow
    drift in machine speed therefore hits all targets alike, which keeps
    their comparison fair on a noisy host. The garbage collector is paused
    while measuring, as ``timeit`` does, so its pauses do not land on
    whichever step happens to trigger them.
    """
    runs = max(1, math.ceil(min_tokens / cfg.max_new_tokens))
    names = list(targets)
    samples: dict[str, list[TokenTimingSample]] = {name: [] for name in names}
    gc_was_enabled = gc.isenabled()
    try:
        if warmup:
            for name in names:
                targets[name](cfg).run()
        gc.collect()
        gc.disable()
        for run_id in range(runs):
            gens = {name: targets[name](cfg) for name in names}
            for i in range(cfg.max_new_tokens):
                j = (i + run_id) % len(names)
                for name in names[j:] + names[:j]:
                    samples[name].append(TokenTimingSample(i, gens[name].step(), run_id))
    except (EnclaveFMError, ValueError, RuntimeError) as exc:
        raise TargetFailed(f"target failed: {exc}") from exc
    finally:
        if gc_was_enabled:
            gc.enable()
    return samples


def _durations(samples) -> list[float]:
    return [s.duration if isinstance(s, TokenTimingSample) else float(s) for s in samples]


def filter_outliers(samples: Sequence) -> tuple[list, float]:
    """Drop samples whose |z| exceeds 3; z from one pass over the raw set."""
    if len(samples) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(samples)}")
    flags = _keep_flags(_durations(samples))
    kept = [s for s, k in zip(samples, flags) if k]
    return kept, (len(samples) - len(kept)) / len(samples)


def _keep_flags(xs: list[float]) -> list[bool]:
    mean = statistics.fmean(xs)
    std = statistics.pstdev(xs, mu=mean)
    if std == 0:
        return [True] * len(xs)
    return [abs(x - mean) / std <= Z_THRESHOLD for x in xs]


@dataclass(frozen=True)
class Distribution:
    mean: float
    p50: float
    p95: float
    p99: float

    @classmethod
    def of(cls, xs: Sequence[float]) -> "Distribution":
        if len(xs) == 1:
            return cls(xs[0], xs[0], xs[0], xs[0])
        q = statistics.quantiles(xs, n=100, method="inclusive")
        return cls(statistics.fmean(xs), q[49], q[94], q[98])


@dataclass(frozen=True)
class BenchmarkReport:
    cfg: GenerationConfig
    samples: tuple[TokenTimingSample, ...]  # raw, before filtering
    kept: tuple[bool, ...]
    mode: str = ""
    target: str = ""
    environment: str = ""
    clock: str = "time.perf_counter"

    @property
    def raw_count(self) -> int:
        return len(self.samples)

    @property
    def filtered(self) -> list[float]:
        return [s.duration for s, k in zip(self.samples, self.kept) if k]

    @property
    def removed_count(self) -> int:
        return self.raw_count - sum(self.kept)

    @property
    def removed_outlier_fraction(self) -> float:
        return self.removed_count / self.raw_count if self.raw_count else 0.0

    @property
    def latency(self) -> Distribution:
        return Distribution.of(self.filtered)

    @property
    def throughput_total(self) -> Distribution:
        return Distribution.of([self.cfg.batch_size / d for d in self.filtered])

    @property
    def throughput_per_stream(self) -> Distribution:
        return Distribution.of([1.0 / d for d in self.filtered])

    @property
    def below_reading_speed(self) -> bool:
        return self.latency.mean < READING_SPEED_S

    def summary(self) -> dict:
        return {
            "raw_count": self.raw_count,
            "filtered_count": self.raw_count - self.removed_count,
            "removed_count": self.removed_count,
            "removed_outlier_fraction": self.removed_outlier_fraction,
            "latency_s": vars(self.latency),
            "tokens_per_second_total": vars(self.throughput_total),
            "tokens_per_second_per_stream": vars(self.throughput_per_stream),
            "below_reading_speed": self.below_reading_speed,
        }

    # -- serialization -------------------------------------------------------

    def to_jsonl(self) -> str:
        lines = [
            {"type": "header", "version": REPORT_VERSION, "kind": "benchmark"},
            {
                "type": "config", "batch_size": self.cfg.batch_size, "beam_width": self.cfg.beam_width,
                "max_new_tokens": self.cfg.max_new_tokens, "input_length": self.cfg.input_length,
                "mode": self.mode, "target": self.target, "environment": self.environment, "clock": self.clock,
                "clock_resolution_s": time.get_clock_info("perf_counter").resolution,
            },
            *(
                {"type": "sample", "run_id": s.run_id, "token_index": s.token_index, "duration": s.duration,
                 "kept": k}
                for s, k in zip(self.samples, self.kept)
            ),
            {"type": "summary", **self.summary()},
        ]
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> "BenchmarkReport":
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not records or records[0].get("type") != "header" or records[0].get("kind") != "benchmark":
            raise ValueError("not a benchmark report")
        if records[0]["version"] != REPORT_VERSION:
            raise ValueError(f"unsupported report version {records[0]['version']}")
        config = next(r for r in records if r["type"] == "config")
        cfg = GenerationConfig(config["batch_size"], config["beam_width"], config["max_new_tokens"],
                               config["input_length"])
        sample_records = [r for r in records if r["type"] == "sample"]
        samples = tuple(TokenTimingSample(r["token_index"], r["duration"], r["run_id"]) for r in sample_records)
        kept = tuple(bool(r["kept"]) for r in sample_records)
        return cls(cfg, samples, kept, config["mode"], config["target"], config["environment"], config["clock"])


def summarize(filtered: Sequence, cfg: GenerationConfig, *, removed: Sequence = (), mode: str = "",
              target: str = "", environment: str = "") -> BenchmarkReport:
    """Report over ``filtered`` samples; ``removed`` lists the outliers dropped before."""
    if not filtered:
        raise EmptyInput("no samples to summarize")

    def as_samples(xs, start):
        return [s if isinstance(s, TokenTimingSample) else TokenTimingSample(start + i, float(s), 0)
                for i, s in enumerate(xs)]

    kept_samples = as_samples(filtered, 0)
    removed_samples = as_samples(removed, len(kept_samples))
    return BenchmarkReport(
        cfg, tuple(kept_samples + removed_samples),
        tuple([True] * len(kept_samples) + [False] * len(removed_samples)), mode, target, environment,
    )


def build_report(samples: Sequence[TokenTimingSample], cfg: GenerationConfig, **labels) -> BenchmarkReport:
    if len(samples) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(samples)}")
    flags = tuple(_keep_flags(_durations(samples)))
    if not any(flags):
        raise EmptyInput("every sample was filtered out")
    return BenchmarkReport(cfg, tuple(samples), flags, labels.get("mode", ""), labels.get("target", ""),
                           labels.get("environment", ""))


@dataclass(frozen=True)
class OverheadReport:
    cfg: GenerationConfig
    baseline_tps: float
    secured_tps: float
    baseline_latency: float
    secured_latency: float
    throughput_formula: str = THROUGHPUT_FORMULA
    latency_formula: str = LATENCY_FORMULA

    @property
    def throughput_overhead_pct(self) -> float:
        return (self.baseline_tps - self.secured_tps) / self.baseline_tps * 100.0

    @property
    def latency_overhead_pct(self) -> float:
        return (self.secured_latency - self.baseline_latency) / self.baseline_latency * 100.0

    def to_json(self) -> str:
        return json.dumps({
            "type": "overhead", "version": REPORT_VERSION,
            "config": vars(self.cfg),
            "baseline_tokens_per_second": self.baseline_tps, "secured_tokens_per_second": self.secured_tps,
            "baseline_latency_s": self.baseline_latency, "secured_latency_s": self.secured_latency,
            "throughput_overhead_pct": self.throughput_overhead_pct,
            "latency_overhead_pct": self.latency_overhead_pct,
            "throughput_formula": self.throughput_formula, "latency_formula": self.latency_formula,
        }, sort_keys=True)


def compare(baseline: BenchmarkReport, secured: BenchmarkReport) -> OverheadReport:
    if baseline.cfg != secured.cfg:
        raise ConfigMismatch(f"{baseline.cfg} != {secured.cfg}")
    return OverheadReport(
        baseline.cfg, baseline.throughput_total.mean, secured.throughput_total.mean,
        baseline.latency.mean, secured.latency.mean,
    )


# -- targets -------------------------------------------------------------------------

def make_prompts(cfg: GenerationConfig, vocab_size: int, seed: int = 0) -> list[list[int]]:
    rng = random.Random(seed)
    return [[rng.randrange(vocab_size) for _ in range(cfg.input_length)] for _ in range(cfg.batch_size)]


def bare_target(model: ModelWeights, seed: int = 0) -> Target:
    """Plain generation outside any enclave."""
    def start(cfg: GenerationConfig) -> Generation:
        return Generation(model, make_prompts(cfg, model.vocab_size, seed), cfg)
    return start


def enclave_target(rt, enclave_tax: float, seed: int = 0) -> Target:
    """Generation inside a launched enclave: the model is read from protected
    memory for every run and each step pays the configured enclave tax."""
    def start(cfg: GenerationConfig) -> Generation:
        model = load_model(rt)
        return Generation(model, make_prompts(cfg, model.vocab_size, seed), cfg, enclave_tax=enclave_tax)
    return start


# Big enough that one token step dwarfs the fixed per-step timing overhead.
BENCH_MODEL = {"seed": 7, "vocab_size": 8192, "embed_dim": 16, "context_window": 8}
DEFAULT_TAX = 0.05


def launch_bench_enclave(weights: ModelWeights, *, tee_type: str = "application"):
    """Launch the sample inference enclave and load ``weights`` into it."""
    from .enclave import PlatformRoot, launch_enclave
    from .manifest import parse_manifest
    from .model_store import pack_model, provision_key, unpack_model_in_enclave
    from .testbed import sample_manifest, sample_software

    enclave = launch_enclave(PlatformRoot.generate(tee_type), parse_manifest(sample_manifest("inference")),
                             sample_software())
    rt = enclave.enter()
    key, key_id = bytes(range(32)), bytes(16)
    provision_key(rt, key_id, key)
    unpack_model_in_enclave(rt, pack_model(weights, key, key_id).to_bytes(), key_id)
    return rt


def bench_targets(names: Sequence[str], enclave_tax: float = DEFAULT_TAX, seed: int = 0) -> dict[str, Target]:
    from .testbed import cached_weights

    weights = cached_weights(**BENCH_MODEL)
    targets = {}
    for name in names:
        if name == "bare":
            targets[name] = bare_target(weights, seed)
        elif name == "enclave":
            targets[name] = enclave_target(launch_bench_enclave(weights), enclave_tax, seed)
        else:
            raise ValueError(f"unknown target {name!r}")
    return targets


def run_benchmark(mode: str, names: Sequence[str] = ("bare", "enclave"), *, min_tokens: int = 1000,
                  enclave_tax: float = DEFAULT_TAX, seed: int = 0) -> dict[str, BenchmarkReport]:
    """Measure the named targets interleaved and build one report each."""
    cfg = MODES[mode]
    samples = measure_interleaved(bench_targets(names, enclave_tax, seed), cfg, min_tokens)
    env = environment_label()
    return {name: build_report(s, cfg, mode=mode, target=name, environment=env) for name, s in samples.items()}


def environment_label() -> str:
    return f"{platform.python_implementation()} {platform.python_version()} {platform.machine()} kernels={kernels.BACKEND}"


MODES = {"latency": LATENCY_CONFIG, "throughput": THROUGHPUT_CONFIG}


__all__ = [
    "TokenTimingSample", "BenchmarkReport", "OverheadReport", "Distribution", "measure", "filter_outliers",
    "summarize", "build_report", "compare", "bare_target", "enclave_target", "MODES", "measure_interleaved",
    "run_benchmark", "bench_targets", "launch_bench_enclave",
]
