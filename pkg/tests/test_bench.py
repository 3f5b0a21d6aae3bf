import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enclavefm.bench import (
    BenchmarkReport,
    Distribution,
    TokenTimingSample,
    bare_target,
    build_report,
    compare,
    enclave_target,
    filter_outliers,
    launch_bench_enclave,
    measure,
    measure_interleaved,
    summarize,
)
from enclavefm.errors import ConfigMismatch, EmptyInput, TargetFailed, TooFewSamples
from enclavefm.inference import LATENCY_CONFIG, THROUGHPUT_CONFIG, Generation, GenerationConfig
from enclavefm.model_store import ModelWeights

SMALL = ModelWeights.generate(2, vocab_size=32, embed_dim=4, context_window=4)
CFG = GenerationConfig(batch_size=2, beam_width=2, max_new_tokens=5, input_length=3)


def close(a, b):
    return math.isclose(a, b, rel_tol=1e-9)


def test_filter_outliers_removes_single_spike():
    xs = [0.01] * 999 + [1.0]
    kept, fraction = filter_outliers(xs)
    assert kept == [0.01] * 999
    assert close(fraction, 0.001)


def test_filter_outliers_keeps_constant_and_needs_two():
    assert filter_outliers([0.5, 0.5, 0.5]) == ([0.5, 0.5, 0.5], 0.0)
    with pytest.raises(TooFewSamples):
        filter_outliers([1.0])


def test_filter_is_single_pass():
    # after removing the 1000.0 spike the 10.0 would be an outlier, but z is computed once
    xs = [1.0] * 100 + [10.0, 1000.0]
    kept, _ = filter_outliers(xs)
    assert 10.0 in kept and 1000.0 not in kept


def test_filter_boundary_is_inclusive():
    # two values symmetric about the mean have |z| exactly 1
    kept, _ = filter_outliers([1.0, 3.0])
    assert kept == [1.0, 3.0]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-4, 10.0), min_size=2, max_size=200))
def test_filtered_values_within_three_sigma(xs):
    kept, fraction = filter_outliers(xs)
    mean = sum(xs) / len(xs)
    std = math.sqrt(sum((x - mean) ** 2 for x in xs) / len(xs))
    assert all(abs(x - mean) <= 3 * std + 1e-12 for x in kept)
    assert close(fraction, (len(xs) - len(kept)) / len(xs)) or fraction == 0


def test_distribution_inclusive_quantiles():
    d = Distribution.of([float(i) for i in range(1, 101)])
    assert close(d.mean, 50.5) and close(d.p50, 50.5) and close(d.p95, 95.05) and close(d.p99, 99.01)
    assert Distribution.of([2.0]) == Distribution(2.0, 2.0, 2.0, 2.0)


def test_summarize_throughput_is_inverse_token_time():
    r = summarize([0.5, 0.25], GenerationConfig(6, 4, 128, 1024))
    assert close(r.throughput_total.mean, (12 + 24) / 2)
    assert close(r.throughput_per_stream.mean, (2 + 4) / 2)
    assert close(r.latency.mean, 0.375)
    with pytest.raises(EmptyInput):
        summarize([], CFG)


def test_compare_seven_percent():
    cfg = LATENCY_CONFIG
    base = summarize([0.1] * 10, cfg)
    sec = summarize([0.107] * 10, cfg)
    o = compare(base, sec)
    assert close(o.latency_overhead_pct, 7.0)
    assert close(o.throughput_overhead_pct, (1 - 0.1 / 0.107) * 100)


def test_compare_needs_same_config():
    with pytest.raises(ConfigMismatch):
        compare(summarize([1.0], LATENCY_CONFIG), summarize([1.0], THROUGHPUT_CONFIG))


def test_report_jsonl_roundtrip():
    samples = [TokenTimingSample(i, 0.01 + i * 1e-4, 0) for i in range(20)] + [TokenTimingSample(20, 5.0, 0)]
    r = build_report(samples, CFG, mode="latency", target="bare", environment="test")
    assert r.removed_count == 1
    again = BenchmarkReport.from_jsonl(r.to_jsonl())
    assert again == r and again.summary() == r.summary()
    with pytest.raises(ValueError):
        BenchmarkReport.from_jsonl('{"type": "header", "kind": "other"}\n')


def test_sample_requires_positive_duration():
    with pytest.raises(ValueError):
        TokenTimingSample(0, 0.0, 0)


def test_measure_collects_min_tokens():
    samples = measure(bare_target(SMALL), CFG, min_tokens=12)
    assert len(samples) == 15  # three runs of five steps
    assert [s.token_index for s in samples[:5]] == list(range(5))
    assert {s.run_id for s in samples} == {0, 1, 2}


def test_interleaved_measurement_per_target():
    rt = launch_bench_enclave(SMALL)
    out = measure_interleaved({"bare": bare_target(SMALL), "enclave": enclave_target(rt, 0.05)}, CFG, 10)
    assert {k: len(v) for k, v in out.items()} == {"bare": 10, "enclave": 10}


def test_target_failure_discards_samples():
    def broken(cfg):
        raise RuntimeError("no")

    with pytest.raises(TargetFailed):
        measure(broken, CFG, min_tokens=5)


def test_tax_with_fake_clock_gives_exact_overhead():
    # clock increments per read: a step reads at start, after 20 ticks of compute,
    # and the taxed step needs one more read of 1 tick to pass its 21-tick deadline
    def target(tax, deltas):
        def start(cfg):
            steps = itertools.cycle(deltas)
            t = [0]

            def clock():
                t[0] += next(steps)
                return t[0]

            prompts = [[1] * cfg.input_length for _ in range(cfg.batch_size)]
            return Generation(SMALL, prompts, cfg, enclave_tax=tax, clock=clock)
        return start

    out = measure_interleaved({"bare": target(0.0, [1, 20]), "enclave": target(0.05, [1, 20, 1])},
                              LATENCY_CONFIG, 256, warmup=False)
    assert {s.duration for s in out["bare"]} == {20} and {s.duration for s in out["enclave"]} == {21}
    o = compare(build_report(out["bare"], LATENCY_CONFIG), build_report(out["enclave"], LATENCY_CONFIG))
    assert close(o.latency_overhead_pct, 5.0)
    assert close(o.throughput_overhead_pct, (1 - 1 / 1.05) * 100)
