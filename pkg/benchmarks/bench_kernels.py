"""Compare the compiled and pure-Python kernel backends.

Both backends must return identical values; the script checks that first
and then reports the median time per call and the speedup.

    python3 benchmarks/bench_kernels.py [--vocab 4096] [--repeat 5]
"""

import argparse
import json
import statistics
import timeit

from enclavefm import kernels


def cases(vocab, embed_dim, window):
    rows = [(7 * j) % embed_dim for j in range(window)]
    coefs = list(range(window, 0, -1))

    def setup(backend):
        table = backend.fill_weights(11, embed_dim * vocab)
        bias = backend.fill_weights(12, vocab)
        return table, bias

    return {
        "fill_weights": lambda b, t, bias: b.fill_weights(3, embed_dim * vocab),
        "bucket_table": lambda b, t, bias: b.bucket_table(window, vocab, embed_dim),
        "raw_scores": lambda b, t, bias: b.raw_scores(t, bias, vocab, rows, coefs),
        "topk": lambda b, t, bias: b.topk(t, bias, vocab, rows, coefs, 4),
    }, setup


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--vocab", type=int, default=4096)
    parser.add_argument("--embed-dim", type=int, default=16)
    parser.add_argument("--window", type=int, default=8)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python backend is available")
    funcs, setup = cases(args.vocab, args.embed_dim, args.window)
    data = {name: setup(b) for name, b in backends.items()}

    for fname, fn in funcs.items():
        results = {name: fn(b, *data[name]) for name, b in backends.items()}
        values = [list(r) if not isinstance(r, list) else r for r in results.values()]
        if any(v != values[0] for v in values):
            raise SystemExit(f"{fname}: backends disagree")
        timings = {}
        for name, b in backends.items():
            t, bias = data[name]
            runs = timeit.repeat(lambda: fn(b, t, bias), number=1, repeat=args.repeat)
            timings[name] = statistics.median(runs)
        row = {"kernel": fname, **{f"{k}_s": v for k, v in timings.items()}}
        if "cython" in timings:
            row["speedup"] = timings["python"] / timings["cython"]
        print(json.dumps(row))


if __name__ == "__main__":
    main()
