"""Time the compiled kernels against the numpy fallback and check they agree.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from molcnp import chem
from molcnp.kernels import backends


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    bits_a = (rng.random((500, 1024)) < 0.1).astype(np.uint8)
    bits_b = (rng.random((2000, 1024)) < 0.1).astype(np.uint8)
    pa, pb = chem.pack_bits(bits_a), chem.pack_bits(bits_b)
    X = (rng.random((2500, 1024)) < 0.1).astype(np.uint8)
    y = X[:, :32] @ rng.normal(size=32) + 0.1 * rng.normal(size=2500)
    samples = rng.integers(0, 2500, size=2500).astype(np.int64)
    k = 1024 // 3

    cases = {
        "pairwise_hamming 500x2000x1024": lambda m: m.pairwise_hamming(pa, pb),
        "pairwise_tanimoto 500x2000x1024": lambda m: m.pairwise_tanimoto(pa, pb),
        "build_tree 2500x1024": lambda m: m.build_tree(X, y, samples, k, 2, 12345),
    }
    found = backends()
    print(f"{'kernel':34s}" + "".join(f"{name:>12s}" for name in found) + "   speedup  agree")
    for label, run in cases.items():
        timings, outputs = {}, {}
        for name, module in found.items():
            timings[name], outputs[name] = best_of(lambda: run(module), args.repeat)
        ref = outputs["python"]
        agree = all(
            all(np.array_equal(a, b) for a, b in zip(out, ref)) if isinstance(ref, tuple) else np.array_equal(out, ref)
            for out in outputs.values()
        )
        speedup = timings["python"] / timings["cython"] if "cython" in timings else float("nan")
        row = "".join(f"{timings[name] * 1e3:10.1f}ms" for name in found)
        print(f"{label:34s}{row}   {speedup:6.1f}x  {'yes' if agree else 'NO'}")


if __name__ == "__main__":
    main()
