"""Compare the numba and numpy LCS backends on random token-id sequences.

    python3 benchmarks/bench_lcs.py [--lengths 12 64 256 1024] [--repeat 5]

Also times rouge_lsum on a synthetic note under each backend via the
CLINFORGE_DISABLE_JIT flag.
"""
from __future__ import annotations

import argparse
import os
import time

import numpy as np

from clinforge import _kernels, rouge


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="LCS backend benchmark")
    ap.add_argument("--lengths", type=int, nargs="+", default=[12, 64, 256, 1024])
    ap.add_argument("--vocab", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not _kernels.HAS_NUMBA:
        print("numba not installed; only the numpy backend is available")
    rng = np.random.default_rng(args.seed)
    backends = {"numpy": (_kernels.lcs_length_numpy, _kernels.lcs_table_numpy)}
    if _kernels.HAS_NUMBA:
        backends["numba"] = (_kernels.lcs_length_numba, _kernels.lcs_table_numba)
        warm = np.arange(4, dtype=np.int64)
        _kernels.lcs_length_numba(warm, warm)
        _kernels.lcs_table_numba(warm, warm)

    print(f"{'len':>6} | {'backend':<7} | {'length (ms)':>12} | {'table (ms)':>11} | {'speedup':>8}")
    print("-" * 56)
    for n in args.lengths:
        a = rng.integers(0, args.vocab, n, dtype=np.int64)
        b = rng.integers(0, args.vocab, n, dtype=np.int64)
        ref = None
        for name, (length_fn, table_fn) in backends.items():
            t_len = best_of(lambda: length_fn(a, b), args.repeat)
            t_tab = best_of(lambda: table_fn(a, b), args.repeat)
            assert length_fn(a, b) == _kernels.lcs_length_numpy(a, b)
            ref = ref or t_len
            print(f"{n:>6} | {name:<7} | {1e3 * t_len:>12.3f} | {1e3 * t_tab:>11.3f} | {ref / t_len:>7.1f}x")

    words = [f"w{i}" for i in range(args.vocab)]
    sents = [" ".join(rng.choice(words, 15)) + "." for _ in range(40)]
    cand = " ".join(s.capitalize() for s in sents[:20])
    ref_text = " ".join(s.capitalize() for s in sents[10:30])
    old = os.environ.get("CLINFORGE_DISABLE_JIT")
    print()
    for flag in ("1", "0") if _kernels.HAS_NUMBA else ("1",):
        os.environ["CLINFORGE_DISABLE_JIT"] = flag
        rouge.rouge_lsum(cand, ref_text)
        t = best_of(lambda: rouge.rouge_lsum(cand, ref_text), args.repeat)
        print(f"rouge_lsum 20x20 sentences, backend={_kernels.backend():<5}: {1e3 * t:.2f} ms")
    if old is None:
        os.environ.pop("CLINFORGE_DISABLE_JIT", None)
    else:
        os.environ["CLINFORGE_DISABLE_JIT"] = old


if __name__ == "__main__":
    main()
