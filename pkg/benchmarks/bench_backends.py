"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py --length 400 --repeat 20
"""

import argparse
import time

import numpy as np

from tokenadapt import numerics as nx


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(length, heads, head_dim, rng):
    d = heads * head_dim
    a = rng.normal(size=(length, d))
    w = rng.normal(size=(d, d))
    q, k, v = (rng.normal(size=(heads, length, head_dim)) for _ in range(3))
    pos = np.arange(length, dtype=np.float64)
    scale = 1.0 / np.sqrt(head_dim)
    return {
        "matmul": lambda m: (m.matmul, (a, w)),
        "softmax_rows": lambda m: (m.softmax_rows, (a,)),
        "rms_norm": lambda m: (m.rms_norm, (a, np.ones(d), 1e-6)),
        "cosine_sim_matrix": lambda m: (m.cosine_sim_matrix, (a,)),
        "rope_apply": lambda m: (m.rope_apply, (q, pos, nx.ROPE_THETA)),
        "attention_probs causal": lambda m: (m.attention_probs, (q, k, True, scale)),
        "attention_probs full": lambda m: (m.attention_probs, (q, k, False, scale)),
        "attention_streaming": lambda m: (m.attention_streaming, (q, k, v, True, scale)),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--length", type=int, default=400)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)

    backends = nx.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")
    names = sorted(backends)
    print(f"L={args.length} heads={args.heads} head_dim={args.head_dim}, best of {args.repeat} (ms)")
    print(f"{'kernel':<24}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for kernel, pick in cases(args.length, args.heads, args.head_dim, np.random.default_rng(0)).items():
        ms = {n: 1e3 * best_of(*pick(backends[n]), args.repeat) for n in names}
        row = f"{kernel:<24}" + "".join(f"{ms[n]:>12.3f}" for n in names)
        if len(names) > 1:
            row += f"{ms['python'] / ms['compiled']:>11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
