"""Time the compiled and numpy GRU kernels on the same problems.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from pedfuse import kernels

SHAPES = [  # batch, steps, input width, hidden width
    (1, 16, 32, 16),
    (16, 16, 32, 16),
    (16, 16, 85, 16),
    (2, 16, 512, 256),
]


def problem(rng, B, T, I, H):
    return (
        rng.normal(size=(B, T, I)), np.zeros((B, H)), 0.1 * rng.normal(size=(3 * H, I)),
        0.1 * rng.normal(size=(3 * H, H)), np.zeros(3 * H),
    )


def best_time(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    names = sorted(kernels.BACKENDS)
    if "cython" not in names:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'B,T,I,H':<16}" + "".join(f"{n + ' fwd':>14}{n + ' bwd':>14}" for n in names) + f"{'speedup':>10}")
    for shape in SHAPES:
        xs, h0, W, U, b = problem(rng, *shape)
        ghs = rng.normal(size=(shape[0], shape[1], shape[3]))
        totals, cells = {}, []
        for name in names:
            impl = kernels.BACKENDS[name]
            cache = impl.gru_forward(xs, h0, W, U, b)
            f = best_time(lambda: impl.gru_forward(xs, h0, W, U, b), args.repeat)
            g = best_time(lambda: impl.gru_backward(xs, h0, *cache, W, U, ghs), args.repeat)
            totals[name] = f + g
            cells += [f"{f * 1e3:11.3f} ms", f"{g * 1e3:11.3f} ms"]
        speed = f"{totals['python'] / totals['cython']:9.2f}x" if "cython" in totals else "-"
        print(f"{','.join(map(str, shape)):<16}" + "".join(f"{c:>14}" for c in cells) + f"{speed:>10}")


if __name__ == "__main__":
    main()
