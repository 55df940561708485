"""Compare the compiled and numpy backends of the fused score-loss kernel.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--batch B]
"""
import argparse
import time

import numpy as np

from icebeem.ebm import build_model
from icebeem.kernels import BACKENDS, score_loss_batch
from icebeem.netcore import MlpSpec
from icebeem.numerics import make_rng

SHAPES = [(5, 5), (5, 8, 8, 5), (5, 12, 12, 5), (5, 16, 16, 5), (5, 24, 24, 5), (5, 32, 32, 5), (5, 32, 32, 32, 32, 5), (20, 64, 64, 20)]


def bench(dims, mode, batch, repeats, backend):
    rng = make_rng(0)
    model = build_model(MlpSpec(dims, unchecked=True), 8, mode, rng)
    X = rng.standard_normal((batch, dims[0]))
    T = rng.standard_normal((batch, dims[0]))
    G = model.g(rng.integers(0, 8, batch))
    score_loss_batch(model.f, mode, G, X, T, backend)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        score_loss_batch(model.f, mode, G, X, T, backend)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--batch", type=int, default=126)
    args = p.parse_args()
    if "cython" not in BACKENDS:
        print("compiled backend not built; only the numpy backend is available")
    print(f"{'dims':<26}{'mode':<11}" + "".join(f"{b + ' (us)':>15}" for b in BACKENDS) + ("    speedup" if len(BACKENDS) > 1 else ""))
    for dims in SHAPES:
        for mode in ("plain", "augmented"):
            times = [bench(dims, mode, args.batch, args.repeats, b) for b in BACKENDS]
            row = f"{str(dims):<26}{mode:<11}" + "".join(f"{1e6 * t:15.1f}" for t in times)
            if len(times) > 1:
                row += f"{times[0] / times[1]:10.1f}x"
            print(row)


if __name__ == "__main__":
    main()
