"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeats 5]

Kernel timings call both implementations directly.  The end-to-end EPIG row
runs ``epig_scores`` in a subprocess per backend, since the dispatch is fixed
at import time by ``PARBALS_DISABLE_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from parbals import _kernels as K


def best_of(fn, repeats):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def block_inputs(rng, c, nv, n, k=200):
    val = rng.dirichlet(np.ones(c), size=(k, nv))
    pool = rng.dirichlet(np.ones(c), size=(k, n))
    block = np.einsum("kva,kib->abvi", val[..., :-1], pool[..., :-1]) / k
    return block, val.mean(axis=0), pool.mean(axis=0)


EPIG_SNIPPET = """
import time, numpy as np
from parbals.acquisition import epig_scores
rng = np.random.default_rng(0)
pool = rng.dirichlet(np.ones({c}), size=(200, 1900))
val = rng.dirichlet(np.ones({c}), size=(200, 500))
epig_scores(pool[:, :10], val[:, :10])
t = time.perf_counter(); epig_scores(pool, val); print(time.perf_counter() - t)
"""


def epig_subprocess(c, disable):
    env = dict(os.environ, PARBALS_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", EPIG_SNIPPET.format(c=c)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []

    for c, nv, n in ((2, 500, 1900), (3, 200, 1000), (10, 100, 500)):
        block, row, col = block_inputs(rng, c, nv, n)
        t_np = best_of(lambda: K.mi_from_block_np(block, row, col), args.repeats)
        t_nb = best_of(lambda: K.mi_from_block_nb(block, row, col), args.repeats)
        err = np.max(np.abs(K.mi_from_block_np(block, row, col) - K.mi_from_block_nb(block, row, col)))
        rows.append((f"pairwise MI c={c} {nv}x{n}", t_np, t_nb, err))

    p = rng.dirichlet(np.ones(10), size=200_000)
    t_np = best_of(lambda: K.entropy_np(p), args.repeats)
    t_nb = best_of(lambda: K.entropy_nb(p), args.repeats)
    rows.append(("entropy 200000x10", t_np, t_nb, np.max(np.abs(K.entropy_np(p) - K.entropy_nb(p)))))

    idx = np.arange(1_000_000, dtype=np.uint64)
    t_np = best_of(lambda: K.uniform_stream_np(7, 3, idx), args.repeats)
    t_nb = best_of(lambda: K.uniform_stream_nb(7, 3, idx), args.repeats)
    err = np.max(np.abs(K.uniform_stream_np(7, 3, idx) - K.uniform_stream_nb(7, 3, idx)))
    rows.append(("uniform stream 1e6", t_np, t_nb, err))

    for c in (2, 3):
        rows.append((f"epig_scores c={c} k=200 500x1900", epig_subprocess(c, True),
                     epig_subprocess(c, False), float("nan")))

    print(f"{'kernel':<34} {'numpy s':>9} {'numba s':>9} {'speedup':>8} {'max |diff|':>11}")
    for name, t_np, t_nb, err in rows:
        print(f"{name:<34} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:8.1f} {err:11.2e}")


if __name__ == "__main__":
    main()
