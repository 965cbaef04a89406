"""Time the hot kernels under the numba and numpy backends.

The backend is fixed at import, so each backend runs in its own subprocess:

    python3 benchmarks/bench_kernels.py            # both backends, table
    python3 benchmarks/bench_kernels.py --worker   # current backend only, JSON
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat=3):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def worker(scale: float) -> dict:
    from probitpanel import BACKEND, rng, stats, synthetic
    from probitpanel import binomial_mixture as bm
    from probitpanel import gibbs_discrete as gd
    from probitpanel import gibbs_gaussian as gg
    from probitpanel.chains import ChainConfig
    from probitpanel.predictive import predictive_samples

    n = int(200_000 * scale)
    g = np.random.default_rng(0)
    mean = g.normal(size=n)
    pos = g.random(n) < 0.3
    key = rng.split_seed(1)
    out = {"backend": BACKEND}
    out["truncated_normal (%d)" % n] = _best(
        lambda: stats.truncated_normal_draws(mean, 1.0, pos, key, 1, 1))

    ds, _ = synthetic.gaussian_panel(int(2000 * scale), [0.3, -0.2, 0.1], -0.84, 0.45, seed=0)
    cfg = ChainConfig(seed=1, iterations=50, burn_in=0)
    out["gaussian sweep x50"] = _best(lambda: gg.run_chain(ds, config=cfg), repeat=2)
    out["discrete sweep x50 (K=30)"] = _best(lambda: gd.run_chain_discrete(ds, config=cfg), repeat=2)

    ch = gg.run_chain(ds, config=ChainConfig(seed=1, iterations=300, burn_in=100))
    rows = np.flatnonzero(ds.occasion >= 3)[: int(300 * scale)]
    out["predictive (%d rows x 200 draws)" % rows.size] = _best(
        lambda: predictive_samples(ds, ch, rows=rows), repeat=1)

    y = g.binomial(20, np.where(g.random(int(2000 * scale)) < 0.5, 0.1, 0.8))
    data = bm.BinomialData(y, np.full(y.size, 20))
    bcfg = ChainConfig(seed=1, iterations=20, burn_in=0)
    out["collapsed binomial sweep x20 (J=10)"] = _best(
        lambda: bm.fit_binomial_mixture(data, 10, config=bcfg), repeat=2)
    return out


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--scale", type=float, default=1.0)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(worker(args.scale)))
        return
    res = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, PROBITPANEL_BACKEND=backend)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--scale", str(args.scale)],
                              env=env, capture_output=True, text=True, check=True)
        res[backend] = json.loads(proc.stdout.strip().splitlines()[-1])
    keys = [k for k in res["numba"] if k != "backend"]
    width = max(map(len, keys))
    print(f"{'kernel':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speedup':>8}")
    for k in keys:
        a, b = res["numba"][k], res["numpy"][k]
        print(f"{k:<{width}}  {a:10.4f}  {b:10.4f}  {b / a:8.1f}x")


if __name__ == "__main__":
    main()
