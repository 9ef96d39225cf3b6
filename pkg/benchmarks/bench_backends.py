"""Time the numba and numpy kernel backends on the Gibbs sampler and the filter.

    python benchmarks/bench_backends.py [--sites 100] [--samples 75] [--draws 2000]
"""

import argparse
import time

import numpy as np

from bfdmr import _backend
from bfdmr.dwpf import FilterConfig, PopulationBounds, run_filter
from bfdmr.gibbs import Hyperparameters, WindowData, run_gibbs


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sites", type=int, default=100)
    ap.add_argument("--samples", type=int, default=75)
    ap.add_argument("--draws", type=int, default=2000)
    ap.add_argument("--windows", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    r = np.random.default_rng(0)
    grp = (np.arange(args.samples) >= args.samples // 3).astype(int)
    ws = [WindowData(np.sin(np.linspace(0, 3, args.sites))[:, None] + 0.5 * r.normal(size=(args.sites, args.samples)),
                     grp) for _ in range(args.windows)]
    hyper = Hyperparameters(n_iter=args.draws, burn_in=args.draws // 10)
    s = args.draws / 20000
    cfg = FilterConfig(hyper=hyper, bounds=PopulationBounds().scaled(s))

    print(f"{'backend':8s} {'gibbs_s':>9s} {'filter_s':>9s}")
    for name in _backend.BACKENDS:
        try:
            kern = _backend.load(name)
        except ImportError:
            print(f"{name:8s} unavailable")
            continue
        # warm-up compiles the numba kernels
        run_gibbs(ws[0], Hyperparameters(n_iter=5, burn_in=1), np.random.default_rng(0), backend=kern)
        g = _best(lambda: run_gibbs(ws[0], hyper, np.random.default_rng(1), backend=kern), args.repeat)
        f = _best(lambda: run_filter(ws, cfg, seed=1, backend=kern), args.repeat)
        print(f"{name:8s} {g:9.3f} {f:9.3f}")


if __name__ == "__main__":
    main()
