"""Compare the compiled and numpy kernels on the two hot loops.

Usage::

    python benchmarks/bench_kernels.py [--banks 49] [--assets 36] [--repeat 3]

Times DebtRank from every single-bank seed and the full contagion sweep
(one fire-sale cascade per initial defaulter), then checks that both
backends return the same numbers.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from overlapnet import _backend
from overlapnet.debtrank import debtrank_all
from overlapnet.firesale import FireSaleConfig, contagion_probability
from overlapnet.market import economic_values, project_overlap
from overlapnet.synthetic import SyntheticSpec, synthetic_market


def _best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--banks", type=int, default=49)
    p.add_argument("--assets", type=int, default=36)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    market = synthetic_market(SyntheticSpec(n_assets=args.assets, n_banks=args.banks), args.seed).market
    net = project_overlap(market)
    v = economic_values(market)
    backends = ["numpy"]
    try:
        _backend.get("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernels unavailable; timing numpy only")

    rows = []
    results = {}
    for name in backends:
        t_dr, dr = _best_of(lambda: debtrank_all(net.impact, v, backend=name), args.repeat)
        cfg = FireSaleConfig.moderate()
        t_fs, fs = _best_of(lambda: contagion_probability(market, cfg, backend=name), args.repeat)
        rows.append((name, t_dr, t_fs))
        results[name] = (dr, fs)

    print(f"market: K={market.K} N={market.N}, best of {args.repeat}")
    print(f"{'backend':<8} {'debtrank_all [ms]':>18} {'contagion sweep [ms]':>22}")
    for name, t_dr, t_fs in rows:
        print(f"{name:<8} {1e3 * t_dr:>18.2f} {1e3 * t_fs:>22.2f}")
    if len(rows) == 2:
        (_, a1, b1), (_, a2, b2) = rows
        print(f"{'speedup':<8} {a1 / a2:>18.1f}x {b1 / b2:>21.1f}x")
        (dr_n, fs_n), (dr_c, fs_c) = results["numpy"], results["cython"]
        dr_gap = float(np.max(np.abs(dr_n.per_bank - dr_c.per_bank)))
        pf_gap = max(float(np.max(np.abs(a.price_factor - b.price_factor))) for a, b in zip(fs_n.results, fs_c.results))
        print(f"max |difference|: debtrank {dr_gap:.2e}, price factors {pf_gap:.2e}")


if __name__ == "__main__":
    main()
