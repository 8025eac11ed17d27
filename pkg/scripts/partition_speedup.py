"""E-step time against the number of partitions on one simulated dataset.

Usage: python3 scripts/partition_speedup.py [--sites 64] [--T 50] [--k 1,2,4,8]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fhdgm.basis import BasisTriple
from fhdgm.estimation import ModelParams, e_step, make_designs, make_layout, simulate
from fhdgm.partition import fit_kmeans

H = np.linspace(0.0, 1.0, 5)
BT = BasisTriple.bspline((0.0, 1.0), 2, p_z=2, p_beta=2, p_sigma=1)
TRUTH = ModelParams(np.log(0.1), [2.0, -1.0], [0.7, 0.4], [1.0, 0.5], [3.0, 2.0])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sites", type=int, default=64)
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--k", default="1,2,4,8")
    ap.add_argument("--repeats", type=int, default=3)
    a = ap.parse_args()
    ds = simulate(make_layout(a.sites, a.T, H, seed=15), BT, TRUTH, seed=16)
    base = None
    for k in (int(v) for v in a.k.split(",")):
        part = None if k == 1 else fit_kmeans(ds.coords(), k, 1e6, trials=3, seed=0, unit=ds.unit)
        designs = make_designs(ds, BT, part)
        times = []
        for _ in range(a.repeats):
            t0 = time.perf_counter()
            e_step(designs, TRUTH)
            times.append(time.perf_counter() - t0)
        t = float(np.median(times))
        base = t if base is None else base
        sizes = [ds.n] if part is None else part.sizes.tolist()
        print(f"k={k:2d} sizes={sizes} E-step {t:.3f} s  ratio to first {t / base:.3f}")


if __name__ == "__main__":
    main()
