"""Parameter recovery over repeated simulations.

Usage: python3 scripts/recovery_study.py [--runs 50] [--sites 30] [--T 200] [--delta 1e-3]

Prints one line per run plus the share of runs where g is within 0.1,
theta within 30% and every c_beta within 3 standard errors of the truth.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fhdgm.basis import BasisTriple
from fhdgm.estimation import ModelParams, em_fit, make_layout, simulate
from fhdgm.inference import varcov_truncated

H = np.linspace(0.0, 1.0, 5)
BT = BasisTriple.bspline((0.0, 1.0), 2, p_z=2, p_beta=2, p_sigma=1)
TRUTH = ModelParams(np.log(0.1), [2.0, -1.0], [0.7, 0.4], [1.0, 0.5], [3.0, 2.0])


def one_run(seed: int, n: int, T: int, delta: float) -> tuple[bool, str]:
    ds = simulate(make_layout(n, T, H, extent=(0, 10, 0, 10), seed=seed), BT, TRUTH, seed=10_000 + seed)
    fit = em_fit(ds, BT)
    vc = varcov_truncated(fit.model, delta)
    se = vc.standard_errors()
    P = fit.params
    idx = P.c_eps.size + np.arange(P.c_beta.size)
    z = np.abs(P.c_beta - TRUTH.c_beta) / se[idx]
    ok = (np.all(np.abs(P.g - TRUTH.g) <= 0.1)
          and np.all(np.abs(P.theta - TRUTH.theta) <= 0.3 * TRUTH.theta)
          and np.all(z <= 3))
    line = (f"seed={seed:3d} iters={fit.iterations:3d} t*={vc.t_star:4d} "
            f"g={np.round(P.g, 3)} theta={np.round(P.theta, 2)} max|z_beta|={z.max():.2f} "
            f"{'ok' if ok else 'MISS'}")
    return bool(ok), line


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=50)
    ap.add_argument("--sites", type=int, default=30)
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--delta", type=float, default=1e-3)
    a = ap.parse_args()
    t0 = time.perf_counter()
    hits = 0
    for seed in range(a.runs):
        ok, line = one_run(seed, a.sites, a.T, a.delta)
        hits += ok
        print(line, flush=True)
    print(f"recovered {hits}/{a.runs} in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
