#!/usr/bin/env python3
"""Benchmark the compiled simulation kernel against the numpy fallback.

Runs the same mid-size synthetic model on both backends across worker counts
and prints a timing table plus the maximum relative deviation between the two
loss distributions (expected: agreement to ~1e-12).

Usage: python benchmarks/bench_backends.py [--paths N] [--horizon T]
"""

import argparse
import time

import numpy as np

from climcred import (
    AggregatedExposure,
    FactorModel,
    LoadingSchedule,
    PreparedModel,
    RecoveryTable,
    simulate,
)
from climcred._backend import HAVE_COMPILED


def build_model(horizon: int, groups: int = 8, ratings: int = 8, dim: int = 4) -> PreparedModel:
    rng = np.random.default_rng(0)
    K = ratings
    raw = rng.dirichlet(np.ones(K) * 3, size=(groups, K))
    raw[:, -1, :] = 0.0
    raw[:, -1, -1] = 1.0
    mats = np.broadcast_to(raw[:, None], (groups, horizon, K, K)).copy()
    loadings = rng.uniform(-0.2, 0.45, size=(groups, K - 1, horizon, dim))
    C = np.eye(dim)
    corr = np.einsum("gitd,de,gite->git", loadings, C, loadings)
    labels = tuple(f"G{g}" for g in range(groups))
    sched = LoadingSchedule(
        approach="t1", loadings=loadings, correlations=corr, matrices=mats, groups=labels
    )
    expo = AggregatedExposure(
        values=rng.uniform(10, 150, size=(groups, K - 1, horizon + 1)), groups=labels
    )
    rec = RecoveryTable(
        mu=rng.uniform(-0.2, 0.8, size=(groups, K - 1, horizon)),
        sigma=rng.uniform(0.2, 1.0, size=(groups, K - 1, horizon)),
        loadings=rng.uniform(-0.3, 0.3, size=(groups, K - 1, horizon, dim)),
    )
    return PreparedModel.from_components(expo, sched, rec, FactorModel(correlation=C))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--paths", type=int, default=20_000)
    parser.add_argument("--horizon", type=int, default=20)
    args = parser.parse_args()

    model = build_model(args.horizon)
    backends = ["numpy"] + (["compiled"] if HAVE_COMPILED else [])
    if not HAVE_COMPILED:
        print("compiled kernel not available; benchmarking the fallback only")

    results = {}
    print(f"{args.paths} paths, horizon {args.horizon}, "
          f"{model.num_groups} groups, {model.num_ratings} ratings, "
          f"{model.factor_model.dim} factors\n")
    print(f"{'backend':<10} {'workers':>7} {'seconds':>9} {'paths/s':>12}")
    for backend in backends:
        for workers in (1, 4):
            t0 = time.perf_counter()
            res = simulate(model, args.paths, seed=42, workers=workers, backend=backend)
            dt = time.perf_counter() - t0
            results[backend] = res
            print(f"{backend:<10} {workers:>7} {dt:>9.3f} {args.paths / dt:>12.0f}")

    if len(results) == 2:
        a, b = results["numpy"].losses_by_period, results["compiled"].losses_by_period
        scale = max(1.0, float(np.max(np.abs(a))))
        print(f"\nmax |numpy - compiled| / scale = {float(np.max(np.abs(a - b))) / scale:.3e}")


if __name__ == "__main__":
    main()
