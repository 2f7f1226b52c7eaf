"""Two-moons walkthrough: golden-subset sampling next to the full scan.

Runs one matched-seed trajectory in both modes, prints the per-step
budgets and posterior-concentration figures, and reports how far the
truncated trajectory drifted from the exact one.

  python3 demos/moons_walkthrough.py --seed 8
"""

from __future__ import annotations

import argparse

import numpy as np

from golden_diffusion.dataset import make_moons
from golden_diffusion.metrics import mse
from golden_diffusion.sampler import SamplerConfig, sample
from golden_diffusion.schedule import build_linear_beta


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=2000, help="dataset size")
    parser.add_argument("--seed", type=int, default=8)
    args = parser.parse_args()

    store = make_moons(args.n, noise_std=0.05, rng_seed=7)
    schedule = build_linear_beta(1000, 1e-4, 0.02, 10)

    golden = sample(store, schedule, SamplerConfig(mode="golden", rng_seed=args.seed))
    full = sample(store, schedule, SamplerConfig(mode="full_scan", rng_seed=args.seed))

    print(f"dataset: two moons, N={store.n}, radius {store.radius:.3f}")
    print(f"{'step':>4} {'t':>4} {'g':>6} {'m_t':>6} {'k_t':>6} {'eff support':>12} {'max weight':>11}")
    for rec in golden.records:
        print(
            f"{rec.index:>4} {rec.t:>4} {rec.g:>6.3f} {rec.m:>6} {rec.k:>6} "
            f"{rec.eff_support:>12.1f} {rec.max_weight:>11.4f}"
        )

    drift = mse(golden.final, full.final)
    print(f"\ngolden final:    {np.array2string(golden.final, precision=4)}")
    print(f"full-scan final: {np.array2string(full.final, precision=4)}")
    print(f"MSE between modes: {drift:.3e}")
    print("note how the effective support collapses as noise falls: late steps")
    print("average a handful of neighbors, so small subsets lose nothing there.")
    print("what drift exists is seeded early, where the posterior is broad and")
    print("truncation bites hardest; some seeds land on the other moon entirely.")


if __name__ == "__main__":
    main()
