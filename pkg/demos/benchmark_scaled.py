"""Cost model vs measured wall clock at image scale.

Builds a synthetic 28x28 blob corpus, prints the per-step flop model for
full-scan and golden modes, then times both across the sampling stride.
The golden win grows with N because the coarse screen works in the
pooled proxy space and only the survivors touch full-resolution rows.

  python3 demos/benchmark_scaled.py --n 20000
"""

from __future__ import annotations

import argparse

import numpy as np

from golden_diffusion.dataset import from_arrays, synth_blob_images
from golden_diffusion.metrics import flops_for_stride, time_denoise_step
from golden_diffusion.schedule import build_linear_beta
from golden_diffusion.selection import ScheduleParams, build_proxy


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=20000, help="corpus size")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    images, labels = synth_blob_images(args.n, rng_seed=42)
    store = from_arrays(
        images.reshape(args.n, -1).astype(np.float32) / 127.5 - 1.0,
        labels=labels,
        shape=(1, 28, 28),
    )
    schedule = build_linear_beta(1000, 1e-4, 0.02, 10)
    params = ScheduleParams.from_dataset_size(store.n)
    build_proxy(store)

    model = flops_for_stride(schedule, params, store.n, store.dim, store.proxy.shape[1])
    print(f"N={store.n}, D={store.dim}, proxy dim {store.proxy.shape[1]}")
    print(f"modelled flops over the stride: full {model['total_full']:.3e}, "
          f"golden {model['total_golden']:.3e}, ratio {model['ratio']:.2f}")

    print(f"\n{'t':>4} {'full ms':>9} {'golden ms':>10} {'speedup':>8}")
    speedups = []
    for t in schedule.ddim_steps:
        full = time_denoise_step(
            store, schedule, params, "full_scan", t=int(t), repeats=args.repeats, warmup=1,
            rng_seed=77,
        )
        golden = time_denoise_step(
            store, schedule, params, "golden", t=int(t), repeats=args.repeats, warmup=1,
            rng_seed=77,
        )
        speedups.append(full.step_time_s / golden.step_time_s)
        print(f"{t:>4} {full.step_time_s * 1e3:>9.2f} {golden.step_time_s * 1e3:>10.2f} "
              f"{speedups[-1]:>8.2f}")
    print(f"\nmedian measured speedup: {np.median(speedups):.2f}x "
          f"(model predicts {model['ratio']:.2f}x at equal memory bandwidth)")


if __name__ == "__main__":
    main()
