"""Fidelity metrics, cost models, and wall-clock benchmarks.

The cost model counts distance multiply-accumulates per denoising step:
a full scan pays N * D, the two-stage screen pays N * d on the proxy
plus m_t * D on the candidates. Wall-clock benchmarking times the same
step implementations the sampler calls, on forward-noised queries.
"""

from __future__ import annotations

import math
import statistics
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetStore
from .denoiser import _CHUNK_ROWS, denoise_full, denoise_subset, denoise_weighted_stream
from .schedule import DiffusionSchedule, forward_noise, g_of_sigma
from .selection import ScheduleParams, build_proxy, k_of_t, m_of_t, select_step


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error over all entries; shapes must match."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    d = a - b
    return float(np.mean(d * d))


def r_squared(pred: np.ndarray, ref: np.ndarray) -> float:
    """Coefficient of determination of pred against ref, pooled entrywise.

    1 - SS_res / SS_tot with SS_tot centered on the reference mean.
    Negative when pred fits worse than the constant mean predictor.
    """
    pred = np.asarray(pred, dtype=np.float64).ravel()
    ref = np.asarray(ref, dtype=np.float64).ravel()
    if pred.shape != ref.shape:
        raise ValueError("shape mismatch")
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("reference is constant; r^2 undefined")
    ss_res = float(np.sum((pred - ref) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class ComparisonReport:
    """MSE and r^2 of a sample set against a reference set."""

    mse: float
    r2: float
    n: int


def compare(pred: np.ndarray, ref: np.ndarray) -> ComparisonReport:
    """Score pred against ref on both fidelity metrics at once."""
    pred = np.asarray(pred, dtype=np.float64)
    return ComparisonReport(mse=mse(pred, ref), r2=r_squared(pred, ref), n=int(pred.shape[0]))


# ---------------------------------------------------------------------------
# cost model


def flops_full_step(n: int, dim: int) -> int:
    return n * dim


def flops_golden_step(n: int, dim: int, proxy_dim: int, m: int) -> int:
    return n * proxy_dim + m * dim


def flops_for_stride(
    schedule: DiffusionSchedule,
    params: ScheduleParams,
    n: int,
    dim: int,
    proxy_dim: int,
) -> dict:
    """Modelled distance-MAC counts for one trajectory, both modes."""
    per_step_full = []
    per_step_golden = []
    for g in schedule.g_values:
        m = min(m_of_t(params, float(g)), n)
        per_step_full.append(flops_full_step(n, dim))
        per_step_golden.append(flops_golden_step(n, dim, proxy_dim, m))
    total_full = int(sum(per_step_full))
    total_golden = int(sum(per_step_golden))
    return {
        "per_step_full": per_step_full,
        "per_step_golden": per_step_golden,
        "total_full": total_full,
        "total_golden": total_golden,
        "ratio": total_full / total_golden,
    }


def peak_bytes_model(mode: str, n: int, dim: int, proxy_dim: int, m: int, itemsize: int) -> int:
    """Analytic peak working set of one denoising step, in bytes.

    Counts the resident store plus the largest transient block the scan
    materializes (difference block and its square, float64).
    """
    store_bytes = n * dim * itemsize
    chunk = min(_CHUNK_ROWS, n)
    if mode == "full_scan":
        return store_bytes + 2 * chunk * dim * 8 + n * 8
    if mode == "golden":
        proxy_bytes = n * proxy_dim * 8
        transient = max(2 * chunk * proxy_dim * 8, 2 * min(chunk, m) * dim * 8) + n * 8
        return store_bytes + proxy_bytes + transient
    if mode == "wss":
        return store_bytes + 2 * chunk * dim * 8 + n * 8
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# wall-clock benchmark


@dataclass(frozen=True)
class PerfReport:
    mode: str
    n: int
    dim: int
    proxy_dim: int
    m_t: int
    k_t: int
    step_time_s: float  # median over timed repetitions
    flops_model: int
    peak_bytes: int


def time_denoise_step(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    params: ScheduleParams,
    mode: str,
    t: int,
    repeats: int = 10,
    warmup: int = 3,
    rng_seed: int = 2024,
    wss_batch_size: int = 1024,
) -> PerfReport:
    """Median wall-clock of one denoising step at timestep t.

    Queries are forward-noised training rows (a fresh one per
    repetition), so the timed work matches what the sampler does
    mid-trajectory.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if repeats == 1:
        warnings.warn("repeats=1 gives an unstable timing estimate")
    alpha = schedule.alpha_at(t)
    sigma_sq = schedule.sigma_sq_at(t)
    g_val = g_of_sigma(schedule, math.sqrt(sigma_sq))
    m_t = min(m_of_t(params, g_val), store.n)
    k_t = min(k_of_t(params, g_val), m_t)
    proxy_dim = store.dim
    if mode == "golden":
        if store.proxy is None:
            build_proxy(store)
        proxy_dim = store.proxy.shape[1]

    rng = np.random.Generator(np.random.Philox(rng_seed))
    queries = []
    for _ in range(warmup + repeats):
        row = store.samples[int(rng.integers(0, store.n))]
        queries.append(
            forward_noise(np.asarray(row, dtype=np.float64), t, rng.standard_normal(store.dim), schedule)
        )

    def run(query: np.ndarray) -> None:
        if mode == "golden":
            sel = select_step(store, query, alpha, sigma_sq, params, g_val, step=t)
            denoise_subset(store, query, alpha, sigma_sq, sel.golden)
        elif mode == "full_scan":
            denoise_full(store, query, alpha, sigma_sq)
        elif mode == "wss":
            denoise_weighted_stream(store, query, alpha, sigma_sq, batch_size=wss_batch_size)
        else:
            raise ValueError(f"unknown mode {mode!r}")

    for q in queries[:warmup]:
        run(q)
    times = []
    for q in queries[warmup:]:
        start = time.perf_counter()
        run(q)
        times.append(time.perf_counter() - start)

    flops = (
        flops_golden_step(store.n, store.dim, proxy_dim, m_t)
        if mode == "golden"
        else flops_full_step(store.n, store.dim)
    )
    return PerfReport(
        mode=mode,
        n=store.n,
        dim=store.dim,
        proxy_dim=proxy_dim,
        m_t=m_t,
        k_t=k_t,
        step_time_s=float(statistics.median(times)),
        flops_model=flops,
        peak_bytes=peak_bytes_model(
            mode, store.n, store.dim, proxy_dim, m_t, store.samples.itemsize
        ),
    )


def benchmark(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    params: ScheduleParams | None = None,
    modes: tuple[str, ...] = ("full_scan", "golden"),
    t: int | None = None,
    repeats: int = 10,
    warmup: int = 3,
    rng_seed: int = 2024,
) -> list[PerfReport]:
    """Time each mode at one stride timestep (default: mid-stride)."""
    params = params or ScheduleParams.from_dataset_size(store.n)
    if t is None:
        t = int(schedule.ddim_steps[len(schedule.ddim_steps) // 2])
    return [
        time_denoise_step(
            store, schedule, params, mode, t, repeats=repeats, warmup=warmup, rng_seed=rng_seed
        )
        for mode in modes
    ]
