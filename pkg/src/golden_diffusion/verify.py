"""Randomized self-checks over the bound and softmax machinery.

Each suite draws random problem instances, evaluates an identity or an
inequality that must hold exactly (up to stated float tolerances), and
reports one CheckResult per instance group. Failures carry enough of
the instance (seed, sizes, noise level) to replay them.

The subset weighting used by the bound-chain suite is injectable so a
deliberately broken implementation (wrong normalizer, wrong subset) is
caught by the identity checks rather than sneaking through averages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import compute_bound, tail_mass_ratio
from .dataset import DatasetStore, make_moons
from .denoiser import SoftmaxAccumulator, merge_accumulators
from .schedule import DiffusionSchedule, build_linear_beta, forward_noise, g_of_sigma
from .selection import ScheduleParams, k_of_t, largest_k, m_of_t


@dataclass
class CheckResult:
    name: str
    passed: bool
    n_instances: int
    worst: float  # worst observed violation / slack margin
    detail: str = ""
    replay: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.n_instances} instances, worst={self.worst:.3e}{extra}"


def _renormalized_subset(logits: np.ndarray, subset: np.ndarray) -> np.ndarray:
    """Reference subset weighting: softmax over the subset logits."""
    sub = logits[subset]
    w = np.exp(sub - sub.max())
    return w / w.sum()


SubsetWeightFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def bound_chain_suite(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    n_instances: int = 50,
    rng_seed: int = 11,
    subset_weights: SubsetWeightFn = _renormalized_subset,
    slack: float = 1e-9,
    identity_tol: float = 1e-10,
) -> list[CheckResult]:
    """Truncation-bound identities and the two-sided certificate chain.

    Per instance: noisy query from a random stride point, exact top-k
    subset at a random size, then three checks.
      1. renormalization identity: w_sub - w_full == w_sub * tail_ratio,
         elementwise over the subset;
      2. discarded-mass identity: sum of dropped full weights == tail_ratio;
      3. chain: realized error <= ratio certificate <= gap certificate.
    """
    rng = np.random.Generator(np.random.Philox(rng_seed))
    worst = {"renorm": 0.0, "tailmass": 0.0, "chain": -math.inf}
    fails: dict[str, dict] = {}
    for inst in range(n_instances):
        t = int(rng.choice(schedule.ddim_steps))
        alpha = schedule.alpha_at(t)
        sigma_sq = schedule.sigma_sq_at(t)
        row = store.samples[int(rng.integers(0, store.n))]
        query = forward_noise(
            np.asarray(row, dtype=np.float64), t, rng.standard_normal(store.dim), schedule
        )
        k = int(rng.integers(1, max(2, store.n // 2)))
        q_scaled = query / math.sqrt(alpha)
        diff = np.asarray(store.samples, dtype=np.float64) - q_scaled
        logits = -np.einsum("ij,ij->i", diff, diff) / (2.0 * sigma_sq)
        subset = np.sort(largest_k(logits, k))

        shifted = np.exp(logits - logits.max())
        w_full = shifted / shifted.sum()
        w_sub = subset_weights(logits, subset)
        ratio = tail_mass_ratio(logits, subset)

        err1 = float(np.abs((w_sub - w_full[subset]) - w_sub * ratio).max())
        err2 = abs(float(w_full.sum() - w_full[subset].sum()) - ratio)
        worst["renorm"] = max(worst["renorm"], err1)
        worst["tailmass"] = max(worst["tailmass"], err2)

        diag = compute_bound(logits, k, store.radius)
        full_mean = w_full @ np.asarray(store.samples, dtype=np.float64)
        sub_mean = w_sub @ np.asarray(store.samples[subset], dtype=np.float64)
        actual = float(np.linalg.norm(full_mean - sub_mean))
        chain_violation = max(
            actual - diag.ratio_bound, diag.ratio_bound - diag.bound
        ) / max(1.0, diag.bound)
        worst["chain"] = max(worst["chain"], chain_violation)

        replay = {"instance": inst, "t": t, "k": k, "seed": rng_seed}
        if err1 > identity_tol and "renorm" not in fails:
            fails["renorm"] = replay
        if err2 > identity_tol and "tailmass" not in fails:
            fails["tailmass"] = replay
        if chain_violation > slack and "chain" not in fails:
            fails["chain"] = replay

    return [
        CheckResult(
            "renormalization identity",
            "renorm" not in fails,
            n_instances,
            worst["renorm"],
            detail=f"tol {identity_tol:g}",
            replay=fails.get("renorm", {}),
        ),
        CheckResult(
            "discarded-mass identity",
            "tailmass" not in fails,
            n_instances,
            worst["tailmass"],
            detail=f"tol {identity_tol:g}",
            replay=fails.get("tailmass", {}),
        ),
        CheckResult(
            "error <= ratio bound <= gap bound",
            "chain" not in fails,
            n_instances,
            worst["chain"],
            detail=f"slack {slack:g}",
            replay=fails.get("chain", {}),
        ),
    ]


def asymptotic_suite(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    rng_seed: int = 13,
) -> list[CheckResult]:
    """Scaling of the logit gap with sigma.

    The gap is a fixed distance spread divided by 2 sigma^2, so doubling
    sigma^2 halves it bitwise; at the top of the stride the gap
    certificate must be vacuous (exp(-gap) near 1) and at the bottom the
    discarded mass must be negligible.
    """
    rng = np.random.Generator(np.random.Philox(rng_seed))
    row = store.samples[int(rng.integers(0, store.n))]
    q = np.asarray(row, dtype=np.float64) + 0.01 * rng.standard_normal(store.dim)
    diff = np.asarray(store.samples, dtype=np.float64) - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    part = np.partition(d2, (0, store.n // 2))
    spread = float(part[store.n // 2] - part[0])

    halving_exact = True
    for s2 in (1e-4, 1e-2, 1.0, 17.3):
        g1 = spread / (2.0 * s2)
        g2 = spread / (2.0 * (2.0 * s2))
        if g2 != g1 / 2.0:
            halving_exact = False

    s2_hi = schedule.sigma_hi**2
    vacuous = math.exp(-spread / (2.0 * s2_hi))

    s2_lo = schedule.sigma_lo**2
    logits_lo = -d2 / (2.0 * s2_lo)
    k_lo = max(1, store.n // 20)
    subset = largest_k(logits_lo, k_lo)
    tail_lo = tail_mass_ratio(logits_lo, subset)

    return [
        CheckResult(
            "gap halves exactly when sigma^2 doubles",
            halving_exact,
            4,
            0.0 if halving_exact else 1.0,
        ),
        CheckResult(
            "high-noise certificate vacuous",
            vacuous >= 0.99,
            1,
            vacuous,
            detail="exp(-gap) at sigma_hi, want >= 0.99",
        ),
        CheckResult(
            "low-noise tail negligible",
            tail_lo <= 1e-6,
            1,
            tail_lo,
            detail="discarded mass at sigma_lo with k = N/20, want <= 1e-6",
        ),
    ]


def streaming_suite(rng_seed: int = 17, n_instances: int = 25) -> list[CheckResult]:
    """Streaming softmax against a naive two-pass oracle, plus merge laws."""
    rng = np.random.Generator(np.random.Philox(rng_seed))
    worst_naive = 0.0
    worst_merge = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(3, 400))
        d = int(rng.integers(1, 24))
        data = rng.normal(2.0, 1.0, size=(n, d))
        logits = rng.normal(0.0, 30.0, size=n)

        shifted = np.exp(logits - logits.max())
        w = shifted / shifted.sum()
        oracle = w @ data

        acc = SoftmaxAccumulator(d)
        start = 0
        while start < n:
            width = int(rng.integers(1, n - start + 1))
            acc.update(logits[start : start + width], data[start : start + width])
            start += width
        rel = np.linalg.norm(acc.posterior_mean() - oracle) / max(
            np.linalg.norm(oracle), 1e-300
        )
        worst_naive = max(worst_naive, float(rel))

        cut1, cut2 = sorted(rng.integers(0, n + 1, size=2))
        parts = []
        for lo, hi in ((0, cut1), (cut1, cut2), (cut2, n)):
            p = SoftmaxAccumulator(d)
            if hi > lo:
                p.update(logits[lo:hi], data[lo:hi])
            parts.append(p)
        left = merge_accumulators(merge_accumulators(parts[0], parts[1]), parts[2])
        right = merge_accumulators(parts[0], merge_accumulators(parts[1], parts[2]))
        rel_merge = np.linalg.norm(left.posterior_mean() - right.posterior_mean()) / max(
            np.linalg.norm(oracle), 1e-300
        )
        worst_merge = max(worst_merge, float(rel_merge))

    return [
        CheckResult(
            "streaming equals naive softmax",
            worst_naive <= 1e-10,
            n_instances,
            worst_naive,
            detail="relative, tol 1e-10",
        ),
        CheckResult(
            "accumulator merge associative",
            worst_merge <= 1e-12,
            n_instances,
            worst_merge,
            detail="relative, tol 1e-12",
        ),
    ]


def schedule_suite(rng_seed: int = 19, n_instances: int = 200) -> list[CheckResult]:
    """g endpoints and the counter-monotonic subset-size schedules."""
    schedule = build_linear_beta()
    g_hi = g_of_sigma(schedule, schedule.sigma_hi)
    g_lo = g_of_sigma(schedule, schedule.sigma_lo)
    endpoints = g_hi == 1.0 and g_lo == 0.0

    rng = np.random.Generator(np.random.Philox(rng_seed))
    params = ScheduleParams(m_min=100, m_max=2500, k_min=50, k_max=100)
    mono_ok = True
    for _ in range(n_instances):
        g1, g2 = sorted(rng.uniform(0.0, 1.0, size=2))
        if m_of_t(params, g2) > m_of_t(params, g1):
            mono_ok = False
        if k_of_t(params, g2) < k_of_t(params, g1):
            mono_ok = False

    return [
        CheckResult("g endpoints exact", endpoints, 2, abs(g_hi - 1.0) + abs(g_lo)),
        CheckResult(
            "m non-increasing / k non-decreasing in g",
            mono_ok,
            n_instances,
            0.0 if mono_ok else 1.0,
        ),
    ]


def run_verification(
    store: DatasetStore | None = None,
    schedule: DiffusionSchedule | None = None,
    rng_seed: int = 11,
    n_instances: int = 50,
    subset_weights: SubsetWeightFn = _renormalized_subset,
) -> list[CheckResult]:
    """All suites; defaults to a 2000-point moons store and 10-step stride."""
    if store is None:
        store = make_moons(2000, noise_std=0.05, rng_seed=7)
    if schedule is None:
        schedule = build_linear_beta()
    results = []
    results += bound_chain_suite(
        store, schedule, n_instances=n_instances, rng_seed=rng_seed, subset_weights=subset_weights
    )
    results += asymptotic_suite(store, schedule, rng_seed=rng_seed + 2)
    results += streaming_suite(rng_seed=rng_seed + 4)
    results += schedule_suite(rng_seed=rng_seed + 6)
    return results
