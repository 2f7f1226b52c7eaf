"""Deterministic DDIM sampling driven by the analytical denoiser.

Each reverse step asks the denoiser for the posterior mean x0_hat,
reconstructs the implied noise direction, and moves to the next stride
point. Three denoiser backends share the loop: the full N-row scan, the
golden-subset screen, and the weighted-streaming baseline. Selections
can be audited in flight against the certified truncation bounds.

Randomness comes from a counter-based generator; trajectory i of a
batch seeds its own stream at (seed + i), so batches are reproducible
and order-independent.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .bounds import BoundDiagnostics, certify_step
from .dataset import DatasetStore
from .denoiser import DEFAULT_WSS_BATCH, denoise_full, denoise_subset, denoise_weighted_stream
from .schedule import DiffusionSchedule
from .selection import (
    GoldenSelection,
    ScheduleParams,
    build_proxy,
    select_step,
)

MODES = ("golden", "full_scan", "wss")


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = "golden"
    eta: float = 0.0  # 0 is deterministic DDIM; >0 injects scaled noise
    rng_seed: int = 0
    schedule_params: ScheduleParams | None = None  # defaults derived from N
    audit_every: int = 0  # 0 disables in-flight certification
    audit_mode: str = "full_audit"
    wss_batch_size: int = DEFAULT_WSS_BATCH
    track_top: int = 0  # top-mass tracking for full_scan steps
    keep_states: bool = False  # retain x_t at every step
    timing: bool = False  # record wall-clock per step

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eta < 0.0:
            raise ValueError("eta must be non-negative")
        if self.audit_every < 0:
            raise ValueError("audit_every must be >= 0")


@dataclass
class StepRecord:
    """Everything logged about one reverse step."""

    index: int  # position within the stride, 0 = highest noise
    t: int  # timestep id
    g: float
    alpha: float
    sigma_sq: float
    m: int  # candidate budget (n for non-golden modes)
    k: int  # rows actually averaged
    entropy: float
    eff_support: float
    max_weight: float
    top_mass: float
    x0_hat: np.ndarray
    step_time_s: float = 0.0
    x_t: np.ndarray | None = None  # state *entering* the step, if kept
    selection: GoldenSelection | None = None
    diagnostics: BoundDiagnostics | None = None


@dataclass
class Trajectory:
    final: np.ndarray
    records: list[StepRecord]
    seed: int
    mode: str

    @property
    def n_steps(self) -> int:
        return len(self.records)


def _rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def ddim_update(
    x: np.ndarray,
    x0_hat: np.ndarray,
    alpha: float,
    alpha_next: float,
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """One x0-parameterized DDIM move from noise level alpha to alpha_next.

    The current state is decomposed as x = sqrt(alpha) x0_hat +
    sqrt(1 - alpha) eps_hat and re-noised at the target level. eta = 0
    reuses eps_hat exactly; eta > 0 trades part of it for fresh noise.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1) for an update, got {alpha}")
    eps_hat = (x - math.sqrt(alpha) * x0_hat) / math.sqrt(1.0 - alpha)
    if eta > 0.0:
        if rng is None:
            raise ValueError("eta > 0 needs an rng")
        sigma_e = (
            eta
            * math.sqrt((1.0 - alpha_next) / (1.0 - alpha))
            * math.sqrt(max(0.0, 1.0 - alpha / alpha_next))
        )
        keep = math.sqrt(max(0.0, 1.0 - alpha_next - sigma_e**2))
        return (
            math.sqrt(alpha_next) * x0_hat
            + keep * eps_hat
            + sigma_e * rng.standard_normal(x.shape[0])
        )
    return math.sqrt(alpha_next) * x0_hat + math.sqrt(1.0 - alpha_next) * eps_hat


def sample(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    config: SamplerConfig = SamplerConfig(),
    initial_noise: np.ndarray | None = None,
) -> Trajectory:
    """Run one reverse trajectory from pure noise to a sample.

    The last stride step maps straight to x0_hat (the alpha -> 1
    convention at t = 0), so the returned sample is the final posterior
    mean itself.
    """
    params = config.schedule_params or ScheduleParams.from_dataset_size(store.n)
    if config.mode == "golden":
        params.validate_against(store.n, schedule)
        if store.proxy is None:
            build_proxy(store)
    rng = _rng_for(config.rng_seed)
    if initial_noise is None:
        x = rng.standard_normal(store.dim)
    else:
        x = np.array(initial_noise, dtype=np.float64, copy=True)
        if x.shape != (store.dim,):
            raise ValueError(f"initial noise shape {x.shape} != ({store.dim},)")

    records: list[StepRecord] = []
    steps = schedule.ddim_steps
    g_values = schedule.g_values
    for i, t in enumerate(steps):
        t = int(t)
        alpha = schedule.alpha_at(t)
        sigma_sq = schedule.sigma_sq_at(t)
        g = float(g_values[i])
        t_start = time.perf_counter() if config.timing else 0.0

        selection = None
        if config.mode == "golden":
            selection = select_step(store, x, alpha, sigma_sq, params, g, step=t)
            result = denoise_subset(store, x, alpha, sigma_sq, selection.golden)
            m_used, k_used = selection.m, selection.golden.size
        elif config.mode == "full_scan":
            result = denoise_full(store, x, alpha, sigma_sq, track_top=config.track_top)
            m_used = k_used = store.n
        else:
            result = denoise_weighted_stream(
                store, x, alpha, sigma_sq, batch_size=config.wss_batch_size
            )
            m_used = k_used = store.n

        step_time = (time.perf_counter() - t_start) if config.timing else 0.0
        if not np.isfinite(result.x0_hat).all():
            raise RuntimeError(f"non-finite posterior mean at step {i} (t={t})")

        diag = None
        if (
            config.mode == "golden"
            and config.audit_every > 0
            and i % config.audit_every == 0
        ):
            diag = certify_step(
                store, x, alpha, sigma_sq, selection, mode=config.audit_mode
            )

        records.append(
            StepRecord(
                index=i,
                t=t,
                g=g,
                alpha=alpha,
                sigma_sq=sigma_sq,
                m=m_used,
                k=k_used,
                entropy=result.summary.entropy,
                eff_support=result.summary.eff_support,
                max_weight=result.summary.max_weight,
                top_mass=result.summary.top_mass,
                x0_hat=result.x0_hat,
                step_time_s=step_time,
                x_t=x.copy() if config.keep_states else None,
                selection=selection,
                diagnostics=diag,
            )
        )

        if i + 1 < len(steps):
            alpha_next = schedule.alpha_at(int(steps[i + 1]))
            x = ddim_update(x, result.x0_hat, alpha, alpha_next, eta=config.eta, rng=rng)
        else:
            # terminal step: alpha -> 1 exactly, state collapses to x0_hat
            x = result.x0_hat.copy()

    return Trajectory(final=x, records=records, seed=config.rng_seed, mode=config.mode)


def sample_batch(
    store: DatasetStore,
    schedule: DiffusionSchedule,
    config: SamplerConfig = SamplerConfig(),
    count: int = 1,
) -> list[Trajectory]:
    """count independent trajectories; trajectory i uses seed + i."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [
        sample(store, schedule, replace(config, rng_seed=config.rng_seed + i))
        for i in range(count)
    ]


def denoise_trajectory_stats(traj: Trajectory) -> list[tuple]:
    """Per-step concentration rows: (index, t, entropy, eff_support, max_weight, top_mass)."""
    if not traj.records:
        raise ValueError("trajectory has no recorded steps")
    rows = []
    for rec in traj.records:
        if rec.entropy is None or math.isnan(rec.entropy):
            raise ValueError(f"step {rec.index} is missing its weight summary")
        rows.append((rec.index, rec.t, rec.entropy, rec.eff_support, rec.max_weight, rec.top_mass))
    return rows
