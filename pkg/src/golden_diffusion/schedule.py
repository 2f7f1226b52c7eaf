"""DDPM noise schedule, DDIM stride, and the normalized noise level g.

All noise bookkeeping lives here: cumulative signal levels alpha_t, the
induced squared noise scale sigma_t^2 = (1 - alpha_t) / alpha_t, the
strided subset of timesteps the sampler visits, and the map g that
normalizes log sigma onto [0, 1] across that stride. Subset schedules
consume g, so they are invariant to re-parameterizing the timestep axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Discrete schedule over T timesteps plus a sampling stride.

    alphas[t] is the cumulative product of (1 - beta) up to t, strictly
    decreasing in t. ddim_steps holds the visited timesteps in sampling
    order (highest noise first, last entry is the lowest-noise step).
    """

    betas: np.ndarray
    alphas: np.ndarray
    sigmas_sq: np.ndarray
    ddim_steps: np.ndarray
    sigma_lo: float
    sigma_hi: float

    @property
    def n_timesteps(self) -> int:
        return self.alphas.shape[0]

    @property
    def n_sample_steps(self) -> int:
        return self.ddim_steps.shape[0]

    @property
    def degenerate(self) -> bool:
        # single-step stride: g has no range to normalize over
        return self.sigma_lo == self.sigma_hi

    def alpha_at(self, t: int) -> float:
        return float(self.alphas[t])

    def sigma_sq_at(self, t: int) -> float:
        return float(self.sigmas_sq[t])

    @property
    def g_values(self) -> np.ndarray:
        return np.array([g_of_sigma(self, math.sqrt(self.sigmas_sq[t])) for t in self.ddim_steps])


def build_linear_beta(
    n_timesteps: int = 1000,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    n_sample_steps: int = 10,
) -> DiffusionSchedule:
    """Linear-beta schedule with a uniform DDIM stride.

    The stride endpoints are pinned to t = T-1 and t = 0 so the full
    noise range is always covered; interior steps are evenly spaced and
    rounded to integer timesteps.
    """
    if n_timesteps < 1:
        raise ValueError("n_timesteps must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    if not (1 <= n_sample_steps <= n_timesteps):
        raise ValueError(
            f"n_sample_steps must be in [1, {n_timesteps}], got {n_sample_steps}"
        )
    betas = np.linspace(beta_min, beta_max, n_timesteps)
    alphas = np.cumprod(1.0 - betas)
    sigmas_sq = (1.0 - alphas) / alphas
    if n_sample_steps == 1:
        ddim = np.array([n_timesteps - 1], dtype=np.int64)
    else:
        ddim = np.unique(
            np.rint(np.linspace(n_timesteps - 1, 0, n_sample_steps)).astype(np.int64)
        )[::-1]
    sigmas = np.sqrt(sigmas_sq[ddim])
    return DiffusionSchedule(
        betas=betas,
        alphas=alphas,
        sigmas_sq=sigmas_sq,
        ddim_steps=np.ascontiguousarray(ddim),
        sigma_lo=float(sigmas[-1]),
        sigma_hi=float(sigmas[0]),
    )


def g_of_sigma(schedule: DiffusionSchedule, sigma: float) -> float:
    """Normalized noise level: log-sigma position within the stride, clamped.

    g(sigma_hi) = 1 and g(sigma_lo) = 0 exactly; values off the stride
    interpolate in log space and clamp to [0, 1]. A one-step schedule is
    degenerate and reports 0 everywhere.
    """
    if sigma <= 0.0 or not math.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    if schedule.degenerate:
        return 0.0
    lo = math.log(schedule.sigma_lo)
    hi = math.log(schedule.sigma_hi)
    raw = (math.log(sigma) - lo) / (hi - lo)
    return min(1.0, max(0.0, raw))


def forward_noise(
    x0: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule
) -> np.ndarray:
    """Closed-form forward marginal: sqrt(alpha) x0 + sqrt(1 - alpha) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    if not (0 <= t < schedule.n_timesteps):
        raise ValueError(f"t={t} outside [0, {schedule.n_timesteps})")
    alpha = schedule.alpha_at(t)
    return math.sqrt(alpha) * x0 + math.sqrt(1.0 - alpha) * eps


def schedule_csv_rows(schedule: DiffusionSchedule) -> list[tuple]:
    """Rows (t, alpha, sigma_sq, g) for every timestep, t ascending."""
    rows = []
    for t in range(schedule.n_timesteps):
        sig_sq = schedule.sigmas_sq[t]
        rows.append(
            (t, float(schedule.alphas[t]), float(sig_sq), g_of_sigma(schedule, math.sqrt(sig_sq)))
        )
    return rows
