"""Training-free diffusion sampling over a dataset store.

The reverse process is driven by an exact empirical-Bayes posterior
mean over the training rows instead of a learned network. A time-aware
two-stage screen (coarse proxy pass, exact refine) restricts each step
to a small golden subset, and the truncation error of that restriction
carries a computable certificate.

Submodules load lazily so the CLI can configure BLAS threading through
the environment before numpy is imported.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # dataset
    "DatasetStore": "dataset",
    "IdxFormatError": "dataset",
    "from_arrays": "dataset",
    "load_idx": "dataset",
    "load_csv": "dataset",
    "make_moons": "dataset",
    "restrict_to_class": "dataset",
    "take": "dataset",
    "compute_radius": "dataset",
    "synth_blob_images": "dataset",
    "write_idx_images": "dataset",
    "write_idx_labels": "dataset",
    "to_idx_bytes": "dataset",
    "write_pgm": "dataset",
    # schedule
    "DiffusionSchedule": "schedule",
    "build_linear_beta": "schedule",
    "g_of_sigma": "schedule",
    "forward_noise": "schedule",
    # selection
    "ScheduleParams": "selection",
    "GoldenSelection": "selection",
    "build_proxy": "selection",
    "coarse_screen": "selection",
    "golden_select": "selection",
    "select_step": "selection",
    "m_of_t": "selection",
    "k_of_t": "selection",
    "merge_partial_top_m": "selection",
    # denoiser
    "SoftmaxAccumulator": "denoiser",
    "merge_accumulators": "denoiser",
    "DenoiseResult": "denoiser",
    "WeightSummary": "denoiser",
    "denoise_full": "denoiser",
    "denoise_subset": "denoiser",
    "denoise_weighted_stream": "denoiser",
    "logit": "denoiser",
    "sq_distances": "denoiser",
    # bounds
    "BoundDiagnostics": "bounds",
    "compute_bound": "bounds",
    "certify_step": "bounds",
    "tail_mass_ratio": "bounds",
    "gap_trajectory": "bounds",
    "logit_gap_from_sq_dists": "bounds",
    # sampler
    "SamplerConfig": "sampler",
    "Trajectory": "sampler",
    "StepRecord": "sampler",
    "sample": "sampler",
    "sample_batch": "sampler",
    "ddim_update": "sampler",
    "denoise_trajectory_stats": "sampler",
    # metrics
    "mse": "metrics",
    "r_squared": "metrics",
    "compare": "metrics",
    "ComparisonReport": "metrics",
    "flops_full_step": "metrics",
    "flops_golden_step": "metrics",
    "flops_for_stride": "metrics",
    "peak_bytes_model": "metrics",
    "PerfReport": "metrics",
    "time_denoise_step": "metrics",
    "benchmark": "metrics",
    # verify
    "CheckResult": "verify",
    "run_verification": "verify",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name: str):
    module_name = _EXPORTS.get(name)
    if module_name is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    module = importlib.import_module(f".{module_name}", __name__)
    value = getattr(module, name)
    globals()[name] = value  # cache for subsequent lookups
    return value


def __dir__():
    return __all__
