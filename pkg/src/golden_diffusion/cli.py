"""Command-line front end.

Subcommands: sample (run trajectories and write artifacts), analyze
(concentration sweep plus random-subset sensitivity), bench (wall-clock
and modelled cost per step), verify (randomized self-checks), rerun
(replay a run manifest).

Every run writes a manifest.json capturing the resolved configuration
and a content hash of the dataset, so `rerun --manifest` reproduces the
artifacts; with eta = 0 all CSV and PGM outputs match bitwise (measured
wall-clock fields are only written under --timing / bench). Exit codes:
0 success, 1 runtime failure (including failed verification), 2 usage
error.

Heavy imports happen inside the handlers so --threads can pin BLAS
pools through the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from pathlib import Path

_THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

_SCHEDULE_DEFAULTS = {"n_timesteps": 1000, "beta_min": 1e-4, "beta_max": 0.02}

# CLI mode tokens to sampler modes
_MODE_MAP = {"golden": "golden", "full": "full_scan", "full_scan": "full_scan", "wss": "wss"}


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _size_list(text: str) -> list[int]:
    try:
        sizes = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad size list {text!r}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def _resolve_size(text: str | None, n: int, default: int) -> int:
    """Subset-size flag: a value with a decimal point is a fraction of N,
    a bare integer is an absolute count."""
    if text is None:
        return default
    if any(ch in text for ch in ".eE"):
        frac = float(text)
        if not (0.0 < frac <= 1.0):
            raise ValueError(f"fractional size must be in (0, 1], got {text}")
        return max(1, int(math.floor(frac * n)))
    count = int(text)
    if count < 1:
        raise ValueError(f"size must be >= 1, got {text}")
    return count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="golden-diffusion",
        description="Training-free diffusion sampling over a dataset store "
        "with certified golden-subset acceleration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--dataset",
        default="moons",
        help="moons | csv:PATH | idx:PATH[,labels:PATH]",
    )
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--threads", type=_positive_int, default=None)
    common.add_argument("--class-id", type=int, default=None, help="restrict to one class")
    common.add_argument("--moons-n", type=_positive_int, default=2000)
    common.add_argument("--moons-noise", type=_non_negative_float, default=0.05)
    common.add_argument("--moons-seed", type=int, default=7)

    subset = argparse.ArgumentParser(add_help=False)
    subset.add_argument("--m-min", default=None, help="fraction of N (with '.') or count")
    subset.add_argument("--m-max", default=None)
    subset.add_argument("--k-min", default=None)
    subset.add_argument("--k-max", default=None)

    p_sample = sub.add_parser("sample", parents=[common, subset], help="run trajectories")
    p_sample.add_argument("--mode", choices=("golden", "full", "wss"), default="golden")
    p_sample.add_argument("--steps", type=_positive_int, default=10)
    p_sample.add_argument("--n", type=_positive_int, default=1, help="number of samples")
    p_sample.add_argument("--eta", type=_non_negative_float, default=0.0)
    p_sample.add_argument("--audit-every", type=_non_negative_int, default=0)
    p_sample.add_argument(
        "--audit-mode", choices=("full_audit", "candidate_audit"), default="full_audit"
    )
    p_sample.add_argument("--wss-batch", type=_positive_int, default=1024)
    p_sample.add_argument(
        "--timing", action="store_true", help="record wall-clock per step (breaks bitwise reruns)"
    )

    p_analyze = sub.add_parser(
        "analyze",
        parents=[common, subset],
        help="concentration sweep and random-subset sensitivity vs the exact posterior",
    )
    p_analyze.add_argument(
        "--subset-sizes", type=_size_list, default=[10, 100, 1000, 5000], metavar="K1,K2,..."
    )
    p_analyze.add_argument("--queries", type=_positive_int, default=8, help="probes per step")
    p_analyze.add_argument("--steps", type=_positive_int, default=10)

    p_bench = sub.add_parser("bench", parents=[common, subset], help="per-step cost, both modes")
    p_bench.add_argument("--modes", default="full,golden")
    p_bench.add_argument("--steps", type=_positive_int, default=10)
    p_bench.add_argument("--repeats", type=_positive_int, default=10)
    p_bench.add_argument("--warmup", type=_non_negative_int, default=3)
    p_bench.add_argument("--t-index", type=_non_negative_int, default=None)
    p_bench.add_argument("--wss-batch", type=_positive_int, default=1024)

    p_verify = sub.add_parser("verify", parents=[common], help="randomized self-checks")
    p_verify.add_argument("--instances", type=_positive_int, default=50)
    p_verify.add_argument("--steps", type=_positive_int, default=10)

    p_rerun = sub.add_parser("rerun", help="replay a previous run from its manifest")
    p_rerun.add_argument("--manifest", type=Path, required=True)
    p_rerun.add_argument("--out", type=Path, required=True)
    return parser


# ---------------------------------------------------------------------------
# output helpers


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(out_dir: Path, manifest: dict) -> None:
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset plumbing


def _load_store(args):
    from . import dataset

    spec = args.dataset
    if spec == "moons":
        store = dataset.make_moons(args.moons_n, args.moons_noise, rng_seed=args.moons_seed)
        descr = {
            "spec": "moons",
            "moons": {"n": args.moons_n, "noise": args.moons_noise, "seed": args.moons_seed},
        }
    elif spec.startswith("csv:"):
        store = dataset.load_csv(spec[4:])
        descr = {"spec": spec}
    elif spec.startswith("idx:"):
        rest = spec[4:]
        if ",labels:" in rest:
            images_path, labels_path = rest.split(",labels:", 1)
        else:
            images_path, labels_path = rest, None
        store = dataset.load_idx(images_path, labels_path)
        descr = {"spec": spec}
    else:
        raise ValueError(f"unknown dataset spec {spec!r}")

    if args.class_id is not None:
        store = dataset.restrict_to_class(store, args.class_id)
    descr.update(
        {
            "class_id": args.class_id,
            "fingerprint": store.fingerprint(),
            "n": store.n,
            "dim": store.dim,
            "shape": list(store.shape) if store.shape else None,
        }
    )
    return store, descr


def _resolve_params(args, n: int):
    from .selection import ScheduleParams

    defaults = ScheduleParams.from_dataset_size(n)
    return ScheduleParams(
        m_min=_resolve_size(args.m_min, n, defaults.m_min),
        m_max=_resolve_size(args.m_max, n, defaults.m_max),
        k_min=_resolve_size(args.k_min, n, defaults.k_min),
        k_max=_resolve_size(args.k_max, n, defaults.k_max),
    )


def _build_schedule(n_sample_steps: int):
    from .schedule import build_linear_beta

    return build_linear_beta(n_sample_steps=n_sample_steps, **_SCHEDULE_DEFAULTS)


def _params_dict(params) -> dict:
    return {
        "m_min": params.m_min,
        "m_max": params.m_max,
        "k_min": params.k_min,
        "k_max": params.k_max,
    }


def _base_manifest(command: str, args, descr: dict) -> dict:
    import numpy as np

    from . import __version__

    return {
        "format_version": 1,
        "command": command,
        "tool": {
            "package": "golden-diffusion",
            "version": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "dataset": descr,
        "threads": args.threads,
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args) -> int:
    from .dataset import write_pgm
    from .sampler import SamplerConfig, sample_batch
    from .schedule import schedule_csv_rows

    store, descr = _load_store(args)
    schedule = _build_schedule(args.steps)
    params = _resolve_params(args, store.n)
    config = SamplerConfig(
        mode=_MODE_MAP[args.mode],
        eta=args.eta,
        rng_seed=args.seed,
        schedule_params=params,
        audit_every=args.audit_every,
        audit_mode=args.audit_mode,
        wss_batch_size=args.wss_batch,
        timing=args.timing,
    )
    trajectories = sample_batch(store, schedule, config, count=args.n)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "schedule.csv", ["t", "alpha", "sigma_sq", "g"], schedule_csv_rows(schedule))

    if store.shape is not None:
        samples_dir = out / "samples"
        samples_dir.mkdir(exist_ok=True)
        for i, traj in enumerate(trajectories):
            write_pgm(samples_dir / f"sample_{i:03d}.pgm", traj.final, store.shape)
    else:
        rows = []
        for i, traj in enumerate(trajectories):
            rows.append((i, *[float(v) for v in traj.final]))
        coord_names = ["x", "y"] if store.dim == 2 else [f"c{j}" for j in range(store.dim)]
        write_csv(out / "samples.csv", ["sample", *coord_names], rows)

    for i, traj in enumerate(trajectories):
        stat_rows = [
            (
                rec.index,
                rec.entropy,
                rec.eff_support,
                rec.max_weight,
                rec.m,
                rec.k,
                rec.step_time_s * 1e3,
            )
            for rec in traj.records
        ]
        write_csv(
            out / f"trajectory_{i:03d}.csv",
            ["step", "entropy", "eff_support", "max_weight", "m_t", "k_t", "step_time_ms"],
            stat_rows,
        )
        if config.mode == "golden":
            sel_rows = [
                (
                    rec.index,
                    rec.g,
                    rec.selection.m,
                    rec.selection.golden.size,
                    rec.selection.min_golden_logit,
                    rec.selection.max_logit,
                    rec.selection.selection_gap(),
                )
                for rec in traj.records
            ]
            write_csv(
                out / f"selection_{i:03d}.csv",
                ["step", "g", "m_t", "k_t", "min_logit_in_S", "max_logit", "logit_gap"],
                sel_rows,
            )
            bound_rows = [
                (
                    rec.index,
                    rec.sigma_sq,
                    rec.diagnostics.k_used,
                    rec.diagnostics.logit_gap,
                    rec.diagnostics.bound,
                    rec.diagnostics.ratio_bound,
                    rec.diagnostics.actual_error,
                    rec.diagnostics.recall_ok,
                )
                for rec in traj.records
                if rec.diagnostics is not None
            ]
            if bound_rows:
                write_csv(
                    out / f"bounds_{i:03d}.csv",
                    [
                        "step",
                        "sigma_sq",
                        "k",
                        "delta_k",
                        "bound",
                        "ratio_bound",
                        "actual_error",
                        "recall_ok",
                    ],
                    bound_rows,
                )

    manifest = _base_manifest("sample", args, descr)
    manifest["schedule"] = dict(_SCHEDULE_DEFAULTS, n_sample_steps=args.steps)
    manifest["sampler"] = {
        "mode": args.mode,
        "seed": args.seed,
        "eta": args.eta,
        "n": args.n,
        "audit_every": args.audit_every,
        "audit_mode": args.audit_mode,
        "wss_batch": args.wss_batch,
        "timing": args.timing,
    }
    manifest["subset_params"] = _params_dict(params)
    _write_manifest(out, manifest)
    print(f"wrote {args.n} trajectories to {out}")
    return 0


def _subset_mean_from_logits(store, logits, indices) -> tuple:
    """Renormalized posterior mean over `indices` from precomputed logits.

    The full-set call (indices = arange(N)) runs the identical chunked
    arithmetic, so a size-N "subset" reproduces the full mean bitwise.
    """
    import numpy as np

    sub_logits = logits[indices]
    shifted = np.exp(sub_logits - sub_logits.max())
    weights = shifted / shifted.sum()
    mean = np.zeros(store.dim, dtype=np.float64)
    for start in range(0, indices.size, 4096):
        rows = np.asarray(store.samples[indices[start : start + 4096]], dtype=np.float64)
        mean += weights[start : start + 4096] @ rows
    return mean


def cmd_analyze(args) -> int:
    import numpy as np

    from .denoiser import _logits_over
    from .metrics import mse
    from .sampler import SamplerConfig, sample_batch
    from .schedule import forward_noise

    store, descr = _load_store(args)
    schedule = _build_schedule(args.steps)
    params = _resolve_params(args, store.n)

    sizes = sorted(set(args.subset_sizes))
    clamped = [k for k in sizes if k > store.n]
    if clamped:
        warnings.warn(f"subset sizes {clamped} clamped to dataset size {store.n}")
        sizes = sorted(set(min(k, store.n) for k in sizes))

    # sweep (i): weight concentration across steps, medians over trajectories
    config = SamplerConfig(mode="golden", rng_seed=args.seed, schedule_params=params)
    trajectories = sample_batch(store, schedule, config, count=args.queries)
    entropy_rows = []
    for step_idx in range(schedule.n_sample_steps):
        ent = float(np.median([t.records[step_idx].entropy for t in trajectories]))
        eff = float(np.median([t.records[step_idx].eff_support for t in trajectories]))
        mw = float(np.median([t.records[step_idx].max_weight for t in trajectories]))
        entropy_rows.append((step_idx, ent, eff, mw))

    # sweep (ii): random-subset fidelity against the exact posterior mean
    rng = np.random.Generator(np.random.Philox(args.seed))
    sens_rows = []
    for step_idx, t in enumerate(schedule.ddim_steps):
        t = int(t)
        alpha = schedule.alpha_at(t)
        sigma_sq = schedule.sigma_sq_at(t)
        per_size_sq = {k: [] for k in sizes}
        for _ in range(args.queries):
            row = np.asarray(store.samples[int(rng.integers(0, store.n))], dtype=np.float64)
            query = forward_noise(row, t, rng.standard_normal(store.dim), schedule)
            q_scaled = query / math.sqrt(alpha)
            logits = np.empty(store.n, dtype=np.float64)
            for start in range(0, store.n, 4096):
                logits[start : start + 4096] = _logits_over(
                    store.samples[start : start + 4096], q_scaled, sigma_sq
                )
            full_mean = _subset_mean_from_logits(store, logits, np.arange(store.n))
            for k in sizes:
                if k == store.n:
                    subset = np.arange(store.n)
                else:
                    subset = np.sort(rng.choice(store.n, size=k, replace=False))
                sub_mean = _subset_mean_from_logits(store, logits, subset)
                per_size_sq[k].append(mse(sub_mean, full_mean))
        for k in sizes:
            sens_rows.append((step_idx, sigma_sq, k, float(np.mean(per_size_sq[k]))))

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "entropy.csv", ["step", "entropy", "eff_support", "max_weight"], entropy_rows
    )
    write_csv(out / "sensitivity.csv", ["step", "sigma_sq", "k", "mse"], sens_rows)

    manifest = _base_manifest("analyze", args, descr)
    manifest["schedule"] = dict(_SCHEDULE_DEFAULTS, n_sample_steps=args.steps)
    manifest["analyze"] = {
        "subset_sizes": sizes,
        "queries": args.queries,
        "seed": args.seed,
        "steps": args.steps,
    }
    manifest["subset_params"] = _params_dict(params)
    _write_manifest(out, manifest)

    high_noise = [r for r in sens_rows if r[0] == 0]
    for _, _, k, err in high_noise:
        print(f"step 0 (highest noise): k={k:>6d}  mse={err:.6e}")
    return 0


def cmd_bench(args) -> int:
    from .metrics import benchmark, flops_for_stride

    store, descr = _load_store(args)
    schedule = _build_schedule(args.steps)
    params = _resolve_params(args, store.n)
    params.validate_against(store.n, schedule)
    modes = []
    for tok in args.modes.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok not in _MODE_MAP:
            raise ValueError(f"unknown mode {tok!r}")
        modes.append(_MODE_MAP[tok])
    if args.repeats == 1:
        warnings.warn("repeats=1 gives an unstable timing estimate")
    reports = benchmark(
        store,
        schedule,
        params,
        modes=tuple(modes),
        t=args.t_index,
        repeats=args.repeats,
        warmup=args.warmup,
        rng_seed=args.seed,
    )

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        (
            r.mode,
            r.n,
            r.dim,
            r.proxy_dim,
            r.m_t,
            r.k_t,
            r.step_time_s * 1e3,
            r.flops_model,
            r.peak_bytes,
        )
        for r in reports
    ]
    write_csv(
        out / "bench.csv",
        ["mode", "N", "D", "d", "m_t", "k_t", "step_time_ms", "flops_model", "peak_bytes"],
        rows,
    )

    proxy_dim = store.proxy.shape[1] if store.proxy is not None else store.dim
    flops = flops_for_stride(schedule, params, store.n, store.dim, proxy_dim)
    summary = {r.mode: r.step_time_s for r in reports}
    manifest = _base_manifest("bench", args, descr)
    manifest["schedule"] = dict(_SCHEDULE_DEFAULTS, n_sample_steps=args.steps)
    manifest["bench"] = {
        "modes": list(modes),
        "repeats": args.repeats,
        "warmup": args.warmup,
        "t_index": args.t_index,
        "seed": args.seed,
        "steps": args.steps,
        "flop_ratio_stride": flops["ratio"],
    }
    manifest["subset_params"] = _params_dict(params)
    _write_manifest(out, manifest)

    for r in reports:
        print(
            f"{r.mode:>10s}: median {r.step_time_s * 1e3:9.3f} ms/step, "
            f"model {r.flops_model:.3e} MACs, peak {r.peak_bytes / 1e6:.1f} MB"
        )
    if "full_scan" in summary and "golden" in summary and summary["golden"] > 0:
        print(f"measured speedup: {summary['full_scan'] / summary['golden']:.2f}x")
    print(f"modelled stride flop ratio: {flops['ratio']:.2f}x")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_verification

    store, descr = _load_store(args)
    schedule = _build_schedule(args.steps)
    results = run_verification(
        store=store, schedule=schedule, rng_seed=args.seed, n_instances=args.instances
    )
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    payload = [
        {
            "name": r.name,
            "passed": r.passed,
            "n_instances": r.n_instances,
            "worst": r.worst,
            "detail": r.detail,
            "replay": r.replay,
        }
        for r in results
    ]
    with open(out / "verify_report.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    manifest = _base_manifest("verify", args, descr)
    manifest["verify"] = {"instances": args.instances, "seed": args.seed, "steps": args.steps}
    _write_manifest(out, manifest)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def _manifest_to_argv(manifest: dict, out: Path) -> list[str]:
    command = manifest["command"]
    ds = manifest["dataset"]
    argv = [command, "--dataset", ds["spec"], "--out", str(out)]
    if ds.get("class_id") is not None:
        argv += ["--class-id", str(ds["class_id"])]
    if "moons" in ds:
        argv += [
            "--moons-n",
            str(ds["moons"]["n"]),
            "--moons-noise",
            repr(ds["moons"]["noise"]),
            "--moons-seed",
            str(ds["moons"]["seed"]),
        ]
    if manifest.get("threads") is not None:
        argv += ["--threads", str(manifest["threads"])]
    if "subset_params" in manifest and command != "verify":
        sp = manifest["subset_params"]
        argv += [
            "--m-min",
            str(sp["m_min"]),
            "--m-max",
            str(sp["m_max"]),
            "--k-min",
            str(sp["k_min"]),
            "--k-max",
            str(sp["k_max"]),
        ]
    if command == "sample":
        sam = manifest["sampler"]
        argv += [
            "--mode",
            sam["mode"],
            "--seed",
            str(sam["seed"]),
            "--eta",
            repr(sam["eta"]),
            "--n",
            str(sam["n"]),
            "--audit-every",
            str(sam["audit_every"]),
            "--audit-mode",
            sam["audit_mode"],
            "--wss-batch",
            str(sam["wss_batch"]),
            "--steps",
            str(manifest["schedule"]["n_sample_steps"]),
        ]
        if sam.get("timing"):
            argv += ["--timing"]
    elif command == "analyze":
        an = manifest["analyze"]
        argv += [
            "--subset-sizes",
            ",".join(str(s) for s in an["subset_sizes"]),
            "--queries",
            str(an["queries"]),
            "--seed",
            str(an["seed"]),
            "--steps",
            str(an["steps"]),
        ]
    elif command == "bench":
        be = manifest["bench"]
        argv += [
            "--modes",
            ",".join(be["modes"]),
            "--repeats",
            str(be["repeats"]),
            "--warmup",
            str(be["warmup"]),
            "--seed",
            str(be["seed"]),
            "--steps",
            str(be["steps"]),
        ]
        if be.get("t_index") is not None:
            argv += ["--t-index", str(be["t_index"])]
    elif command == "verify":
        ve = manifest["verify"]
        argv += [
            "--instances",
            str(ve["instances"]),
            "--seed",
            str(ve["seed"]),
            "--steps",
            str(ve["steps"]),
        ]
    else:
        raise ValueError(f"manifest has unknown command {command!r}")
    return argv


def cmd_rerun(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    argv = _manifest_to_argv(manifest, args.out)
    code = main(argv)
    if code != 0:
        return code
    # a rerun must replay the original inputs; a changed dataset is an error
    with open(args.out / "manifest.json") as fh:
        new_manifest = json.load(fh)
    old_fp = manifest["dataset"]["fingerprint"]
    new_fp = new_manifest["dataset"]["fingerprint"]
    if old_fp != new_fp:
        print(
            f"error: dataset fingerprint changed ({old_fp[:12]} -> {new_fp[:12]}); "
            "inputs differ from the original run",
            file=sys.stderr,
        )
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        for var in _THREAD_ENV_VARS:
            os.environ[var] = str(args.threads)
        if "numpy" in sys.modules:
            print(
                "warning: numpy already loaded; thread limit applies only to "
                "libraries that honor it at call time",
                file=sys.stderr,
            )
    handlers = {
        "sample": cmd_sample,
        "analyze": cmd_analyze,
        "bench": cmd_bench,
        "verify": cmd_verify,
        "rerun": cmd_rerun,
    }
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
