"""Exact empirical-Bayes denoiser over a dataset store.

The posterior mean under a discrete data prior is a softmax-weighted
average of training rows, with logits -||x_t/sqrt(alpha) - x_i||^2 /
(2 sigma^2). Everything here evaluates that average in one pass over
the rows using a numerically shifted streaming softmax, so the full
N-row scan, a subset scan, and sharded scans all share one code path.

Distances are computed as explicit differences in float64 (not via the
norm expansion), which keeps logit error at machine level even when
sigma^2 is tiny and logits are huge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# fixed scan block; reduction order (and hence bit pattern) must not
# depend on memory pressure or thread count
_CHUNK_ROWS = 4096

DEFAULT_WSS_BATCH = 1024


def sq_distances(samples: np.ndarray, query: np.ndarray, chunk: int = _CHUNK_ROWS) -> np.ndarray:
    """Exact squared l2 distances from each row to the query, float64."""
    query = np.asarray(query, dtype=np.float64)
    n = samples.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        diff = samples[start : start + chunk] - query  # promotes f32 rows to f64
        out[start : start + chunk] = np.einsum("ij,ij->i", diff, diff)
    return out


def logit(query: np.ndarray, sample: np.ndarray, alpha: float, sigma_sq: float) -> float:
    """Posterior logit of one training row given a noisy query.

    The query lives at noise scale t and is rescaled by 1/sqrt(alpha)
    onto the data manifold before the distance is taken.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if sigma_sq <= 0.0:
        raise ValueError(f"sigma_sq must be positive, got {sigma_sq}")
    query = np.asarray(query, dtype=np.float64)
    sample = np.asarray(sample, dtype=np.float64)
    if query.shape != sample.shape:
        raise ValueError(f"query shape {query.shape} != sample shape {sample.shape}")
    diff = query / math.sqrt(alpha) - sample
    return float(-np.dot(diff, diff) / (2.0 * sigma_sq))


class SoftmaxAccumulator:
    """Streaming softmax state: one pass, any batch split, same answer.

    Tracks the running max logit plus sums of exp-shifted weights, the
    weighted vector sum, and the weighted logit sum. Batches may arrive
    in any order across accumulators and merge associatively; within one
    accumulator the update order is fixed by the caller.
    """

    __slots__ = ("dim", "count", "max_logit", "sum_exp", "vec_sum", "logit_sum")

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.count = 0
        self.max_logit = -math.inf
        self.sum_exp = 0.0  # sum of exp(l - max_logit)
        self.vec_sum = np.zeros(dim, dtype=np.float64)  # sum of exp(l - max) * x
        self.logit_sum = 0.0  # sum of exp(l - max) * l, for entropy

    def update(self, logits: np.ndarray, vectors: np.ndarray) -> None:
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 1 or vectors.shape != (logits.shape[0], self.dim):
            raise ValueError(
                f"expected logits (B,) and vectors (B, {self.dim}), "
                f"got {logits.shape} and {vectors.shape}"
            )
        if logits.shape[0] == 0:
            return
        if not np.isfinite(logits).all():
            raise ValueError("non-finite logit")
        batch_max = float(logits.max())
        if batch_max > self.max_logit:
            if self.count:
                rescale = math.exp(self.max_logit - batch_max)
                self.sum_exp *= rescale
                self.vec_sum *= rescale
                self.logit_sum *= rescale
            self.max_logit = batch_max
        w = np.exp(logits - self.max_logit)
        self.sum_exp += float(w.sum())
        self.vec_sum += w @ np.asarray(vectors, dtype=np.float64)
        self.logit_sum += float(w @ logits)
        self.count += logits.shape[0]

    def posterior_mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("empty accumulator")
        return self.vec_sum / self.sum_exp

    @property
    def log_norm(self) -> float:
        """log sum exp of all logits seen so far."""
        if self.count == 0:
            return -math.inf
        return self.max_logit + math.log(self.sum_exp)

    @property
    def entropy(self) -> float:
        """Shannon entropy of the normalized weights, in nats."""
        if self.count == 0:
            raise ValueError("empty accumulator")
        # H = log Z - E[l]; mean logit uses the same shifted sums
        return (self.max_logit + math.log(self.sum_exp)) - self.logit_sum / self.sum_exp

    @property
    def max_weight(self) -> float:
        if self.count == 0:
            raise ValueError("empty accumulator")
        return math.exp(self.max_logit - self.log_norm)


def merge_accumulators(a: SoftmaxAccumulator, b: SoftmaxAccumulator) -> SoftmaxAccumulator:
    """Combine two partial scans; commutative and associative.

    Equivalent to having fed both scans' batches into one accumulator,
    up to floating-point roundoff in the shared rescaling.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} != {b.dim}")
    out = SoftmaxAccumulator(a.dim)
    hi, lo = (a, b) if a.max_logit >= b.max_logit else (b, a)
    if hi.count == 0:
        return out
    out.max_logit = hi.max_logit
    out.count = hi.count + lo.count
    out.sum_exp = hi.sum_exp
    out.vec_sum = hi.vec_sum.copy()
    out.logit_sum = hi.logit_sum
    if lo.count:
        rescale = math.exp(lo.max_logit - hi.max_logit)
        out.sum_exp += lo.sum_exp * rescale
        out.vec_sum += lo.vec_sum * rescale
        out.logit_sum += lo.logit_sum * rescale
    return out


@dataclass(frozen=True)
class WeightSummary:
    """Concentration statistics of one posterior evaluation."""

    entropy: float
    eff_support: float  # exp(entropy), the perplexity of the weights
    max_weight: float
    log_norm: float
    top_mass: float = float("nan")  # mass of the tracked top block, if any
    k_tracked: int = 0


@dataclass
class DenoiseResult:
    x0_hat: np.ndarray
    summary: WeightSummary
    weights: np.ndarray | None = None  # materialized only for subset scans
    indices: np.ndarray | None = None  # rows the weights refer to


def _logits_over(
    samples: np.ndarray, query_scaled: np.ndarray, sigma_sq: float
) -> np.ndarray:
    return -sq_distances(samples, query_scaled) / (2.0 * sigma_sq)


def _check_noise(alpha: float, sigma_sq: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if sigma_sq <= 0.0 or not math.isfinite(sigma_sq):
        raise ValueError(f"sigma_sq must be positive and finite, got {sigma_sq}")


def denoise_full(
    store,
    query: np.ndarray,
    alpha: float,
    sigma_sq: float,
    track_top: int = 0,
) -> DenoiseResult:
    """Posterior mean over every row of the store (the exact answer).

    Single streaming pass in fixed-size blocks, so the output is
    bit-for-bit reproducible for a given store and query. track_top > 0
    additionally reports the total mass of the top `track_top` weights.
    """
    _check_noise(alpha, sigma_sq)
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    if query_scaled.shape != (store.dim,):
        raise ValueError(f"query shape {query_scaled.shape} != (dim,) = ({store.dim},)")
    acc = SoftmaxAccumulator(store.dim)
    top_logits = np.empty(0, dtype=np.float64)
    for start in range(0, store.n, _CHUNK_ROWS):
        rows = store.samples[start : start + _CHUNK_ROWS]
        logits = _logits_over(rows, query_scaled, sigma_sq)
        acc.update(logits, rows)
        if track_top > 0:
            top_logits = np.sort(np.concatenate([top_logits, logits]))[-track_top:]
    x0_hat = acc.posterior_mean()
    entropy = acc.entropy
    top_mass = float("nan")
    if track_top > 0:
        top_mass = float(np.exp(top_logits - acc.log_norm).sum())
    summary = WeightSummary(
        entropy=entropy,
        eff_support=math.exp(entropy),
        max_weight=acc.max_weight,
        log_norm=acc.log_norm,
        top_mass=top_mass,
        k_tracked=min(track_top, store.n) if track_top > 0 else 0,
    )
    return DenoiseResult(x0_hat=x0_hat, summary=summary)


def denoise_subset(
    store,
    query: np.ndarray,
    alpha: float,
    sigma_sq: float,
    indices,
) -> DenoiseResult:
    """Posterior mean restricted to a row subset, weights renormalized.

    `indices` may be a raw index array or a GoldenSelection (its golden
    set is used). Materializes the subset weights (the bound
    certificates need them).
    """
    _check_noise(alpha, sigma_sq)
    indices = getattr(indices, "golden", indices)
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    if indices.size == 0:
        raise ValueError("subset is empty")
    if indices[0] < 0 or indices[-1] >= store.n:
        raise ValueError("subset index out of range")
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    logits = np.empty(indices.size, dtype=np.float64)
    for start in range(0, indices.size, _CHUNK_ROWS):
        rows = store.samples[indices[start : start + _CHUNK_ROWS]]
        logits[start : start + _CHUNK_ROWS] = _logits_over(rows, query_scaled, sigma_sq)
    shifted = np.exp(logits - logits.max())
    weights = shifted / shifted.sum()
    x0_hat = np.zeros(store.dim, dtype=np.float64)
    for start in range(0, indices.size, _CHUNK_ROWS):
        rows = np.asarray(store.samples[indices[start : start + _CHUNK_ROWS]], dtype=np.float64)
        x0_hat += weights[start : start + _CHUNK_ROWS] @ rows
    pos = weights > 0.0
    entropy = float(-(weights[pos] * np.log(weights[pos])).sum())
    summary = WeightSummary(
        entropy=entropy,
        eff_support=math.exp(entropy),
        max_weight=float(weights.max()),
        log_norm=float(logits.max() + math.log(shifted.sum())),
        k_tracked=int(indices.size),
        top_mass=1.0,  # by construction: all retained mass is in the subset
    )
    return DenoiseResult(x0_hat=x0_hat, summary=summary, weights=weights, indices=indices)


def denoise_weighted_stream(
    store,
    query: np.ndarray,
    alpha: float,
    sigma_sq: float,
    batch_size: int = DEFAULT_WSS_BATCH,
) -> DenoiseResult:
    """Weighted streaming softmax baseline: average of per-batch means.

    Each consecutive batch is softmax-normalized on its own and the
    batch means are averaged with equal weight, regardless of how much
    posterior mass each batch actually holds. Biased whenever the mass
    is unevenly spread across batches; kept as the ablation baseline the
    exact streaming accumulator is compared against.
    """
    _check_noise(alpha, sigma_sq)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    n_batches = math.ceil(store.n / batch_size)
    mean_sum = np.zeros(store.dim, dtype=np.float64)
    entropy_sum = 0.0
    max_w = 0.0
    for start in range(0, store.n, batch_size):
        rows = store.samples[start : start + batch_size]
        acc = SoftmaxAccumulator(store.dim)
        for sub in range(0, rows.shape[0], _CHUNK_ROWS):
            block = rows[sub : sub + _CHUNK_ROWS]
            acc.update(_logits_over(block, query_scaled, sigma_sq), block)
        mean_sum += acc.posterior_mean()
        # implied weight of row i in batch b is softmax_b(i) / n_batches
        entropy_sum += acc.entropy / n_batches + math.log(n_batches) / n_batches
        max_w = max(max_w, acc.max_weight / n_batches)
    entropy = entropy_sum
    summary = WeightSummary(
        entropy=entropy,
        eff_support=math.exp(entropy),
        max_weight=max_w,
        log_norm=float("nan"),  # batch-local normalizers do not compose
    )
    return DenoiseResult(x0_hat=mean_sum / n_batches, summary=summary)
