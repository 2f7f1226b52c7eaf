"""Time-aware golden-subset selection.

Two-stage screen per denoising step: a cheap distance pass over a
downsampled proxy picks m_t candidates, then exact posterior logits over
those candidates keep the k_t best rows (the golden set). The candidate
budget m_t shrinks and the kept size k_t grows as noise falls, tracking
how the posterior itself sharpens.

All ties break toward the lowest dataset index so selection is a pure
function of its inputs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import DatasetStore
from .denoiser import sq_distances
from .schedule import DiffusionSchedule, g_of_sigma

# proxy pooling: block-mean over factor x factor patches per spatial axis
DEFAULT_POOL_FACTOR = 4
# at or below this ambient dimension the proxy is the identity
IDENTITY_MAX_DIM = 64


@dataclass(frozen=True)
class ScheduleParams:
    """Endpoints for the counter-monotonic subset-size schedules.

    m interpolates from m_min (high noise) to m_max (low noise); k runs
    the other way, from k_max down to k_min. Endpoints are inclusive and
    floor-rounded at interior noise levels.
    """

    m_min: int
    m_max: int
    k_min: int
    k_max: int

    def __post_init__(self):
        if not (1 <= self.m_min <= self.m_max):
            raise ValueError(f"need 1 <= m_min <= m_max, got {self.m_min}, {self.m_max}")
        if not (1 <= self.k_min <= self.k_max):
            raise ValueError(f"need 1 <= k_min <= k_max, got {self.k_min}, {self.k_max}")

    @classmethod
    def from_dataset_size(cls, n: int) -> "ScheduleParams":
        """Defaults: m_min = k_max = N/10, m_max = N/4, k_min = N/20."""
        if n < 20:
            # floors collapse to zero below this; use the whole store
            return cls(m_min=n, m_max=n, k_min=max(1, n // 2), k_max=n)
        return cls(m_min=n // 10, m_max=n // 4, k_min=n // 20, k_max=n // 10)

    def validate_against(self, n: int, schedule: DiffusionSchedule | None = None) -> None:
        """Check budgets fit the store and k_t <= m_t across the stride."""
        if self.m_max > n:
            raise ValueError(f"m_max={self.m_max} exceeds dataset size {n}")
        if self.k_max > n:
            raise ValueError(f"k_max={self.k_max} exceeds dataset size {n}")
        gs = [0.0, 1.0] if schedule is None else [float(g) for g in schedule.g_values]
        for g in set(gs) | {0.0, 1.0}:
            m, k = m_of_t(self, g), k_of_t(self, g)
            if k > m:
                raise ValueError(
                    f"k_t={k} exceeds m_t={m} at g={g}; shrink k or grow m endpoints"
                )


def m_of_t(params: ScheduleParams, g: float) -> int:
    """Candidate budget at noise level g: large early, small late."""
    if not (0.0 <= g <= 1.0):
        raise ValueError(f"g must lie in [0, 1], got {g}")
    return int(math.floor(params.m_min + (params.m_max - params.m_min) * (1.0 - g)))


def k_of_t(params: ScheduleParams, g: float) -> int:
    """Golden-set size at noise level g: small early, large late."""
    if not (0.0 <= g <= 1.0):
        raise ValueError(f"g must lie in [0, 1], got {g}")
    return int(math.floor(params.k_min + (params.k_max - params.k_min) * g))


# ---------------------------------------------------------------------------
# proxy construction


def _pool_rows(rows: np.ndarray, shape: tuple[int, int, int], factor: int) -> np.ndarray:
    """Block-mean pool flattened image rows; trailing blocks may be short."""
    n = rows.shape[0]
    c, h, w = shape
    imgs = np.asarray(rows, dtype=np.float64).reshape(n, c, h, w)
    h_starts = np.arange(0, h, factor)
    w_starts = np.arange(0, w, factor)
    pooled = np.add.reduceat(np.add.reduceat(imgs, h_starts, axis=2), w_starts, axis=3)
    h_sizes = np.minimum(h_starts + factor, h) - h_starts
    w_sizes = np.minimum(w_starts + factor, w) - w_starts
    pooled /= h_sizes[:, None] * w_sizes[None, :]
    return np.ascontiguousarray(pooled.reshape(n, -1))


def build_proxy(
    store: DatasetStore,
    factor: int = DEFAULT_POOL_FACTOR,
    identity_max_dim: int = IDENTITY_MAX_DIM,
) -> np.ndarray:
    """Build (and cache on the store) the coarse-screen projection.

    Low-dimensional data passes through untouched; image data is
    block-mean pooled by `factor` along each spatial axis. Uneven
    factors fall back to a truncated trailing block, noted in
    store.proxy_note.
    """
    if factor < 1:
        raise ValueError("pool factor must be >= 1")
    if store.dim <= identity_max_dim:
        proxy = np.asarray(store.samples, dtype=np.float64)
        note = "identity"
        factor = 1
    elif store.shape is not None:
        chunks = []
        for start in range(0, store.n, 8192):
            chunks.append(_pool_rows(store.samples[start : start + 8192], store.shape, factor))
        proxy = np.concatenate(chunks, axis=0) if len(chunks) > 1 else chunks[0]
        _, h, w = store.shape
        note = f"pool{factor}"
        if h % factor or w % factor:
            note += "-truncated"
    else:
        raise ValueError(
            f"no proxy rule for flat {store.dim}-dimensional data; "
            "provide an image shape or keep dim <= identity threshold"
        )
    proxy.setflags(write=False)
    store.proxy = proxy
    store.proxy_factor = factor
    store.proxy_note = note
    return proxy


def project_query(store: DatasetStore, vec: np.ndarray) -> np.ndarray:
    """Apply the store's cached proxy map to one query vector."""
    if store.proxy is None:
        raise ValueError("proxy cache not built; call build_proxy first")
    vec = np.asarray(vec, dtype=np.float64)
    if store.proxy_note == "identity":
        return vec
    return _pool_rows(vec[None, :], store.shape, store.proxy_factor)[0]


# ---------------------------------------------------------------------------
# top-m / top-k primitives (deterministic under ties)


def smallest_m(values: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m smallest values; ties keep the lowest index.

    Returned indices are sorted ascending.
    """
    n = values.shape[0]
    if m >= n:
        return np.arange(n, dtype=np.int64)
    cut = np.partition(values, m - 1)[m - 1]
    below = np.flatnonzero(values < cut)
    need = m - below.size
    at_cut = np.flatnonzero(values == cut)[:need]
    return np.sort(np.concatenate([below, at_cut])).astype(np.int64)


def largest_k(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values; ties keep the lowest index."""
    return smallest_m(-np.asarray(values), k)


def merge_partial_top_m(
    idx_a: np.ndarray,
    val_a: np.ndarray,
    idx_b: np.ndarray,
    val_b: np.ndarray,
    m: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Merge two partial smallest-m results into one.

    Associative and commutative, so shard-level screens can combine in
    any order and still match a single global screen. Inputs pair global
    indices with their values; output is ascending by index.
    """
    idx = np.concatenate([np.asarray(idx_a, dtype=np.int64), np.asarray(idx_b, dtype=np.int64)])
    val = np.concatenate([np.asarray(val_a, dtype=np.float64), np.asarray(val_b, dtype=np.float64)])
    order = np.lexsort((idx, val))[: min(m, idx.size)]
    keep = np.argsort(idx[order])
    return idx[order][keep], val[order][keep]


# ---------------------------------------------------------------------------
# the two-stage screen


@dataclass
class GoldenSelection:
    """Result of one selection step: candidates, golden set, diagnostics."""

    step: int
    m: int
    k: int
    candidates: np.ndarray  # (m,) dataset indices, ascending
    golden: np.ndarray  # (k,) dataset indices, ascending
    candidate_logits: np.ndarray  # exact logits aligned with candidates
    proxy_dists: np.ndarray | None = None
    clamped: bool = False

    @property
    def max_logit(self) -> float:
        return float(self.candidate_logits.max())

    @property
    def min_golden_logit(self) -> float:
        pos = np.searchsorted(self.candidates, self.golden)
        return float(self.candidate_logits[pos].min())

    def selection_gap(self) -> float:
        """Top logit minus the best rejected candidate logit (nan if none)."""
        if self.k >= self.m:
            return float("nan")
        pos = np.searchsorted(self.candidates, self.golden)
        rejected = np.delete(self.candidate_logits, pos)
        return self.max_logit - float(rejected.max())


def _proxy_sq_dists(store: DatasetStore, query_scaled: np.ndarray) -> np.ndarray:
    return sq_distances(store.proxy, project_query(store, query_scaled))


def coarse_screen(
    store: DatasetStore, query: np.ndarray, alpha: float, m: int
) -> np.ndarray:
    """Stage one: m nearest rows under the proxy distance.

    The query is rescaled by 1/sqrt(alpha) before projection, matching
    the exact-logit convention, so both stages rank against the same
    target point.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > store.n:
        warnings.warn(f"candidate budget m={m} clamped to dataset size {store.n}")
        m = store.n
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    return smallest_m(_proxy_sq_dists(store, query_scaled), m)


def golden_select(
    store: DatasetStore,
    query: np.ndarray,
    alpha: float,
    sigma_sq: float,
    candidates: np.ndarray,
    k: int,
    step: int = -1,
    proxy_dists: np.ndarray | None = None,
) -> GoldenSelection:
    """Stage two: exact logits over the candidates, keep the k best."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ValueError("candidate set is empty")
    clamped = False
    if k > candidates.size:
        warnings.warn(f"k={k} clamped to candidate count {candidates.size}")
        k = candidates.size
        clamped = True
    if k < 1:
        raise ValueError("k must be >= 1")
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    logits = np.empty(candidates.size, dtype=np.float64)
    scale = 2.0 * sigma_sq
    for start in range(0, candidates.size, 4096):
        rows = store.samples[candidates[start : start + 4096]]
        logits[start : start + 4096] = -sq_distances(rows, query_scaled) / scale
    golden = candidates[largest_k(logits, k)]
    return GoldenSelection(
        step=step,
        m=int(candidates.size),
        k=int(k),
        candidates=candidates,
        golden=np.sort(golden),
        candidate_logits=logits,
        proxy_dists=proxy_dists,
        clamped=clamped,
    )


def select_step(
    store: DatasetStore,
    query: np.ndarray,
    alpha: float,
    sigma_sq: float,
    params: ScheduleParams,
    g: float,
    step: int = -1,
) -> GoldenSelection:
    """Full per-step pipeline: sizes from g, coarse screen, exact refine."""
    m = min(m_of_t(params, g), store.n)
    k = min(k_of_t(params, g), m)
    query_scaled = np.asarray(query, dtype=np.float64) / math.sqrt(alpha)
    proxy_d = _proxy_sq_dists(store, query_scaled)
    candidates = smallest_m(proxy_d, m)
    return golden_select(
        store,
        query,
        alpha,
        sigma_sq,
        candidates,
        k,
        step=step,
        proxy_dists=proxy_d[candidates],
    )
