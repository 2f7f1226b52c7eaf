"""Training-set container: loading, normalization, and class views.

The denoiser treats the training set as a fixed matrix of flattened
samples in [-1, 1]. Everything downstream (selection, bounds, sampling)
works on row indices into one of these stores, so the store also carries
the per-row norms and the data radius used by the error bounds.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

# byte -> [-1, 1]: 0 maps to -1.0 and 255 to +1.0, both exactly
_PIXEL_SCALE = 127.5


class IdxFormatError(ValueError):
    """Raised for a bad magic number or malformed IDX header."""


def _row_norms(samples: np.ndarray) -> np.ndarray:
    # float64 regardless of storage dtype; this exact formula is also
    # what compute_radius uses, so cached and recomputed radii match.
    out = np.empty(samples.shape[0], dtype=np.float64)
    for start in range(0, samples.shape[0], 8192):
        chunk = np.asarray(samples[start : start + 8192], dtype=np.float64)
        out[start : start + 8192] = np.sqrt(np.einsum("ij,ij->i", chunk, chunk))
    return out


@dataclass
class DatasetStore:
    """Immutable matrix of flattened samples plus derived metadata.

    samples: (N, D) array, rows are individual samples.
    norms:   (N,) float64 l2 norms of the rows.
    radius:  max row norm, the R in the truncation bounds.
    labels:  optional (N,) integer class ids.
    shape:   (channels, height, width) when the rows are flattened images.
    source_indices: row indices into the parent store for class views.
    proxy / proxy_dim / proxy_note: coarse-screen projection cache,
        filled in lazily by selection.build_proxy.
    """

    samples: np.ndarray
    norms: np.ndarray
    radius: float
    labels: np.ndarray | None = None
    shape: tuple[int, int, int] | None = None
    source_indices: np.ndarray | None = None
    proxy: np.ndarray | None = field(default=None, repr=False)
    proxy_factor: int = 0
    proxy_note: str = ""

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def fingerprint(self) -> str:
        """Content hash of samples (and labels) for run manifests."""
        h = hashlib.sha256()
        h.update(str(self.samples.shape).encode())
        h.update(str(self.samples.dtype).encode())
        h.update(np.ascontiguousarray(self.samples).tobytes())
        if self.labels is not None:
            h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _make_store(
    samples: np.ndarray,
    labels: np.ndarray | None = None,
    shape: tuple[int, int, int] | None = None,
    source_indices: np.ndarray | None = None,
) -> DatasetStore:
    if samples.ndim != 2:
        raise ValueError(f"samples must be 2-D, got shape {samples.shape}")
    if samples.shape[0] < 1 or samples.shape[1] < 1:
        raise ValueError("store needs at least one sample and one dimension")
    if not np.isfinite(samples).all():
        raise ValueError("samples contain non-finite values")
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.shape != (samples.shape[0],):
            raise ValueError(
                f"label count {labels.shape} does not match sample count {samples.shape[0]}"
            )
        labels.setflags(write=False)
    samples.setflags(write=False)
    norms = _row_norms(samples)
    norms.setflags(write=False)
    return DatasetStore(
        samples=samples,
        norms=norms,
        radius=float(norms.max()),
        labels=labels,
        shape=shape,
        source_indices=source_indices,
    )


def from_arrays(
    samples: np.ndarray,
    labels: np.ndarray | None = None,
    shape: tuple[int, int, int] | None = None,
) -> DatasetStore:
    """Build a store from caller-owned arrays (copies them)."""
    samples = np.array(samples, dtype=np.float64, copy=True, order="C")
    return _make_store(samples, labels=labels, shape=shape)


def compute_radius(store: DatasetStore) -> float:
    """Recompute max row norm from scratch (must equal the cached value)."""
    return float(_row_norms(store.samples).max())


def take(store: DatasetStore, indices: np.ndarray) -> DatasetStore:
    """Row-subset view of a store.

    Rows are gathered into a fresh contiguous array: numpy cannot alias
    scattered rows, so "view" here means shared provenance (recorded in
    source_indices), not shared memory.
    """
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if indices.ndim != 1 or indices.size == 0:
        raise ValueError("indices must be a non-empty 1-D array")
    if indices.min() < 0 or indices.max() >= store.n:
        raise ValueError("index out of range")
    parent = store.source_indices if store.source_indices is not None else np.arange(store.n)
    sub = _make_store(
        np.ascontiguousarray(store.samples[indices]),
        labels=None if store.labels is None else store.labels[indices],
        shape=store.shape,
        source_indices=np.ascontiguousarray(parent[indices]),
    )
    if store.proxy is not None:
        # per-row projections restrict by row, so subsetting the cache is
        # the same as recomputing it over the subset
        sub.proxy = np.ascontiguousarray(store.proxy[indices])
        sub.proxy.setflags(write=False)
        sub.proxy_factor = store.proxy_factor
        sub.proxy_note = store.proxy_note
    return sub


def restrict_to_class(store: DatasetStore, label: int) -> DatasetStore:
    """Class view: rows whose label equals the requested class id."""
    if store.labels is None:
        raise ValueError("store has no labels; cannot restrict by class")
    mask = np.flatnonzero(store.labels == int(label))
    if mask.size == 0:
        raise ValueError(f"label {label} not present in store")
    return take(store, mask)


# ---------------------------------------------------------------------------
# two-moons synthetic data


def make_moons(n: int, noise_std: float = 0.0, rng_seed: int = 0) -> DatasetStore:
    """Two interleaving half circles in 2-D with optional gaussian jitter.

    Outer moon: (cos t, sin t); inner moon: (1 - cos t, 0.5 - sin t),
    t uniform on [0, pi]. Labels are the moon id (0 outer, 1 inner).
    """
    if n < 2:
        raise ValueError("need at least 2 samples for two moons")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    pts = np.empty((n, 2), dtype=np.float64)
    pts[:n_out, 0] = np.cos(t_out)
    pts[:n_out, 1] = np.sin(t_out)
    pts[n_out:, 0] = 1.0 - np.cos(t_in)
    pts[n_out:, 1] = 0.5 - np.sin(t_in)
    if noise_std > 0:
        rng = np.random.Generator(np.random.Philox(rng_seed))
        pts += rng.normal(0.0, noise_std, size=pts.shape)
    labels = np.concatenate([np.zeros(n_out, dtype=np.int64), np.ones(n_in, dtype=np.int64)])
    return _make_store(pts, labels=labels)


# ---------------------------------------------------------------------------
# CSV ingestion (2-D point clouds)


def load_csv(path) -> DatasetStore:
    """Read `x,y[,label]` rows; a non-numeric first row is treated as a header."""
    import csv

    xs: list[tuple[float, float]] = []
    labels: list[int] = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    start = 0
    try:
        float(rows[0][0])
    except (ValueError, IndexError):
        start = 1
    expect_label: bool | None = None
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row:
            continue
        if len(row) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 2 or 3 columns, got {len(row)}")
        has_label = len(row) == 3
        if expect_label is None:
            expect_label = has_label
        elif expect_label != has_label:
            raise ValueError(f"{path}:{lineno}: inconsistent column count")
        xs.append((float(row[0]), float(row[1])))
        if has_label:
            labels.append(int(row[2]))
    if not xs:
        raise ValueError(f"{path}: no data rows")
    samples = np.array(xs, dtype=np.float64)
    return _make_store(samples, labels=np.array(labels, dtype=np.int64) if labels else None)


# ---------------------------------------------------------------------------
# IDX binary format (big-endian, images magic 2051 / labels magic 2049)


def _read_exact(data: bytes, offset: int, count: int, path, what: str) -> bytes:
    if offset + count > len(data):
        raise OSError(f"{path}: truncated IDX file while reading {what}")
    return data[offset : offset + count]


def load_idx(images_path, labels_path=None, dtype=np.float32) -> DatasetStore:
    """Load an IDX image file (optionally with an IDX label file).

    Pixels map affinely from [0, 255] to [-1, 1]. Rows are flattened in
    row-major order; the original (1, H, W) shape is kept on the store.
    """
    with open(images_path, "rb") as fh:
        data = fh.read()
    magic, count, height, width = struct.unpack(
        ">iiii", _read_exact(data, 0, 16, images_path, "header")
    )
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad image magic {magic}, expected {IDX_IMAGE_MAGIC}")
    if count < 1 or height < 1 or width < 1:
        raise IdxFormatError(f"{images_path}: bad dimensions {count}x{height}x{width}")
    payload = _read_exact(data, 16, count * height * width, images_path, "pixel data")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(count, height * width)
    samples = np.ascontiguousarray(raw.astype(dtype) / _PIXEL_SCALE - 1.0, dtype=dtype)

    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            ldata = fh.read()
        lmagic, lcount = struct.unpack(">ii", _read_exact(ldata, 0, 8, labels_path, "header"))
        if lmagic != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad label magic {lmagic}, expected {IDX_LABEL_MAGIC}"
            )
        if lcount != count:
            raise ValueError(
                f"label count {lcount} does not match image count {count}"
            )
        labels = np.frombuffer(
            _read_exact(ldata, 8, lcount, labels_path, "label data"), dtype=np.uint8
        ).astype(np.int64)
    return _make_store(samples, labels=labels, shape=(1, height, width))


def to_idx_bytes(store: DatasetStore) -> tuple[bytes, bytes | None]:
    """Serialize a store back to IDX image (and label) byte strings.

    Inverse of load_idx up to the [0,255] -> [-1,1] affine map; a store
    loaded from IDX round-trips to the original bytes exactly.
    """
    if store.shape is None:
        raise ValueError("store has no image shape; cannot write IDX")
    _, height, width = store.shape
    pixels = np.clip(
        np.rint((np.asarray(store.samples, dtype=np.float64) + 1.0) * _PIXEL_SCALE),
        0,
        255,
    ).astype(np.uint8)
    header = struct.pack(">iiii", IDX_IMAGE_MAGIC, store.n, height, width)
    image_bytes = header + pixels.tobytes()
    label_bytes = None
    if store.labels is not None:
        label_bytes = struct.pack(">ii", IDX_LABEL_MAGIC, store.n) + store.labels.astype(
            np.uint8
        ).tobytes()
    return image_bytes, label_bytes


def write_idx_images(path, images_u8: np.ndarray) -> None:
    """Write a (N, H, W) uint8 array as an IDX image file."""
    images_u8 = np.ascontiguousarray(images_u8, dtype=np.uint8)
    if images_u8.ndim != 3:
        raise ValueError("expected (N, H, W) uint8 images")
    n, height, width = images_u8.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, n, height, width))
        fh.write(images_u8.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError("expected (N,) labels")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def synth_blob_images(
    n: int,
    height: int = 28,
    width: int = 28,
    n_classes: int = 10,
    rng_seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic image corpus: one gaussian bump per image, class = bump site.

    Stands in for handwritten-digit data when no corpus is available:
    same shape, same uint8 range, and enough per-class structure that
    nearest-neighbour posteriors behave like they do on real images.
    """
    if n < 1:
        raise ValueError("need at least one image")
    rng = np.random.Generator(np.random.Philox(rng_seed))
    # class centers on a ring so classes are geometrically separated
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    cy = height / 2.0 + (height / 4.0) * np.sin(angles)
    cx = width / 2.0 + (width / 4.0) * np.cos(angles)
    labels = rng.integers(0, n_classes, size=n).astype(np.uint8)
    yy = np.arange(height, dtype=np.float64)[:, None]
    xx = np.arange(width, dtype=np.float64)[None, :]
    images = np.empty((n, height, width), dtype=np.uint8)
    chunk = 4096
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        lab = labels[start:stop]
        m = stop - start
        jy = cy[lab] + rng.normal(0.0, 1.0, size=m)
        jx = cx[lab] + rng.normal(0.0, 1.0, size=m)
        sigma = 2.0 + rng.uniform(0.0, 1.5, size=m)
        amp = 180.0 + rng.uniform(0.0, 75.0, size=m)
        d2 = (yy[None, :, :] - jy[:, None, None]) ** 2 + (xx[None, :, :] - jx[:, None, None]) ** 2
        block = amp[:, None, None] * np.exp(-d2 / (2.0 * sigma[:, None, None] ** 2))
        block += rng.normal(0.0, 8.0, size=block.shape)
        images[start:stop] = np.clip(np.rint(block), 0, 255).astype(np.uint8)
    return images, labels


def write_pgm(path, image_row: np.ndarray, shape: tuple[int, int, int]) -> None:
    """Write one flattened [-1, 1] sample as a binary PGM (P5) image."""
    _, height, width = shape
    pixels = np.clip(
        np.rint((np.asarray(image_row, dtype=np.float64) + 1.0) * _PIXEL_SCALE), 0, 255
    ).astype(np.uint8)
    if pixels.size != height * width:
        raise ValueError(f"sample has {pixels.size} values, shape wants {height * width}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(pixels.tobytes())


def moons_to_csv(store: DatasetStore, path) -> None:
    """Write a 2-D store as `x,y[,label]` rows with a header."""
    if store.dim != 2:
        raise ValueError("CSV export is for 2-D stores")
    with open(path, "w", newline="") as fh:
        if store.labels is not None:
            fh.write("x,y,label\n")
            for (x, y), lab in zip(store.samples, store.labels):
                fh.write(f"{float(x)!r},{float(y)!r},{int(lab)}\n")
        else:
            fh.write("x,y\n")
            for x, y in store.samples:
                fh.write(f"{float(x)!r},{float(y)!r}\n")
