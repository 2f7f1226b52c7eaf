"""Shared fixtures: reference datasets, schedules, and the acceptance recorder."""

from __future__ import annotations

import numpy as np
import pytest

from golden_diffusion.dataset import (
    load_idx,
    make_moons,
    synth_blob_images,
    take,
    write_idx_images,
    write_idx_labels,
)
from golden_diffusion.schedule import build_linear_beta

# one line per acceptance criterion, printed after the run
_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(num: int, passed: bool, detail: str = "") -> None:
    _CRITERIA[num] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        passed, detail = _CRITERIA[num]
        tag = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"criterion {num:2d}: {tag}{suffix}")


@pytest.fixture(scope="session")
def moons2000():
    return make_moons(2000, noise_std=0.05, rng_seed=7)


@pytest.fixture(scope="session")
def schedule10():
    return build_linear_beta(1000, 1e-4, 0.02, 10)


@pytest.fixture(scope="session")
def idx_dir(tmp_path_factory):
    """Small synthetic image corpus written as IDX files (3000 x 28 x 28)."""
    d = tmp_path_factory.mktemp("idx_small")
    images, labels = synth_blob_images(3000, rng_seed=42)
    write_idx_images(d / "images.idx", images)
    write_idx_labels(d / "labels.idx", labels)
    return d


@pytest.fixture(scope="session")
def small_idx_store(idx_dir):
    return load_idx(idx_dir / "images.idx", idx_dir / "labels.idx")


@pytest.fixture(scope="session")
def big_idx_store(tmp_path_factory):
    """Image corpus at handwritten-digit scale (60000 x 784) for the
    performance and sensitivity criteria. Built once per session."""
    d = tmp_path_factory.mktemp("idx_big")
    images, labels = synth_blob_images(60000, rng_seed=42)
    write_idx_images(d / "images.idx", images)
    write_idx_labels(d / "labels.idx", labels)
    return load_idx(d / "images.idx", d / "labels.idx")


@pytest.fixture(scope="session")
def idx5000(big_idx_store):
    return take(big_idx_store, np.arange(5000))
