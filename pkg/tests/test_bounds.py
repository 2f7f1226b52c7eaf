"""Truncation-error certificates: tail mass, logit gap, audit chain."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from golden_diffusion.bounds import (
    certify_step,
    compute_bound,
    gap_trajectory,
    logit_gap_from_sq_dists,
    tail_mass_ratio,
)
from golden_diffusion.dataset import from_arrays
from golden_diffusion.denoiser import denoise_full, denoise_subset, sq_distances
from golden_diffusion.selection import GoldenSelection, golden_select


def _expected_scalar_chain():
    """Frozen three-point oracle: logits (-.5, -.5, -4.5), R = 3, k = 2."""
    logits = np.array([-0.5, -0.5, -4.5])
    z = np.exp(logits).sum()
    tail = math.exp(-4.5) / z
    return {
        "gap": 4.0,
        "bound": 6.0 * math.exp(-4.0),
        "tail": tail,
        "ratio_bound": 6.0 * tail,
    }


class TestComputeBound:
    def test_scalar_oracle(self):
        want = _expected_scalar_chain()
        diag = compute_bound(np.array([-0.5, -0.5, -4.5]), 2, 3.0)
        assert diag.logit_gap == want["gap"]
        assert diag.bound == pytest.approx(want["bound"], rel=1e-14)
        assert diag.tail_ratio == pytest.approx(want["tail"], rel=1e-14)
        assert diag.ratio_bound == pytest.approx(want["ratio_bound"], rel=1e-14)
        assert diag.bound == pytest.approx(0.1098938, abs=1e-7)
        assert diag.ratio_bound == pytest.approx(0.0544483, abs=1e-7)

    def test_all_equal_logits(self):
        n = 10
        diag = compute_bound(np.full(n, -1.3), n - 1, 2.0)
        assert diag.logit_gap == 0.0
        assert diag.bound == 4.0  # 2R(N-k)e^0 with N-k = 1
        assert diag.tail_ratio == pytest.approx(1 / n, rel=1e-14)
        assert diag.ratio_bound == pytest.approx(4.0 / n, rel=1e-14)

    def test_degenerate_k(self):
        diag = compute_bound(np.array([-1.0, -2.0]), 2, 5.0)
        assert diag.degenerate
        assert diag.bound == 0.0 and diag.tail_ratio == 0.0 and diag.ratio_bound == 0.0
        assert math.isinf(diag.logit_gap)

    def test_bound_monotone_in_k(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(scale=3, size=40)
        diags = [compute_bound(logits, k, 1.0) for k in range(1, 40)]
        bounds = [d.bound for d in diags]
        tails = [d.tail_ratio for d in diags]
        assert all(b1 >= b2 - 1e-15 for b1, b2 in zip(bounds, bounds[1:]))
        assert all(t1 >= t2 for t1, t2 in zip(tails, tails[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            compute_bound(np.array([]), 1, 1.0)
        with pytest.raises(ValueError):
            compute_bound(np.array([0.0]), 0, 1.0)
        with pytest.raises(ValueError):
            compute_bound(np.array([0.0]), 1, -1.0)


class TestTailMass:
    def test_partition_identity(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(scale=10, size=100)
        pos = rng.choice(100, size=30, replace=False)
        rest = np.setdiff1d(np.arange(100), pos)
        assert tail_mass_ratio(logits, pos) + tail_mass_ratio(logits, rest) == pytest.approx(
            1.0, rel=1e-12
        )

    def test_full_subset_no_tail(self):
        logits = np.array([0.0, -1.0, -2.0])
        assert tail_mass_ratio(logits, np.arange(3)) == 0.0

    def test_shift_invariance(self):
        logits = np.array([3.0, 1.0, -2.0, 0.5])
        pos = np.array([0, 3])
        a = tail_mass_ratio(logits, pos)
        b = tail_mass_ratio(logits + 1000.0, pos)
        assert a == pytest.approx(b, rel=1e-12)


class TestGap:
    def test_matches_sorted_logits(self):
        rng = np.random.default_rng(3)
        d2 = rng.uniform(0.1, 9.0, size=25)
        sig_sq = 0.8
        logits = -d2 / (2 * sig_sq)
        for k in (1, 5, 24):
            want = np.sort(logits)[::-1]
            assert logit_gap_from_sq_dists(d2, k, sig_sq) == pytest.approx(
                float(want[0] - want[k]), rel=1e-14
            )

    def test_halving_exact_under_sigma_doubling(self):
        rng = np.random.default_rng(4)
        d2 = rng.uniform(0.0, 50.0, size=200)
        for sig_sq in (1e-4, 0.37, 1.0, 157.0):
            g1 = logit_gap_from_sq_dists(d2, 10, sig_sq)
            g2 = logit_gap_from_sq_dists(d2, 10, 2 * sig_sq)
            assert g2 == g1 / 2  # bitwise, not approximate

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            logit_gap_from_sq_dists(np.array([1.0, 2.0]), 2, 1.0)


class TestChain:
    @pytest.mark.parametrize("seed", range(10))
    def test_chain_holds_on_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 400))
        d = int(rng.integers(1, 16))
        s = from_arrays(rng.normal(size=(n, d)))
        sig_sq = float(10 ** rng.uniform(-2, 2))
        alpha = float(rng.uniform(0.2, 1.0))
        q = rng.normal(size=d)
        k = int(rng.integers(1, n))
        sel = golden_select(s, q, alpha, sig_sq, np.arange(n), k)
        diag = certify_step(s, q, alpha, sig_sq, sel, mode="full_audit")
        assert diag.recall_ok
        assert diag.chain_ok(slack=1e-9)
        assert diag.actual_error <= diag.ratio_bound + 1e-9
        assert diag.ratio_bound <= diag.bound + 1e-9

    def test_scalar_chain_values(self):
        s = from_arrays(np.array([[-1.0], [1.0], [3.0]]))
        sel = golden_select(s, np.zeros(1), 1.0, 1.0, np.arange(3), 2)
        diag = certify_step(s, np.zeros(1), 1.0, 1.0, sel)
        want = _expected_scalar_chain()
        assert diag.logit_gap == pytest.approx(want["gap"], rel=1e-14)
        assert diag.bound == pytest.approx(want["bound"], rel=1e-14)
        assert diag.ratio_bound == pytest.approx(want["ratio_bound"], rel=1e-12)
        # actual error: full mean 0.0272..., subset mean 0.0
        assert diag.actual_error == pytest.approx(0.0272241, abs=1e-7)
        assert diag.chain_ok()

    def test_full_subset_zero_error(self, moons2000):
        q = np.array([0.3, 0.3])
        sel = golden_select(moons2000, q, 1.0, 1.0, np.arange(moons2000.n), moons2000.n)
        diag = certify_step(moons2000, q, 1.0, 1.0, sel)
        assert diag.degenerate
        assert diag.actual_error <= 1e-12
        assert diag.chain_ok()

    def test_ratio_bound_valid_for_wrong_subset(self):
        # hand the auditor a deliberately bad "golden" set; the mass-ratio
        # certificate must still dominate the realized error
        rng = np.random.default_rng(7)
        s = from_arrays(rng.normal(size=(100, 3)))
        q = rng.normal(size=3)
        bad = GoldenSelection(
            step=0,
            m=100,
            k=10,
            candidates=np.arange(100),
            golden=np.arange(90, 100),  # arbitrary rows, not the top-k
            candidate_logits=-sq_distances(np.asarray(s.samples), q) / 2.0,
        )
        diag = certify_step(s, q, 1.0, 1.0, bad, mode="full_audit")
        assert diag.recall_ok is False
        assert diag.actual_error <= diag.ratio_bound + 1e-9

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=40, deadline=None)
    def test_chain_property(self, seed):
        rng = np.random.default_rng(seed)
        n = 50
        s = from_arrays(rng.normal(size=(n, 2)))
        q = rng.normal(size=2) * 2
        sig_sq = float(10 ** rng.uniform(-1, 1))
        k = int(rng.integers(1, n + 1))
        sel = golden_select(s, q, 1.0, sig_sq, np.arange(n), k)
        diag = certify_step(s, q, 1.0, sig_sq, sel)
        assert diag.chain_ok(slack=1e-9)


class TestCandidateAudit:
    def test_conservative_with_full_coverage(self, moons2000):
        rng = np.random.default_rng(8)
        for _ in range(10):
            q = rng.normal(size=2)
            sig_sq = float(10 ** rng.uniform(-1, 1.5))
            sel = golden_select(moons2000, q, 1.0, sig_sq, np.arange(moons2000.n), 100)
            cheap = certify_step(moons2000, q, 1.0, sig_sq, sel, mode="candidate_audit")
            exact = certify_step(moons2000, q, 1.0, sig_sq, sel, mode="full_audit")
            assert cheap.heuristic
            assert cheap.tail_ratio >= exact.tail_ratio - 1e-12
            assert exact.actual_error <= cheap.ratio_bound + 1e-9

    def test_tail_estimate_capped(self):
        s = from_arrays(np.linspace(-1, 1, 50)[:, None])
        sel = golden_select(s, np.zeros(1), 1.0, 100.0, np.arange(5), 2)
        diag = certify_step(s, np.zeros(1), 1.0, 100.0, sel, mode="candidate_audit")
        assert diag.tail_ratio <= 1.0
        assert diag.ratio_bound <= 2.0 * s.radius + 1e-12

    def test_unknown_mode(self, moons2000):
        sel = golden_select(moons2000, np.zeros(2), 1.0, 1.0, np.arange(10), 2)
        with pytest.raises(ValueError):
            certify_step(moons2000, np.zeros(2), 1.0, 1.0, sel, mode="guess")


class TestLimits:
    def test_high_noise_bound_approaches_vacuous(self):
        # sigma -> inf: gap -> 0, bound -> 2R(N-k)
        d2 = np.arange(1.0, 11.0)
        logits = -d2 / (2 * 1e8)
        diag = compute_bound(logits, 5, 1.0)
        assert diag.bound == pytest.approx(2.0 * 5, rel=1e-6)

    def test_low_noise_bound_vanishes(self):
        d2 = np.arange(1.0, 11.0)
        logits = -d2 / (2 * 1e-3)
        diag = compute_bound(logits, 5, 1.0)
        assert diag.bound < 1e-100
        assert diag.tail_ratio < 1e-100


def test_gap_trajectory(moons2000, schedule10):
    rng = np.random.default_rng(9)
    queries = rng.normal(size=(3, 2))
    rows = gap_trajectory(moons2000, queries, schedule10, k=100)
    n_steps = len(schedule10.ddim_steps)
    assert len(rows) == 3 * n_steps  # one block of stride rows per query
    for qi in range(3):
        block = rows[qi * n_steps : (qi + 1) * n_steps]
        np.testing.assert_array_equal([r[0] for r in block], schedule10.ddim_steps)
        for t, sig_sq, gap in block:
            assert sig_sq == schedule10.sigmas_sq[t]
            assert gap >= 0.0
        # gap grows as noise falls (same distances, shrinking sigma)
        assert block[-1][2] > block[0][2]
