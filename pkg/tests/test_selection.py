"""Golden-subset selection: schedules, proxy screen, exact top-k refine."""

from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from golden_diffusion.dataset import from_arrays, make_moons
from golden_diffusion.selection import (
    GoldenSelection,
    ScheduleParams,
    build_proxy,
    coarse_screen,
    golden_select,
    k_of_t,
    largest_k,
    m_of_t,
    merge_partial_top_m,
    project_query,
    select_step,
    smallest_m,
)


def _pool_oracle(image: np.ndarray, factor: int) -> np.ndarray:
    """Naive double-loop block-mean pooling with truncated trailing blocks."""
    h, w = image.shape
    oh = math.ceil(h / factor)
    ow = math.ceil(w / factor)
    out = np.zeros((oh, ow))
    for bi in range(oh):
        for bj in range(ow):
            block = image[bi * factor : (bi + 1) * factor, bj * factor : (bj + 1) * factor]
            out[bi, bj] = block.mean()
    return out.ravel()


class TestScheduleParams:
    def test_defaults_from_dataset_size(self):
        p = ScheduleParams.from_dataset_size(2000)
        assert (p.m_min, p.m_max, p.k_min, p.k_max) == (200, 500, 100, 200)

    def test_defaults_floor(self):
        p = ScheduleParams.from_dataset_size(999)
        assert (p.m_min, p.m_max, p.k_min, p.k_max) == (99, 249, 49, 99)

    def test_tiny_dataset(self):
        p = ScheduleParams.from_dataset_size(10)
        assert 1 <= p.k_min <= p.k_max <= p.m_min <= p.m_max <= 10

    @pytest.mark.parametrize(
        "args",
        [
            (0, 5, 1, 2),  # m_min < 1
            (5, 4, 1, 2),  # m_max < m_min
            (5, 10, 0, 2),  # k_min < 1
            (5, 10, 3, 2),  # k_max < k_min
        ],
    )
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            ScheduleParams(*args)

    def test_validate_against(self, schedule10):
        p = ScheduleParams(m_min=10, m_max=25, k_min=5, k_max=10)
        p.validate_against(100, schedule10)
        with pytest.raises(ValueError):
            p.validate_against(20, schedule10)  # m_max exceeds N


class TestSchedules:
    def test_m_endpoints(self):
        p = ScheduleParams(100, 250, 50, 100)
        assert m_of_t(p, 1.0) == 100
        assert m_of_t(p, 0.0) == 250

    def test_k_endpoints(self):
        p = ScheduleParams(100, 250, 50, 100)
        assert k_of_t(p, 0.0) == 50
        assert k_of_t(p, 1.0) == 100

    def test_floor_arithmetic(self):
        p = ScheduleParams(100, 250, 50, 100)
        assert m_of_t(p, 0.5) == 175
        assert k_of_t(p, 0.3) == 65

    def test_floor_not_round(self):
        p = ScheduleParams(100, 250, 50, 100)
        # 100 + 150*0.0133 = 101.995 -> floor 101
        assert m_of_t(p, 1.0 - 0.0133) == 101

    def test_g_out_of_range(self):
        p = ScheduleParams(100, 250, 50, 100)
        with pytest.raises(ValueError):
            m_of_t(p, -0.1)
        with pytest.raises(ValueError):
            k_of_t(p, 1.1)

    @given(
        st.floats(min_value=0.0, max_value=1.0),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_counter_monotonic(self, ga, gb):
        p = ScheduleParams(100, 250, 50, 100)
        lo, hi = sorted((ga, gb))
        assert m_of_t(p, lo) >= m_of_t(p, hi)
        assert k_of_t(p, lo) <= k_of_t(p, hi)


class TestProxy:
    def test_constant_block(self):
        s = from_arrays(np.ones((1, 16)), shape=(1, 4, 4))
        # dim 16 <= identity threshold, so force pooling semantics via
        # the row pooler by lowering the threshold
        proxy = build_proxy(s, factor=4, identity_max_dim=8)
        np.testing.assert_array_equal(proxy, [[1.0]])
        assert s.proxy_note == "pool4"

    def test_identity_for_low_dim(self):
        s = make_moons(50, noise_std=0.05, rng_seed=1)
        proxy = build_proxy(s)
        np.testing.assert_array_equal(proxy, np.asarray(s.samples, dtype=np.float64))
        assert s.proxy_note == "identity"
        q = np.array([0.3, -0.2])
        np.testing.assert_array_equal(project_query(s, q), q)

    def test_pool_against_double_loop(self, small_idx_store):
        proxy = build_proxy(small_idx_store)
        assert proxy.shape == (small_idx_store.n, 49)
        assert small_idx_store.proxy_note == "pool4"
        for i in (0, 17, 2999):
            img = np.asarray(small_idx_store.samples[i], dtype=np.float64).reshape(28, 28)
            np.testing.assert_allclose(proxy[i], _pool_oracle(img, 4), rtol=1e-12)

    def test_truncated_trailing_block(self):
        rng = np.random.default_rng(3)
        rows = rng.normal(size=(5, 28 * 28))
        s = from_arrays(rows, shape=(1, 28, 28))
        proxy = build_proxy(s, factor=5)
        assert s.proxy_note == "pool5-truncated"
        assert proxy.shape == (5, 36)  # ceil(28/5) = 6 per axis
        img = np.asarray(s.samples[2], dtype=np.float64).reshape(28, 28)
        np.testing.assert_allclose(proxy[2], _pool_oracle(img, 5), rtol=1e-12)

    def test_flat_high_dim_rejected(self):
        s = from_arrays(np.zeros((3, 100)))
        with pytest.raises(ValueError):
            build_proxy(s)

    def test_query_projection_matches_rows(self, small_idx_store):
        build_proxy(small_idx_store)
        row = np.asarray(small_idx_store.samples[5], dtype=np.float64)
        np.testing.assert_allclose(
            project_query(small_idx_store, row), small_idx_store.proxy[5], rtol=1e-12
        )


class TestTopPrimitives:
    def test_smallest_ties_low_index(self):
        vals = np.array([2.0, 1.0, 1.0, 1.0, 3.0])
        np.testing.assert_array_equal(smallest_m(vals, 2), [1, 2])

    def test_largest_ties_low_index(self):
        vals = np.array([5.0, 7.0, 7.0, 7.0, 1.0])
        np.testing.assert_array_equal(largest_k(vals, 2), [1, 2])

    def test_full_width(self):
        vals = np.array([3.0, 1.0, 2.0])
        np.testing.assert_array_equal(smallest_m(vals, 3), [0, 1, 2])

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_merge_is_top_m_of_union(self, data):
        n = data.draw(st.integers(min_value=2, max_value=40))
        m = data.draw(st.integers(min_value=1, max_value=n))
        seed = data.draw(st.integers(min_value=0, max_value=2**31))
        rng = np.random.default_rng(seed)
        # duplicated values exercise the tie-break path
        vals = rng.integers(0, 6, size=n).astype(np.float64)
        cut = data.draw(st.integers(min_value=0, max_value=n))
        ia = smallest_m(vals[:cut], min(m, cut)) if cut else np.array([], dtype=np.int64)
        ib = smallest_m(vals[cut:], min(m, n - cut)) + cut if cut < n else np.array([], dtype=np.int64)
        got_i, got_v = merge_partial_top_m(ia, vals[ia], ib, vals[ib], m)
        want = smallest_m(vals, m)
        np.testing.assert_array_equal(np.sort(got_i), want)
        np.testing.assert_allclose(np.sort(got_v), np.sort(vals[want]))

    def test_merge_associative(self):
        rng = np.random.default_rng(11)
        vals = rng.integers(0, 4, size=30).astype(np.float64)
        m = 7
        tops = []
        for lo in (0, 10, 20):
            local = smallest_m(vals[lo : lo + 10], m) + lo
            tops.append((local, vals[local]))
        ab = merge_partial_top_m(tops[0][0], tops[0][1], tops[1][0], tops[1][1], m)
        ab_c = merge_partial_top_m(ab[0], ab[1], tops[2][0], tops[2][1], m)
        bc = merge_partial_top_m(tops[1][0], tops[1][1], tops[2][0], tops[2][1], m)
        a_bc = merge_partial_top_m(tops[0][0], tops[0][1], bc[0], bc[1], m)
        np.testing.assert_array_equal(ab_c[0], a_bc[0])
        np.testing.assert_array_equal(smallest_m(vals, m), np.sort(ab_c[0]))


class TestCoarseScreen:
    def test_m_equals_n(self, moons2000):
        build_proxy(moons2000)
        got = coarse_screen(moons2000, np.array([0.1, 0.2]), 1.0, moons2000.n)
        np.testing.assert_array_equal(got, np.arange(moons2000.n))

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        s = from_arrays(rng.normal(size=(10, 2)))
        build_proxy(s)
        q = rng.normal(size=2)
        alpha = 0.73
        got = coarse_screen(s, q, alpha, 3)
        dists = np.linalg.norm(np.asarray(s.samples) - q / math.sqrt(alpha), axis=1)
        want = np.sort(np.argsort(dists)[:3])
        np.testing.assert_array_equal(got, want)

    def test_own_sample_recalled_at_low_noise(self, moons2000):
        build_proxy(moons2000)
        j = 137
        q = np.asarray(moons2000.samples[j], dtype=np.float64)  # alpha ~ 1, query = sample
        got = coarse_screen(moons2000, q, 1.0, 5)
        assert j in got

    def test_clamp_warns(self, moons2000):
        build_proxy(moons2000)
        with pytest.warns(UserWarning):
            got = coarse_screen(moons2000, np.zeros(2), 1.0, moons2000.n + 50)
        assert got.size == moons2000.n


class TestGoldenSelect:
    def test_singleton(self, moons2000):
        sel = golden_select(moons2000, np.zeros(2), 1.0, 1.0, np.array([42]), 1)
        np.testing.assert_array_equal(sel.golden, [42])
        np.testing.assert_array_equal(sel.candidates, [42])

    def test_scalar_oracle(self):
        s = from_arrays(np.array([[-1.0], [1.0], [3.0]]))
        sel = golden_select(s, np.zeros(1), 1.0, 1.0, np.arange(3), 2)
        np.testing.assert_array_equal(sel.golden, [0, 1])
        np.testing.assert_allclose(np.sort(sel.candidate_logits)[::-1], [-0.5, -0.5, -4.5], atol=1e-15)

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(5)
        s = from_arrays(rng.normal(size=(500, 8)))
        q = rng.normal(size=8)
        alpha, sig_sq = 0.6, 2.5
        cands = np.sort(rng.choice(500, size=200, replace=False))
        sel = golden_select(s, q, alpha, sig_sq, cands, 37)
        logits = -np.linalg.norm(np.asarray(s.samples)[cands] - q / math.sqrt(alpha), axis=1) ** 2 / (2 * sig_sq)
        order = np.lexsort((cands, -logits))  # logit desc, index asc on ties
        want = np.sort(cands[order[:37]])
        np.testing.assert_array_equal(sel.golden, want)

    def test_tie_break_lowest_index(self):
        s = from_arrays(np.array([[1.0], [1.0], [1.0], [5.0]]))
        sel = golden_select(s, np.array([1.0]), 1.0, 1.0, np.arange(4), 2)
        np.testing.assert_array_equal(sel.golden, [0, 1])

    def test_clamp_warns_and_flags(self):
        s = from_arrays(np.arange(6, dtype=np.float64)[:, None])
        with pytest.warns(UserWarning):
            sel = golden_select(s, np.zeros(1), 1.0, 1.0, np.arange(3), 5)
        assert sel.k == 3
        assert sel.clamped

    def test_diagnostics(self):
        s = from_arrays(np.array([[0.0], [1.0], [2.0]]))
        sel = golden_select(s, np.zeros(1), 1.0, 1.0, np.arange(3), 2)
        assert sel.max_logit == 0.0
        assert sel.min_golden_logit == -0.5
        assert sel.selection_gap() == pytest.approx(2.0)  # 0 - (-2)
        sel_all = golden_select(s, np.zeros(1), 1.0, 1.0, np.arange(3), 3)
        assert math.isnan(sel_all.selection_gap())


class TestSelectStep:
    def test_end_to_end_containment(self, moons2000, schedule10):
        build_proxy(moons2000)
        p = ScheduleParams.from_dataset_size(moons2000.n)
        t = schedule10.ddim_steps[4]
        g = float(schedule10.g_values[4])
        rng = np.random.default_rng(8)
        q = rng.normal(size=2) * 3
        sel = select_step(moons2000, q, schedule10.alphas[t], schedule10.sigmas_sq[t], p, g)
        assert isinstance(sel, GoldenSelection)
        assert sel.m == m_of_t(p, g) and sel.k == k_of_t(p, g)
        assert sel.candidates.size == sel.m and sel.golden.size == sel.k
        assert np.all(np.isin(sel.golden, sel.candidates))
        assert np.unique(sel.candidates).size == sel.m
        # golden set = top-k of the exact logits among the candidates
        pos = np.searchsorted(sel.candidates, sel.golden)
        kth_best = np.sort(sel.candidate_logits)[::-1][sel.k - 1]
        assert sel.candidate_logits[pos].min() >= kth_best

    def test_deterministic(self, moons2000, schedule10):
        build_proxy(moons2000)
        p = ScheduleParams.from_dataset_size(moons2000.n)
        q = np.array([1.5, -0.4])
        a = select_step(moons2000, q, 0.5, 1.0, p, 0.5)
        b = select_step(moons2000, q, 0.5, 1.0, p, 0.5)
        np.testing.assert_array_equal(a.candidates, b.candidates)
        np.testing.assert_array_equal(a.golden, b.golden)


def test_low_noise_recall_of_training_sample(moons2000, schedule10):
    # un-noised training sample at g = 0 must survive both stages
    build_proxy(moons2000)
    p = ScheduleParams.from_dataset_size(moons2000.n)
    j = 611
    q = np.asarray(moons2000.samples[j], dtype=np.float64)
    sel = select_step(moons2000, q, 1.0, float(schedule10.sigma_lo) ** 2, p, 0.0)
    assert j in sel.golden
