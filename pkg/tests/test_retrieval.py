import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scenemem._validation import OrderingError, ParameterError
from scenemem.geometry import look_at
from scenemem.retrieval import (
    CoverageSelector,
    MemoryBank,
    fov_overlap,
    select_fov,
    select_greedy_coverage,
    select_greedy_multi_target,
    select_random,
    select_surfel,
    select_temporal,
    select_topk_mean,
    surfel_votes,
)
from scenemem.world import Frame, render, visibility_grid

WORKED = [
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.9, 0.9], [0.0, 0.0]],
    [[0.0, 0.0], [1.0, 1.0]],
]
DUPLICATES = [
    [[1.0, 1.0], [0.0, 0.0]],
    [[1.0, 1.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.5, 0.0]],
]


def coverage(maps, subset):
    """Brute-force objective: summed cellwise max over the subset (zero canvas)."""
    maps = np.asarray(maps)
    if maps.ndim == 3:
        maps = maps[None]
    if not subset:
        return 0.0
    return float(np.maximum(0.0, maps[:, list(subset)].max(axis=1)).sum(axis=(1, 2)).mean())


def best_subset(maps, k):
    n = np.asarray(maps).shape[-3]
    return max(coverage(maps, s) for s in itertools.combinations(range(n), min(k, n)))


def dummy_frame(index, pose=None):
    pose = pose or look_at((0, 0, 0), (0, 0, 1), width=8, height=8)
    return Frame(np.zeros((8, 8, 3)), np.ones((8, 8)), pose, index)


def bank_of(indices, stride=1):
    bank = MemoryBank(stride)
    for i in indices:
        bank.append(dummy_frame(i))
    return bank


class TestBank:
    def test_stride(self):
        bank = bank_of(range(8), stride=4)
        assert bank.indices == [0, 4] and bank.last.index == 7

    def test_stride_one(self):
        assert bank_of(range(6)).indices == list(range(6))

    def test_ordering(self):
        bank = bank_of([0, 1, 2])
        with pytest.raises(OrderingError):
            bank.append(dummy_frame(2))
        with pytest.raises(OrderingError):
            bank.append(dummy_frame(1))

    def test_force_keep_logged(self):
        bank = MemoryBank(4)
        for i in range(7):
            bank.append(dummy_frame(i), force_keep=i == 6)
        assert bank.indices == [0, 4, 6] and bank.forced == [6]

    @given(st.integers(1, 300))
    def test_size_formula(self, n_frames):
        bank = bank_of(range(n_frames + 1), stride=4)
        assert len(bank) == 1 + n_frames // 4

    def test_last_retrievable(self):
        bank = bank_of(range(6), stride=4)
        assert bank[5].index == 5 and bank[4].index == 4
        with pytest.raises(KeyError):
            bank[3]
        assert [f.index for f in bank.candidates()] == [0, 4]


class TestGreedy:
    def test_worked_example(self):
        res = select_greedy_coverage(WORKED, 2)
        assert res.chosen == [3, 2, 4]
        assert res.canvas_sum == pytest.approx(3.8)
        assert res.canvas_sum == pytest.approx(best_subset(WORKED, 2))
        assert res.gains == pytest.approx([2.0, 1.8])

    def test_redundancy(self):
        assert select_greedy_coverage(DUPLICATES, 2, include_last=False).chosen == [1, 3]
        assert select_topk_mean(DUPLICATES, 2, include_last=False).chosen == [1, 2]
        assert coverage(DUPLICATES, [0, 2]) > coverage(DUPLICATES, [0, 1])

    def test_k_zero(self):
        res = select_greedy_coverage(WORKED, 0)
        assert res.chosen == [4] and res.canvas_sum == 0.0
        assert select_greedy_coverage(WORKED, 0, include_last=False).chosen == []

    def test_negative_k(self):
        with pytest.raises(ParameterError):
            select_greedy_coverage(WORKED, -1)
        with pytest.raises(ParameterError):
            select_topk_mean(WORKED, -1)

    def test_k_clamped(self):
        res = select_greedy_coverage(WORKED, 10)
        assert sorted(res.chosen[:-1]) == [1, 2, 3] and res.chosen[-1] == 4

    def test_custom_ids(self):
        res = select_greedy_coverage(WORKED, 2, ids=[0, 4, 8], last_id=12)
        assert res.chosen == [8, 4, 12]

    def test_ties_lowest(self):
        maps = np.ones((3, 2, 2))
        assert select_greedy_coverage(maps, 1, include_last=False).chosen == [1]
        assert select_topk_mean(maps, 2, include_last=False).chosen == [1, 2]

    def test_negative_confidences(self):
        maps = -np.arange(1, 4)[:, None, None] * np.ones((3, 2, 2))
        res = select_greedy_coverage(maps, 2, include_last=False)
        assert res.gains == [0.0, 0.0] and res.chosen == [1, 2]

    def test_multi_target_reduces(self, rng):
        maps = rng.random((6, 4, 4))
        a = select_greedy_coverage(maps, 3)
        b = select_greedy_multi_target(maps[None], 3)
        assert a.chosen == b.chosen and np.allclose(a.gains, b.gains)

    def test_multi_target_tie(self):
        t1 = np.array([[[1.0, 0]], [[0, 0]]])
        t2 = np.array([[[0, 0]], [[1.0, 0]]])
        res = select_greedy_multi_target([t1, t2], 1, include_last=False)
        assert res.chosen == [1]

    def test_ragged_targets(self):
        with pytest.raises(ParameterError):
            select_greedy_multi_target([np.zeros((2, 2, 2)), np.zeros((3, 2, 2))], 1)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 7), st.just(3), st.just(3)), elements=st.floats(-1, 1)),
           st.integers(0, 7))
    def test_monotone_submodular(self, maps, k):
        res = select_greedy_coverage(maps, k)
        g = np.asarray(res.gains)
        assert np.all(g >= -1e-12)
        assert np.all(np.diff(g) <= 1e-12)
        assert len(res.chosen) == min(k, len(maps)) + 1
        assert len(set(res.chosen)) == len(res.chosen)
        assert res.canvas_sum == pytest.approx(coverage(maps, [i - 1 for i in res.chosen[:-1]]))

    def test_canvas_non_decreasing(self, rng):
        maps = rng.random((6, 4, 4))
        prev = np.zeros((4, 4))
        for k in range(1, 7):
            canvas = select_greedy_coverage(maps, k).canvas
            assert np.all(canvas >= prev)
            prev = canvas

    @given(st.integers(0, 10_000), st.floats(0.1, 10.0))
    def test_first_pick_scale_invariant(self, seed, scale):
        maps = np.random.default_rng(seed).random((5, 4, 4))
        a = select_greedy_coverage(maps, 1).chosen
        b = select_greedy_coverage(maps * scale, 1).chosen
        assert a == b

    def test_approximation_bound(self):
        rng = np.random.default_rng(2024)
        bound = 1.0 - 1.0 / math.e
        for _ in range(300):
            T = int(rng.integers(1, 4))
            n = int(rng.integers(1, 9))
            k = int(rng.integers(1, 4))
            maps = rng.random((T, n, 4, 4)) * (rng.random((T, n, 4, 4)) < 0.5)
            res = select_greedy_multi_target(maps, k, include_last=False)
            got = coverage(maps, [i - 1 for i in res.chosen])
            assert got >= bound * best_subset(maps, k) - 1e-12

    def test_estimator(self):
        sel = CoverageSelector(k=2).fit(np.asarray(WORKED))
        assert sel.chosen_ == [3, 2, 4]
        assert sel.get_params() == {"k": 2, "mode": "greedy", "include_last": True}
        assert CoverageSelector(k=2, mode="topk", include_last=False).fit(np.asarray(DUPLICATES)).chosen_ == [1, 2]
        with pytest.raises(ParameterError):
            CoverageSelector(mode="best").fit(np.asarray(WORKED))


class TestBaselines:
    def test_temporal(self):
        bank = bank_of([0, 4, 8, 12, 16])
        assert select_temporal(bank, 2).chosen == [12, 8, 16]

    def test_k_exceeds_bank(self):
        bank = bank_of([0, 4, 8, 12, 16])
        assert sorted(select_temporal(bank, 9).chosen[:-1]) == [0, 4, 8, 12]
        assert sorted(select_random(bank, 9, seed=1).chosen[:-1]) == [0, 4, 8, 12]

    def test_random_reproducible(self):
        bank = bank_of(range(0, 80, 4))
        a = select_random(bank, 3, seed=[7, 1])
        b = select_random(bank, 3, seed=[7, 1])
        assert a.chosen == b.chosen and len(set(a.chosen)) == 4
        assert 76 not in a.chosen[:-1]

    def test_fov_identity_and_opposite(self):
        t = look_at((0, 0, 0), (0, 0, 1))
        assert fov_overlap(t, t) == 1.0
        assert fov_overlap(look_at((0, 0, 0), (0, 0, -1)), t) == 0.0
        with pytest.raises(ParameterError):
            fov_overlap(t, t, depths=[])

    def test_fov_ignores_occlusion(self, room, south_view, north_view):
        # the candidate faces the target across the wall
        behind = look_at((0.0, 0.0, -4.3), (0.0, 0.0, 4.0))
        target = look_at((0.0, 0.0, 2.6), (0.0, 0.0, 0.0))
        assert fov_overlap(behind, target) > 0.4
        assert visibility_grid(room, behind, target, 8).mean() < 0.05

    def test_fov_tie_most_recent(self):
        t = look_at((0, 0, 0), (0, 0, 1), width=8, height=8)
        bank = bank_of([0, 4, 8])
        assert select_fov(bank, t, 1).chosen == [4, 8]

    def test_surfel_exact_view_wins(self, room, south_view, north_view):
        bank = MemoryBank(1)
        bank.append(render(room, north_view, 0))
        bank.append(render(room, south_view, 20))
        bank.append(render(room, look_at((0.0, 0.0, 3.4), (0.0, 0.0, 6.0)), 40))
        res = select_surfel(bank, room, south_view, 1)
        assert res.chosen == [20, 40] and res.gains[0] > 0

    def test_surfel_nms(self, room, south_view):
        bank = MemoryBank(1)
        near = look_at((0.05, 0.0, -3.5), (0.0, 0.0, 0.0))
        bank.append(render(room, south_view, 0))
        bank.append(render(room, near, 1))
        bank.append(render(room, look_at((-3.0, 0, -3.0), (0, 0, 0)), 30))
        bank.append(render(room, look_at((3.0, 0, 3.0), (4, 0, 6)), 60))
        res = select_surfel(bank, room, south_view, 2, nms_window=8)
        assert 30 in res.chosen and len({0, 1} & set(res.chosen)) == 1

    def test_surfel_votes_brute_force(self, room, south_view):
        from scenemem.world import cast_rays

        frames = [render(room, look_at((x, 0.0, -3.0), (0.0, 0.0, 0.0)), i) for i, x in enumerate((-2.0, 0.0, 2.5))]
        tgt = look_at((0.5, 0.1, -3.2), (0.0, 0.0, 0.0), width=16, height=16)
        _, ids, pts = cast_rays(room, tgt.position, tgt.pixel_directions())
        hits = pts[ids >= 0]
        votes = surfel_votes(frames, hits, pixel_stride=4)
        for f in frames:
            fx, fy, _, _ = f.pose.intrinsics
            d = f.depth[::4, ::4].ravel()
            sp = f.pose.position + d[:, None] * f.pose.pixel_directions(4).reshape(-1, 3)
            r = 2.0 * d / (0.5 * (fx + fy))
            expect = sum(bool(np.any(np.linalg.norm(sp - h, axis=1) <= r)) for h in hits)
            assert votes[f.index] == expect

    def test_surfel_needs_depth(self, room, south_view):
        class NoDepth:
            index = 0
            depth = None
        bank = MemoryBank(1)
        bank.frames.append(NoDepth())
        bank.last = dummy_frame(1)
        with pytest.raises(ParameterError):
            select_surfel(bank, room, south_view, 1)

    @pytest.mark.parametrize("strategy", ["temporal", "random", "fov"])
    def test_size_rule(self, strategy):
        t = look_at((0, 0, 0), (0, 0, 1), width=8, height=8)
        bank = bank_of([0, 4, 8, 12])
        for k in range(6):
            if strategy == "temporal":
                res = select_temporal(bank, k)
            elif strategy == "random":
                res = select_random(bank, k, seed=3)
            else:
                res = select_fov(bank, t, k)
            assert len(res.chosen) == min(k, 3) + 1 and res.chosen[-1] == 12
            assert len(set(res.chosen)) == len(res.chosen)

    def test_to_dict(self):
        d = select_greedy_coverage(WORKED, 2).to_dict()
        assert d == {"strategy": "greedy", "chosen": [3, 2, 4], "gains": pytest.approx([2.0, 1.8]),
                     "canvas_sum": pytest.approx(3.8)}
