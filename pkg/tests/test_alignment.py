import math

import numpy as np
import pytest

from stepalign.alignment import (
    AlignmentPath, brute_force_align, decode_segments, drop_dtw, dtw,
    percentile_drop_cost,
)
from stepalign.data import Segment
from stepalign.errors import ValidationError


def _path_cost(cost, path, di, ds=None):
    """Recompute a path's total from first principles."""
    total = sum(cost[i][j] for i, j in path.matches)
    total += di * len(path.dropped_items)
    if ds is not None:
        total += ds * len(path.dropped_slots)
    else:
        assert not path.dropped_slots
    return total


def _dtw_cost_by_enumeration(cost):
    """Oracle: exhaustive walk over all monotone full-coverage paths."""
    n, m = cost.shape
    best = [math.inf]

    def walk(i, j, acc):
        acc += cost[i, j]
        if i == n - 1 and j == m - 1:
            best[0] = min(best[0], acc)
            return
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n:
            walk(i + 1, j, acc)

    walk(0, 0, 0.0)
    return best[0]


class TestPercentileDropCost:
    def test_nearest_rank_example(self):
        cost = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]])
        # oracle: sort and take the ceil(0.8 * 5) = 4th smallest
        flat = sorted(cost.ravel())
        assert flat[math.ceil(80 * len(flat) / 100) - 1] == 4.0
        assert percentile_drop_cost(cost, 80) == 4.0

    def test_constant_matrix(self):
        assert percentile_drop_cost(np.full((3, 4), 2.5), 37.0) == 2.5

    def test_pct_100_is_max(self):
        rng = np.random.default_rng(0)
        cost = rng.normal(size=(4, 6))
        assert percentile_drop_cost(cost, 100) == cost.max()

    def test_tiny_pct_is_min(self):
        rng = np.random.default_rng(1)
        cost = rng.normal(size=(4, 6))
        assert percentile_drop_cost(cost, 1e-9) == cost.min()

    def test_invalid_pct_rejected(self):
        with pytest.raises(ValidationError):
            percentile_drop_cost(np.ones((2, 2)), 0.0)
        with pytest.raises(ValidationError):
            percentile_drop_cost(np.ones((2, 2)), 101.0)


class TestDtw:
    def test_singleton(self):
        path = dtw(np.array([[3.5]]))
        assert path.matches == [(0, 0)]
        assert path.total_cost == 3.5

    def test_identity_favoring_matrix(self):
        cost = np.ones((3, 3)) - np.eye(3)
        path = dtw(cost)
        assert path.total_cost == 0.0
        assert path.matches == [(0, 0), (1, 1), (2, 2)]

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(123)
        for _ in range(30):
            cost = rng.normal(size=(4, 6))
            got = dtw(cost)
            assert got.total_cost == pytest.approx(
                _dtw_cost_by_enumeration(cost), abs=1e-12)
            assert got.total_cost == pytest.approx(
                _path_cost(cost, got, di=0.0, ds=0.0), abs=1e-12)


class TestDropDtw:
    def test_middle_item_dropped(self):
        cost = np.array([[0.0, 1.0, 1.0], [1.0, 1.0, 0.0]])
        path = drop_dtw(cost, drop_item_cost=0.5)
        assert path.total_cost == pytest.approx(0.5)
        assert path.matches == [(0, 0), (1, 2)]
        assert path.dropped_items == [1]
        assert path.dropped_slots == []

    def test_expensive_drops_reduce_to_dtw(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            cost = rng.normal(size=(3, 5))
            big = float(np.abs(cost).max()) * cost.size + 1.0
            assert drop_dtw(cost, big).total_cost == pytest.approx(
                dtw(cost).total_cost, abs=1e-12)

    def test_zero_costs_mean_no_drops(self):
        path = drop_dtw(np.zeros((3, 5)), drop_item_cost=0.25)
        assert path.total_cost == 0.0
        assert path.dropped_items == []

    def test_infinite_drop_cost_rejected(self):
        with pytest.raises(ValidationError, match="finite"):
            drop_dtw(np.ones((2, 2)), math.inf)

    def test_monotone_in_drop_cost(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cost = rng.normal(size=(3, 6))
            deltas = sorted(rng.normal(size=4))
            totals = [drop_dtw(cost, d).total_cost for d in deltas]
            for lo, hi in zip(totals, totals[1:]):
                assert lo <= hi + 1e-12

    def test_scaling_by_powers_of_two_is_exact(self):
        rng = np.random.default_rng(13)
        for lam in (0.5, 2.0, 4.0):
            cost = rng.normal(size=(3, 5))
            di, ds = 0.4, 0.7
            base = drop_dtw(cost, di, ds)
            scaled = drop_dtw(cost * lam, di * lam, ds * lam)
            assert scaled.total_cost == base.total_cost * lam
            assert scaled.matches == base.matches
            assert scaled.dropped_items == base.dropped_items
            assert scaled.dropped_slots == base.dropped_slots

    def test_two_sided_can_drop_everything(self):
        cost = np.full((2, 2), 10.0)
        path = drop_dtw(cost, drop_item_cost=0.1, drop_slot_cost=0.1)
        assert path.matches == []
        assert path.total_cost == pytest.approx(0.4)

    def test_deterministic(self):
        rng = np.random.default_rng(17)
        cost = rng.normal(size=(4, 7))
        a = drop_dtw(cost, 0.3, 0.6)
        b = drop_dtw(cost, 0.3, 0.6)
        assert a == b


class TestBruteForceEquivalence:
    def test_sweep_one_and_two_sided(self):
        rng = np.random.default_rng(2024)
        for trial in range(400):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 8))
            cost = rng.normal(size=(n, m))
            di = float(rng.normal())
            two_sided = trial % 2 == 0
            ds = float(rng.normal()) if two_sided else None
            fast = drop_dtw(cost, di, ds)
            slow = brute_force_align(cost, di, ds)
            assert fast.total_cost == pytest.approx(slow.total_cost, abs=1e-12)
            fast.validate(n, m, two_sided)
            slow.validate(n, m, two_sided)
            assert _path_cost(cost, fast, di, ds) == pytest.approx(
                fast.total_cost, abs=1e-12)

    def test_forbidden_drops_match_dtw(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cost = rng.normal(size=(3, 5))
            big = float(np.abs(cost).max()) * cost.size + 1.0
            got = brute_force_align(cost, big)
            assert got.total_cost == pytest.approx(dtw(cost).total_cost, abs=1e-12)

    def test_size_cap_enforced(self):
        with pytest.raises(ValidationError, match="capped"):
            brute_force_align(np.zeros((5, 3)), 0.1)
        with pytest.raises(ValidationError, match="capped"):
            brute_force_align(np.zeros((2, 8)), 0.1)


class TestDecodeSegments:
    def test_min_max_per_step(self):
        path = AlignmentPath(matches=[(0, 2), (0, 3), (1, 7)],
                             dropped_items=[], dropped_slots=[], total_cost=0.0)
        out = decode_segments(path, {0: 1, 1: 2}, num_frames=10)
        assert out == [(1, Segment(2, 4)), (2, Segment(7, 8))]

    def test_empty_matches(self):
        path = AlignmentPath(matches=[], dropped_items=[0, 1],
                             dropped_slots=[0], total_cost=0.0)
        assert decode_segments(path, {}, num_frames=5) == []

    def test_full_cover(self):
        path = AlignmentPath(matches=[(0, j) for j in range(6)],
                             dropped_items=[], dropped_slots=[], total_cost=0.0)
        assert decode_segments(path, {0: 3}, num_frames=6) == [(3, Segment(0, 6))]

    def test_unmapped_slot_rejected(self):
        path = AlignmentPath(matches=[(0, 0)], dropped_items=[],
                             dropped_slots=[], total_cost=0.0)
        with pytest.raises(ValidationError, match="no step mapping"):
            decode_segments(path, {1: 1}, num_frames=4)

    def test_sorted_by_step(self):
        path = AlignmentPath(matches=[(0, 0), (1, 2), (2, 4)],
                             dropped_items=[], dropped_slots=[], total_cost=0.0)
        out = decode_segments(path, {0: 3, 1: 1, 2: 2}, num_frames=8)
        assert [step for step, _ in out] == [1, 2, 3]
