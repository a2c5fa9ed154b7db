import itertools

import numpy as np
import pytest

from core.aoptics import CoDrivingSet
from core.batch_processor import BatchProcessor
from core.errors import ConfigError, UnknownTruckError
from core.oracles import oracle_patterns
from core.pattern_miner import (
    MineParams,
    PatternSummary,
    PlatoonPattern,
    SnapshotIndex,
    consecutive_runs,
    mine_patterns,
    pattern_distribution,
    summarize_pattern,
    t_max,
)
from core.resampler import GriddedPoint
from core.road_graph import Direction
from core.synth import random_partitions

FOUR_STEPS = {
    1: [("a", "b", "c")],
    2: [("a", "b", "c")],
    3: [("a", "b")],
    4: [("a", "b")],
}


def as_tuples(patterns):
    return [(p.trucks, p.timesteps) for p in patterns]


def track(truck_id, steps, metres_per_step=300.0):
    return {
        k: GriddedPoint(truck_id, 15.0 * k, "s0", 0.5, Direction.ALONG, (0.0, 0.0),
                        step=k, odometer_m=metres_per_step * k)
        for k in steps
    }


def convoy_sets(steps, headway=120.0):
    return [CoDrivingSet(t, ("A", "B"), "expressway", (0.0, headway)) for t in steps]


@pytest.fixture
def four_step_index():
    return SnapshotIndex(FOUR_STEPS)


class TestMining:
    def test_closed_patterns(self, four_step_index):
        patterns = mine_patterns(four_step_index, min_o=2, min_t=2)
        assert as_tuples(patterns) == [(("a", "b", "c"), (1, 2)), (("a", "b"), (1, 2, 3, 4))]

    def test_single_timestep_is_empty(self):
        assert mine_patterns(SnapshotIndex({1: [("a", "b", "c")]}), min_o=2, min_t=2) == []

    def test_no_sets(self):
        assert mine_patterns(SnapshotIndex({}), min_o=2, min_t=2) == []

    def test_min_o_three(self, four_step_index):
        patterns = mine_patterns(four_step_index, min_o=3, min_t=2)
        assert as_tuples(patterns) == [(("a", "b", "c"), (1, 2))]

    @pytest.mark.parametrize("flags", list(itertools.product([True, False], repeat=4)))
    def test_pruning_never_changes_output(self, four_step_index, flags):
        logical, apriori, subset, marginal = flags
        params = MineParams(logical=logical, apriori=apriori, subset=subset, marginal=marginal)
        assert as_tuples(mine_patterns(four_step_index, params=params)) == as_tuples(
            mine_patterns(four_step_index, min_o=2, min_t=2))

    def test_processor_gives_same_patterns(self, four_step_index):
        pooled = mine_patterns(four_step_index, min_o=2, min_t=2, processor=BatchProcessor(max_workers=2))
        assert as_tuples(pooled) == as_tuples(mine_patterns(four_step_index, min_o=2, min_t=2))

    def test_matches_exhaustive_search(self):
        rng = np.random.Generator(np.random.PCG64(21))
        for _ in range(20):
            sets = random_partitions(rng, n_trucks=6, n_timesteps=8)
            assert as_tuples(mine_patterns(SnapshotIndex(sets), min_o=2, min_t=2)) == oracle_patterns(sets)

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            MineParams(min_o=1)
        with pytest.raises(ConfigError):
            MineParams(min_t=0)


class TestTMax:
    def test_singleton_and_pair(self, four_step_index):
        assert t_max(["a"], four_step_index) == {1, 2, 3, 4}
        assert t_max(["a", "c"], four_step_index) == {1, 2}

    def test_monotone_in_truck_set(self, four_step_index):
        assert t_max(["a", "b", "c"], four_step_index) <= t_max(["a", "b"], four_step_index)

    def test_unknown_truck(self, four_step_index):
        with pytest.raises(UnknownTruckError):
            t_max(["a", "zz"], four_step_index)

    def test_empty(self, four_step_index):
        with pytest.raises(ValueError):
            t_max([], four_step_index)

    def test_separate_sets_do_not_count(self):
        index = SnapshotIndex({1: [("a", "b"), ("c", "d")], 2: [("a", "c")]})
        assert t_max(["a", "c"], index) == {2}
        assert t_max(["a", "d"], index) == frozenset()


class TestSnapshotIndex:
    def test_double_membership_rejected(self):
        with pytest.raises(ValueError, match="two sets"):
            SnapshotIndex({1: [("a", "b"), ("b", "c")]})

    def test_from_sets_and_lookup(self):
        sets = convoy_sets([0, 1])
        index = SnapshotIndex.from_sets(sets, trucks=("Z",))
        assert index.trucks == ("A", "B", "Z")
        assert index.set_at("A", 1) is sets[1]
        assert index.set_at("Z", 1) is None


def test_consecutive_runs():
    assert consecutive_runs([5, 1, 2, 3, 7, 6]) == ((1, 2, 3), (5, 6, 7))
    assert consecutive_runs([]) == ()


class TestSummary:
    def test_single_run(self):
        index = SnapshotIndex.from_sets(convoy_sets(range(40)))
        pattern = PlatoonPattern(("A", "B"), tuple(range(40)))
        gridded = {"A": track("A", range(41)), "B": track("B", range(41))}
        summary = summarize_pattern(pattern, gridded, index, 15.0)
        assert summary.duration_s == 600.0
        assert summary.distance_km == pytest.approx(12.0)
        assert summary.mean_headway_m == pytest.approx(120.0)
        assert summary.max_headway_m == pytest.approx(120.0)
        assert summary.run_orders == (("A", "B"),)
        assert summary.coverage_ok

    def test_split_runs(self):
        steps = (0, 1, 2, 5, 6)
        index = SnapshotIndex.from_sets(convoy_sets(steps))
        pattern = PlatoonPattern(("A", "B"), steps)
        gridded = {"A": track("A", range(8)), "B": track("B", range(8))}
        summary = summarize_pattern(pattern, gridded, index, 15.0)
        assert summary.runs == ((0, 1, 2), (5, 6))
        assert summary.duration_s == 75.0
        assert summary.distance_km == pytest.approx(1.5)

    def test_missing_coverage(self):
        index = SnapshotIndex.from_sets(convoy_sets(range(10)))
        pattern = PlatoonPattern(("A", "B"), tuple(range(10)))
        gridded = {"A": track("A", range(11)), "B": track("B", [k for k in range(11) if k != 5])}
        summary = summarize_pattern(pattern, gridded, index, 15.0)
        assert summary.distance_km is None
        assert not summary.coverage_ok
        assert summary.duration_s == 150.0

    def test_distribution(self):
        long_one = PlatoonPattern(("A", "B"), (0,), PatternSummary(600.0, 12.0))
        short_one = PlatoonPattern(("C", "D"), (0,), PatternSummary(300.0, 12.0))
        unknown = PlatoonPattern(("E", "F"), (0,), PatternSummary(900.0, None))
        assert pattern_distribution([long_one, short_one, unknown]) == 0.5
        assert pattern_distribution([unknown]) is None
