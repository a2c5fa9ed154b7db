import math

import numpy as np
import pytest

from core.batch_processor import BatchProcessor
from core.errors import ConfigError, TrajectoryFormatError, TrajectoryRejected
from core.map_matcher import (
    HmmParams,
    MatchedPoint,
    TruckPoint,
    emission_prob,
    filter_low_quality,
    match_fleet,
    match_trajectory,
    transition_prob,
)
from core.oracles import brute_force_path
from core.road_graph import Direction, Projection, geo_distance, offset_lonlat
from helpers import ORIGIN


def fixes(truck_id, local_points, speed=20.0):
    """TruckPoints at local (east, north) positions, timed at `speed` along the polyline."""
    out, t, prev = [], 0.0, None
    for east, north in local_points:
        lonlat = offset_lonlat(ORIGIN, east, north)
        if prev is not None:
            t += geo_distance(prev, lonlat) / speed
        out.append(TruckPoint(truck_id, round(t, 3), *lonlat))
        prev = lonlat
    return out


def hyp(graph, segment_id, r, direction, t=0.0):
    return MatchedPoint("T", t, segment_id, r, direction, graph.interpolate(segment_id, r))


class TestEmission:
    def test_mode(self, hmm_params):
        proj = Projection("s", 0.5, 0.0, ORIGIN)
        assert emission_prob(proj, hmm_params) == pytest.approx(1.0 / (20.0 * math.sqrt(2 * math.pi)))

    def test_one_sigma(self, hmm_params):
        mode = emission_prob(Projection("s", 0.5, 0.0, ORIGIN), hmm_params)
        assert emission_prob(Projection("s", 0.5, 20.0, ORIGIN), hmm_params) == pytest.approx(mode * math.exp(-0.5))

    def test_monotone(self, hmm_params):
        near = emission_prob(Projection("s", 0.5, 10.0, ORIGIN), hmm_params)
        far = emission_prob(Projection("s", 0.5, 40.0, ORIGIN), hmm_params)
        assert near > far


class TestTransition:
    def test_along_along_is_best(self, line_graph, hmm_params):
        a = line_graph.interpolate("s1", 0.2)
        b = line_graph.interpolate("s1", 0.8)
        gap = (geo_distance(a, b), 30.0)
        probs = {
            (d1, d2): transition_prob(hyp(line_graph, "s1", 0.2, d1), hyp(line_graph, "s1", 0.8, d2, 30.0),
                                      gap, line_graph, hmm_params)
            for d1 in Direction for d2 in Direction
        }
        best = probs[(Direction.ALONG, Direction.ALONG)]
        assert best == pytest.approx(1.0, abs=1e-2)
        assert all(best > p for key, p in probs.items() if key != (Direction.ALONG, Direction.ALONG))

    def test_against_route_is_longer(self, line_graph):
        along = line_graph.route_between(("s1", 0.2, Direction.ALONG), ("s1", 0.8, Direction.ALONG))
        against = line_graph.route_between(("s1", 0.2, Direction.AGAINST), ("s1", 0.8, Direction.AGAINST))
        assert against.distance_m > along.distance_m

    def test_against_on_oneway_is_impossible(self, oneway_graph, hmm_params):
        prev = hyp(oneway_graph, "s1", 0.2, Direction.AGAINST)
        nxt = hyp(oneway_graph, "s1", 0.1, Direction.AGAINST, 15.0)
        assert transition_prob(prev, nxt, (100.0, 15.0), oneway_graph, hmm_params) == 0.0

    def test_non_positive_gap(self, line_graph, hmm_params):
        a = hyp(line_graph, "s1", 0.2, Direction.ALONG)
        with pytest.raises(ValueError):
            transition_prob(a, a, (0.0, 0.0), line_graph, hmm_params)


class TestFilter:
    def test_duplicates_and_jumps_dropped(self):
        pts = [
            TruckPoint("T", 0.0, *offset_lonlat(ORIGIN, 0.0, 0.0)),
            TruckPoint("T", 0.0, *offset_lonlat(ORIGIN, 5.0, 0.0)),
            TruckPoint("T", 15.0, *offset_lonlat(ORIGIN, 300.0, 0.0)),
            TruckPoint("T", 30.0, *offset_lonlat(ORIGIN, 5000.0, 0.0)),
            TruckPoint("T", 45.0, *offset_lonlat(ORIGIN, 600.0, 0.0)),
        ]
        kept, dropped = filter_low_quality(pts, max_speed_mps=50.0)
        assert [p.timestamp for p in kept] == [0.0, 15.0, 45.0]
        assert dropped == 2

    def test_unsorted_rejected(self):
        pts = [TruckPoint("T", 15.0, *ORIGIN), TruckPoint("T", 0.0, *ORIGIN)]
        with pytest.raises(TrajectoryFormatError):
            filter_low_quality(pts)


class TestMatchTrajectory:
    def test_clean_oneway(self, oneway_graph, hmm_params):
        pts = fixes("T", [(100, 0), (400, 0), (700, 0), (1300, 0), (1600, 0), (2200, 0)])
        matched = match_trajectory(pts, oneway_graph, hmm_params)
        assert [m.segment_id for m in matched] == ["s0", "s0", "s0", "s1", "s1", "s2"]
        assert all(m.dir == Direction.ALONG for m in matched)
        assert [m.r for m in matched[:3]] == sorted(m.r for m in matched[:3])

    def test_reverse_on_bidirectional(self, line_graph, hmm_params):
        pts = fixes("T", [(2700, 0), (2400, 0), (1800, 0), (1500, 0), (900, 0), (300, 0)])
        matched = match_trajectory(pts, line_graph, hmm_params)
        assert [m.segment_id for m in matched] == ["s2", "s2", "s1", "s1", "s0", "s0"]
        assert all(m.dir == Direction.AGAINST for m in matched)

    def test_never_against_on_oneway(self, junction_graph, hmm_params):
        pts = fixes("T", [(-800, 8), (-500, -5), (-20, 15), (300, -6), (700, 10), (1400, 4)])
        matched = match_trajectory(pts, junction_graph, hmm_params)
        for m in matched:
            assert junction_graph.arc_allowed(m.segment_id, m.dir)
        assert [m.segment_id for m in matched] == ["w", "w", "w", "e", "e", "e2"]

    def test_equals_brute_force(self, junction_graph, hmm_params):
        pts = fixes("T", [(-800, 8), (-500, -5), (-20, 15), (300, -6), (700, 10)])
        matched = match_trajectory(pts, junction_graph, hmm_params)
        assert [(m.segment_id, int(m.dir)) for m in matched] == brute_force_path(pts, junction_graph, hmm_params)

    def test_wider_radius_keeps_path(self, junction_graph):
        pts = fixes("T", [(-800, 8), (-500, -5), (-20, 15), (300, -6), (700, 10)])
        a = match_trajectory(pts, junction_graph, HmmParams(emission_sigma_m=20.0))
        b = match_trajectory(pts, junction_graph, HmmParams(emission_sigma_m=20.0, match_radius_m=60.0))
        assert [(m.segment_id, m.dir) for m in a] == [(m.segment_id, m.dir) for m in b]

    def test_points_off_network_are_skipped(self, line_graph, hmm_params):
        pts = fixes("T", [(100, 0), (400, 0), (700, 400), (1000, 0), (1300, 0)])
        matched = match_trajectory(pts, line_graph, hmm_params)
        assert len(matched) == 4
        assert all(m.dir == Direction.ALONG for m in matched)

    def test_deterministic(self, junction_graph, hmm_params):
        pts = fixes("T", [(-800, 8), (-500, -5), (-20, 15), (300, -6)])
        assert match_trajectory(pts, junction_graph, hmm_params) == match_trajectory(pts, junction_graph, hmm_params)

    def test_rejections(self, line_graph, hmm_params):
        with pytest.raises(TrajectoryRejected):
            match_trajectory([], line_graph, hmm_params)
        with pytest.raises(TrajectoryRejected, match="fewer than 2"):
            match_trajectory(fixes("T", [(100, 0)]), line_graph, hmm_params)
        with pytest.raises(TrajectoryRejected, match="matchable"):
            match_trajectory(fixes("T", [(100, 500), (400, 500), (700, 500)]), line_graph, hmm_params)

    def test_noisy_walk_recovers_segments(self, line_graph, hmm_params):
        rng = np.random.Generator(np.random.PCG64(11))
        truth = [50.0 + 150.0 * k for k in range(19)]
        pts = fixes("T", [(x + rng.normal(0, 8.0), rng.normal(0, 8.0)) for x in truth])
        matched = match_trajectory(pts, line_graph, hmm_params)
        # a truth point on a node may snap to either segment meeting there
        expected = {
            round(p.timestamp, 3): {f"s{min(int(near // 1000), 2)}" for near in (x - 25.0, x + 25.0)}
            for p, x in zip(pts, truth)
        }
        hits = sum(1 for m in matched if m.segment_id in expected[round(m.timestamp, 3)])
        assert hits >= 0.95 * len(pts)
        assert all(m.dir == Direction.ALONG for m in matched)


class TestParams:
    @pytest.mark.parametrize("kwargs", [
        {"emission_sigma_m": 0.0},
        {"match_radius_m": -1.0},
        {"max_skip": -1},
        {"backtrack_tolerance_m": -5.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            HmmParams(**kwargs)


def test_match_fleet_reports_rejections(line_graph, hmm_params):
    trajectories = {
        "good": fixes("good", [(100, 0), (400, 0), (700, 0)]),
        "lost": fixes("lost", [(100, 500), (400, 500)]),
    }
    matched, summary = match_fleet(trajectories, line_graph, hmm_params, BatchProcessor(max_workers=2))
    assert list(matched) == ["good"]
    assert summary["failed"] == 1
    assert summary["errors"][0].startswith("lost:")
