import math

import numpy as np
import pytest

from core.following_distance import (
    catch_up_distance,
    close_pairs,
    following_distance,
    following_matrix,
    following_verdict,
    theta_remaining,
)
from core.road_graph import Direction, offset_lonlat
from core.synth import random_snapshot
from helpers import ORIGIN, build_graph, place, snapshot

EPS_M = 1000.0


class TestSameSegment:
    def test_gap_along_segment(self, line_graph):
        a = place(line_graph, "A", "s1", 0.2)
        b = place(line_graph, "B", "s1", 0.7)
        verdict = following_verdict(a, b, line_graph, EPS_M)
        assert verdict.distance_m == pytest.approx(500.0, abs=0.5)
        assert (verdict.leader, verdict.follower) == ("B", "A")

    def test_leader_flips_with_direction(self, line_graph):
        a = place(line_graph, "A", "s1", 0.2, Direction.AGAINST)
        b = place(line_graph, "B", "s1", 0.7, Direction.AGAINST)
        verdict = following_verdict(a, b, line_graph, EPS_M)
        assert (verdict.leader, verdict.follower) == ("A", "B")

    def test_opposite_directions(self, line_graph):
        a = place(line_graph, "A", "s1", 0.2)
        b = place(line_graph, "B", "s1", 0.7, Direction.AGAINST)
        assert following_distance(a, b, line_graph, EPS_M) == math.inf


class TestAcrossNodes:
    def test_follower_behind_node(self, line_graph):
        a = place(line_graph, "A", "s0", 0.9)
        b = place(line_graph, "B", "s1", 0.05)
        verdict = following_verdict(a, b, line_graph, EPS_M)
        assert verdict.distance_m == pytest.approx(150.0, abs=0.5)
        assert (verdict.leader, verdict.follower) == ("B", "A")
        assert catch_up_distance(a, b, line_graph) == pytest.approx(150.0, abs=0.5)

    def test_face_to_face(self, line_graph):
        a = place(line_graph, "A", "s0", 0.9)
        b = place(line_graph, "B", "s1", 0.05, Direction.AGAINST)
        verdict = following_verdict(a, b, line_graph, EPS_M)
        assert verdict.distance_m == math.inf
        assert verdict.leader is None
        assert verdict.reasons

    def test_moving_apart(self, line_graph):
        a = place(line_graph, "A", "s0", 0.9, Direction.AGAINST)
        b = place(line_graph, "B", "s1", 0.05)
        assert following_distance(a, b, line_graph, EPS_M) == math.inf

    def test_merge_onto_expressway(self, junction_graph):
        lead = place(junction_graph, "L", "e", 0.3)
        from_west = place(junction_graph, "F", "w", 0.8)
        from_south = place(junction_graph, "G", "s", 0.9)
        assert following_distance(from_west, lead, junction_graph, EPS_M) == pytest.approx(500.0, abs=1.0)
        assert following_distance(from_south, lead, junction_graph, EPS_M) == pytest.approx(400.0, abs=1.0)

    def test_converging_approaches_do_not_follow(self, junction_graph):
        from_west = place(junction_graph, "F", "w", 0.8)
        from_south = place(junction_graph, "G", "s", 0.9)
        assert following_distance(from_west, from_south, junction_graph, EPS_M) == math.inf

    def test_cutoff_limits_catch_up_distance(self, junction_graph):
        lead = place(junction_graph, "L", "e", 0.3)
        follower = place(junction_graph, "F", "w", 0.8)
        # 200 m to the junction plus 300 m onto e
        close = following_distance(follower, lead, junction_graph, EPS_M, ete_cutoff_m=520.0)
        assert close == pytest.approx(500.0, abs=1.0)
        assert following_distance(follower, lead, junction_graph, EPS_M, ete_cutoff_m=400.0) == math.inf

    def test_parallel_roads_never_follow(self, parallel_graph):
        a = place(parallel_graph, "A", "exp", 0.5)
        b = place(parallel_graph, "B", "trk", 0.45)
        assert following_distance(a, b, parallel_graph, EPS_M) == math.inf


class TestMatrix:
    def test_matrix_entries(self, line_graph):
        snap = snapshot(
            place(line_graph, "C", "s2", 0.9),
            place(line_graph, "A", "s0", 0.9),
            place(line_graph, "B", "s1", 0.05),
        )
        fm = following_matrix(snap, line_graph, EPS_M)
        assert [t.truck_id for t in fm.trucks] == ["A", "B", "C"]
        assert np.all(np.diag(fm.distance_m) == 0.0)
        assert fm.distance_m[0, 1] == pytest.approx(150.0, abs=0.5)
        assert fm.distance_m[1, 0] == fm.distance_m[0, 1]
        assert fm.leader[0, 1] == 1
        assert fm.distance_m[0, 2] == math.inf
        assert fm.leader[0, 2] == -1

    def test_empty_snapshot(self, line_graph):
        fm = following_matrix(snapshot(), line_graph, EPS_M)
        assert fm.distance_m.shape == (0, 0)

    def test_close_pairs(self):
        lonlats = [offset_lonlat(ORIGIN, 0.0, 0.0), offset_lonlat(ORIGIN, 900.0, 0.0),
                   offset_lonlat(ORIGIN, 2500.0, 0.0)]
        assert close_pairs(lonlats, 1000.0) == [(0, 1)]
        assert close_pairs(lonlats[:1], 1000.0) == []


def test_symmetric_on_random_pairs(junction_graph):
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(100):
        a, b = random_snapshot(rng, junction_graph, 2)
        assert following_distance(a, b, junction_graph, EPS_M) == following_distance(b, a, junction_graph, EPS_M)


@pytest.mark.parametrize("r, direction, expected", [
    (0.3, Direction.ALONG, 0.7),
    (0.3, Direction.AGAINST, 0.3),
    (1.0, Direction.ALONG, 0.0),
])
def test_theta_remaining(line_graph, r, direction, expected):
    assert theta_remaining(place(line_graph, "A", "s1", r, direction)) == pytest.approx(expected)


class TestLongSegments:
    """Leader segments longer than the cutoff; only the gap between the trucks counts."""

    @staticmethod
    def two_segments(short_m, long_m, road_class, oneway):
        points = {"p0": (0.0, 0.0), "p1": (short_m, 0.0), "p2": (short_m + long_m, 0.0)}
        edges = [("A", "p0", "p1", road_class, oneway), ("B", "p1", "p2", road_class, oneway)]
        return build_graph(points, edges)

    def test_trunk_leader_just_past_node(self):
        graph = self.two_segments(1000.0, 5000.0, "trunk", False)
        follower = place(graph, "F", "A", 0.95)
        leader = place(graph, "L", "B", 0.01)
        verdict = following_verdict(follower, leader, graph, EPS_M)
        assert verdict.distance_m == pytest.approx(100.0, abs=1.0)
        assert (verdict.leader, verdict.follower) == ("L", "F")

    def test_expressway_leader_just_past_node(self):
        graph = self.two_segments(1000.0, 3500.0, "expressway", True)
        follower = place(graph, "F", "A", 0.9)
        leader = place(graph, "L", "B", 0.02)
        assert following_distance(follower, leader, graph, EPS_M) == pytest.approx(170.0, abs=1.0)
        assert following_distance(leader, follower, graph, EPS_M) == pytest.approx(170.0, abs=1.0)

    def test_leader_far_down_long_segment(self):
        graph = self.two_segments(1000.0, 5000.0, "trunk", False)
        follower = place(graph, "F", "A", 0.95)
        leader = place(graph, "L", "B", 0.9)
        # 50 m + 4500 m is past the 3 km cutoff
        assert following_distance(follower, leader, graph, EPS_M) == math.inf
