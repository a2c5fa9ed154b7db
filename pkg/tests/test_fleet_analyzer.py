import pytest

from core.aoptics import CoDrivingSet
from core.fleet_analyzer import (
    FleetAnalyzer,
    FleetMetrics,
    aggregate_windows,
    haul_distance_breakdown,
    highway_share,
    hotspots_geojson,
    ich,
    icr,
    ics,
    pdr_ptr,
    segment_hotspots,
    timestep_metrics,
)
from core.pattern_miner import PlatoonPattern
from core.resampler import GriddedPoint
from core.road_graph import Direction


def track(truck_id, steps, segment_id="s1", metres_per_step=300.0):
    return {
        k: GriddedPoint(truck_id, 15.0 * k, segment_id, 0.5, Direction.ALONG, (0.0, 0.0),
                        step=k, odometer_m=metres_per_step * k)
        for k in steps
    }


def convoy(t, members, road_class="expressway", headway=100.0):
    return CoDrivingSet(t, tuple(members), road_class, tuple(headway * k for k in range(len(members))))


class TestSnapshotRatios:
    def test_icr(self):
        assert icr([convoy(0, "ABC")], 10) == pytest.approx(0.3)
        assert icr([], 5) == 0.0
        assert icr([], 0) is None

    def test_ich_per_member_and_per_gap(self):
        sets = [convoy(0, "ABCD")]
        assert ich(sets) == pytest.approx(75.0)
        assert ich(sets, per_gap=True) == pytest.approx(100.0)
        assert ich([]) is None

    def test_ics(self):
        assert ics([convoy(0, "ABCD"), convoy(0, "EF")]) == 3.0
        assert ics([]) is None


class TestTimestepMetrics:
    @pytest.fixture
    def per_step(self):
        sets_by_step = {t: [convoy(t, "AB"), convoy(t, "CDE", "trunk")] for t in range(0, 40, 3)}
        availability = {t: {"all": 10, "expressway": 6, "trunk": 4} for t in range(40)}
        return timestep_metrics(sets_by_step, availability)

    def test_rows_per_class(self, per_step):
        first = [m for m in per_step if m.timestep == 0]
        assert [m.road_class for m in first] == ["all", "expressway", "trunk"]
        assert first[0].icr == pytest.approx(0.5)
        assert first[1].icr == pytest.approx(2 / 6)
        assert first[2].ics == 3.0
        assert first[2].ich_m == pytest.approx(200.0 / 3)

    def test_empty_step(self, per_step):
        quiet = next(m for m in per_step if m.timestep == 1 and m.road_class == "all")
        assert quiet.icr == 0.0
        assert quiet.ich_m is None
        assert quiet.ics is None

    def test_nested_windows_aggregate_exactly(self, per_step):
        assert aggregate_windows(aggregate_windows(per_step, 4), 20) == aggregate_windows(per_step, 20)

    def test_window_labels(self, per_step):
        windows = aggregate_windows(per_step, 20)
        assert [(w.timestep, w.road_class) for w in windows] == [
            (0, "all"), (0, "expressway"), (0, "trunk"), (20, "all"), (20, "expressway"), (20, "trunk")]
        assert windows[0].n_total == 200


class TestPdrPtr:
    def test_partial_trip(self):
        fleet = pdr_ptr([PlatoonPattern(("A", "B"), tuple(range(5)))], {"A": track("A", range(10))})
        assert fleet.d_m["A"] == pytest.approx(2700.0)
        assert fleet.pd_m["A"] == pytest.approx(1500.0)
        assert fleet.pdr == pytest.approx(1500.0 / 2700.0)
        assert fleet.ptr == pytest.approx(0.5)

    def test_full_trip(self):
        fleet = pdr_ptr([PlatoonPattern(("A", "B"), tuple(range(10)))], {"A": track("A", range(10))})
        assert fleet.pdr == pytest.approx(1.0)
        assert fleet.ptr == pytest.approx(1.0)

    def test_overlapping_patterns_count_once(self):
        patterns = [PlatoonPattern(("A", "B"), tuple(range(5))), PlatoonPattern(("A", "C"), (3, 4, 5, 6))]
        fleet = pdr_ptr(patterns, {"A": track("A", range(10))})
        assert fleet.pd_m["A"] == pytest.approx(2100.0)
        assert fleet.pt_s["A"] == pytest.approx(105.0)

    def test_no_patterns(self):
        fleet = pdr_ptr([], {"A": track("A", range(10))})
        assert fleet.pdr == 0.0
        assert pdr_ptr([], {}).pdr is None

    def test_haul_breakdown(self):
        fleet = FleetMetrics(
            pd_m={"A": 50_000.0, "B": 0.0, "C": 60_000.0},
            pt_s={"A": 1.0, "B": 0.0, "C": 1.0},
            d_m={"A": 150_000.0, "B": 50_000.0, "C": 120_000.0},
            t_s={"A": 2.0, "B": 1.0, "C": 2.0},
        )
        rows = haul_distance_breakdown(fleet)
        assert [(start, n) for start, n, _, _ in rows] == [(0.0, 1), (100.0, 2)]
        assert rows[1][2] == pytest.approx(110.0 / 270.0)
        assert rows[0][2] == 0.0


class TestHotspots:
    def test_counts_memberships(self, line_graph):
        gridded = {"A": track("A", range(4)), "B": track("B", range(4))}
        hotspots = segment_hotspots([PlatoonPattern(("A", "B"), tuple(range(4)))], gridded, line_graph)
        assert hotspots == [("s1", 8), ("s0", 0), ("s2", 0)]

    def test_every_segment_listed(self, line_graph):
        assert segment_hotspots([], {}, line_graph) == [("s0", 0), ("s1", 0), ("s2", 0)]

    def test_geojson(self, line_graph):
        doc = hotspots_geojson([("s1", 8), ("s0", 0)], line_graph)
        assert doc["type"] == "FeatureCollection"
        assert [f["properties"]["count"] for f in doc["features"]] == [8, 0]
        assert doc["features"][0]["geometry"]["type"] == "LineString"


def test_highway_share():
    shares = highway_share({0: {"all": 4, "expressway": 3, "trunk": 1}, 1: {"all": 0}})
    assert shares[0] == {"expressway": 0.75, "trunk": 0.25}
    assert shares[1] == {"expressway": None, "trunk": None}


def test_analyze_reports_headline_stats():
    sets_by_step = {t: [convoy(t, "AB")] for t in range(5)}
    availability = {t: {"all": 3, "expressway": 3, "trunk": 0} for t in range(10)}
    gridded = {x: track(x, range(10)) for x in "ABC"}
    report = FleetAnalyzer().analyze([PlatoonPattern(("A", "B"), tuple(range(5)))], sets_by_step,
                                     availability, gridded)
    stats = report["stats"]
    assert stats["n_trucks"] == 3
    assert stats["n_patterns"] == 1
    assert stats["codriving_truck_share"] == pytest.approx(2 / 3)
    assert stats["expressway_share"] == 1.0
    assert stats["pdr"] == pytest.approx(3000.0 / 8100.0)
    assert set(report) == {"stats", "timestep_metrics", "windows", "fleet", "haul_breakdown", "highway_share"}
