"""Synthetic networks and trajectories with planted platoons.

Every scenario is a pure function of its `ScenarioSpec`: randomness comes
from one numpy ``Generator(PCG64(seed))`` whose draws happen in a fixed
order, so a seed reproduces the same files on every platform.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import LineString

from .errors import ConfigError
from .following_distance import SnapshotTruck
from .map_matcher import MatchedPoint, TruckPoint
from .resampler import Snapshot
from .road_graph import Direction, RoadGraph, RoadNode, RoadSegment, offset_lonlat, polyline_length

logger = logging.getLogger(__name__)

TEMPLATES = ("line", "grid", "junction", "parallel")

# lateral spacing of the parallel-corridor carriageways
PARALLEL_OFFSET_M = 30.0
# along-route spacing of background trucks, beyond any FD cutoff
BACKGROUND_SPACING_M = 3000.0
# distance kept from a route's first node
ROUTE_MARGIN_M = 50.0


@dataclass(frozen=True)
class PlantedPlatoon:
    members: int = 3
    start_step: int = 0
    end_step: int = 20
    headway_m: float = 100.0
    route: int = 0

    def __post_init__(self):
        if self.members < 2:
            raise ConfigError("planted platoon needs at least 2 members")
        if self.end_step <= self.start_step or self.start_step < 0:
            raise ConfigError("planted platoon needs 0 <= start_step < end_step")
        if not self.headway_m > 0:
            raise ConfigError("planted platoon headway_m must be positive")


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 7
    template: str = "line"
    n_background: int = 2
    n_segments: int = 10
    segment_length_m: float = 1000.0
    speed_mps: float = 22.0
    gps_sigma_m: float = 0.0
    jitter_s: float = 0.0
    dropout: float = 0.0
    sample_interval_s: float = 15.0
    start_time_s: float = 1699999995.0
    platoons: tuple = (PlantedPlatoon(),)
    eps_km: float = 1.0
    origin: tuple = (121.5, 41.8)

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ConfigError(f"unknown template {self.template!r}; expected one of {', '.join(TEMPLATES)}")
        if self.n_segments < 2:
            raise ConfigError("synth.n_segments must be >= 2")
        if not (self.segment_length_m > 0 and self.speed_mps > 0 and self.sample_interval_s > 0):
            raise ConfigError("synth lengths, speed and sampling interval must be positive")
        if self.gps_sigma_m < 0 or self.n_background < 0:
            raise ConfigError("synth.gps_sigma_m and synth.n_background must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("synth.dropout must lie in [0, 1)")
        if not 0 <= self.jitter_s < self.sample_interval_s / 2:
            raise ConfigError("synth.jitter_s must lie in [0, sample_interval_s / 2)")
        for p in self.platoons:
            if p.headway_m >= self.eps_km * 1000.0:
                raise ConfigError(f"infeasible scenario: headway {p.headway_m} m is not below eps")

    @classmethod
    def from_dict(cls, data):
        """Build from a settings-style dict (``platoons`` as a list of dicts)."""
        data = dict(data)
        platoons = data.pop("platoons", None)
        if platoons is not None:
            data["platoons"] = tuple(PlantedPlatoon(**p) for p in platoons)
        if "origin" in data:
            data["origin"] = tuple(data["origin"])
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"invalid scenario: {e}") from e

    def to_dict(self):
        data = asdict(self)
        data["platoons"] = [asdict(p) for p in self.platoons]
        data["origin"] = list(self.origin)
        return data

    def timestamp(self, step):
        return self.start_time_s + step * self.sample_interval_s

    @property
    def horizon_steps(self):
        return max((p.end_step for p in self.platoons), default=20)


@dataclass
class GroundTruth:
    """What the generator planted, expressed on the pipeline grid."""

    dt_grid_s: float
    sets_by_step: dict = field(default_factory=dict)
    patterns: list = field(default_factory=list)
    durations_s: list = field(default_factory=list)
    distances_km: list = field(default_factory=list)
    routes: dict = field(default_factory=dict)
    busiest_segment: str = None

    def to_dict(self):
        return {
            "dt_grid_s": self.dt_grid_s,
            "sets_by_step": {str(t): [list(s) for s in sets] for t, sets in sorted(self.sets_by_step.items())},
            "patterns": [
                {"trucks": list(trucks), "timesteps": list(steps), "duration_s": d, "distance_km": km}
                for (trucks, steps), d, km in zip(self.patterns, self.durations_s, self.distances_km)
            ],
            "routes": {truck: route for truck, route in sorted(self.routes.items())},
            "busiest_segment": self.busiest_segment,
        }


class RoutePath:
    """A directed route over whole arcs, addressable by distance along it."""

    def __init__(self, graph, arcs):
        self.graph = graph
        self.arcs = tuple(arcs)
        lengths = [graph.segments[sid].length_m for sid, _ in self.arcs]
        self.cum = np.concatenate(([0.0], np.cumsum(lengths)))

    @property
    def length_m(self):
        return float(self.cum[-1])

    def locate(self, s):
        """``(segment_id, r, dir)`` at `s` meters from the route start."""
        s = min(max(s, 0.0), self.length_m)
        i = int(np.searchsorted(self.cum, s, side="right")) - 1
        i = min(max(i, 0), len(self.arcs) - 1)
        seg_id, direction = self.arcs[i]
        f = (s - self.cum[i]) / (self.cum[i + 1] - self.cum[i])
        r = f if direction == Direction.ALONG else 1.0 - f
        return seg_id, min(max(r, 0.0), 1.0), direction

    def lonlat(self, s):
        seg_id, r, _ = self.locate(s)
        return self.graph.interpolate(seg_id, r)


def _segment(seg_id, a, b, road_class, oneway):
    geometry = LineString([(a.lon, a.lat), (b.lon, b.lat)])
    return RoadSegment(seg_id, a.node_id, b.node_id, polyline_length(geometry.coords),
                       road_class, oneway, geometry)


def _place(prefix, points, nodes):
    ids = []
    for k, lonlat in enumerate(points):
        node_id = f"{prefix}{k}"
        nodes[node_id] = RoadNode(node_id, *lonlat)
        ids.append(node_id)
    return ids


def _link(prefix, ids, road_class, oneway, nodes, segments):
    # consecutive nodes joined by segments; returns the ALONG arcs
    arcs = []
    for k in range(len(ids) - 1):
        seg_id = f"{prefix}{k}-{k + 1}"
        segments[seg_id] = _segment(seg_id, nodes[ids[k]], nodes[ids[k + 1]], road_class, oneway)
        arcs.append((seg_id, Direction.ALONG))
    return arcs


def _chain(prefix, points, road_class, oneway, nodes, segments):
    ids = _place(prefix, points, nodes)
    return ids, _link(prefix, ids, road_class, oneway, nodes, segments)


def _reverse(arcs):
    return [(sid, d.opposite) for sid, d in reversed(arcs)]


def build_template(spec):
    """Road graph plus ``(platoon_routes, background_route)`` arc lists."""
    n, length, origin = spec.n_segments, spec.segment_length_m, spec.origin
    at = lambda east, north: offset_lonlat(origin, east, north)
    nodes, segments = {}, {}

    if spec.template == "line":
        _, arcs = _chain("n", [at(k * length, 0.0) for k in range(n + 1)], "trunk", False, nodes, segments)
        routes, background = [arcs], _reverse(arcs)

    elif spec.template == "parallel":
        xs = [k * length for k in range(n + 1)]
        _, eastbound = _chain("e", [at(x, 0.0) for x in xs], "expressway", True, nodes, segments)
        _, westbound = _chain("w", [at(x, -PARALLEL_OFFSET_M) for x in reversed(xs)],
                              "expressway", True, nodes, segments)
        _, trunk = _chain("t", [at(x, PARALLEL_OFFSET_M) for x in xs], "trunk", False, nodes, segments)
        routes, background = [eastbound, trunk], westbound

    elif spec.template == "junction":
        half = max(n // 2, 1)
        west_ids, west = _chain("w", [at((k - half) * length, 0.0) for k in range(half + 1)],
                                "trunk", False, nodes, segments)
        junction = west_ids[-1]
        south_ids = _place("s", [at(0.0, (k - half) * length) for k in range(half)], nodes) + [junction]
        south = _link("s", south_ids, "trunk", False, nodes, segments)
        east_ids = [junction] + _place("x", [at((k + 1) * length, 0.0) for k in range(n - half)], nodes)
        east = _link("x", east_ids, "trunk", False, nodes, segments)
        routes, background = [west + east, south + east], _reverse(west + east)

    else:  # grid
        rows = 3
        grid = {}
        for i in range(rows):
            for k in range(n + 1):
                node_id = f"g{i}_{k}"
                nodes[node_id] = RoadNode(node_id, *at(k * length, i * length))
                grid[i, k] = node_id
        row_arcs = []
        for i in range(rows):
            arcs = []
            for k in range(n):
                seg_id = f"h{i}_{k}"
                segments[seg_id] = _segment(seg_id, nodes[grid[i, k]], nodes[grid[i, k + 1]], "trunk", False)
                arcs.append((seg_id, Direction.ALONG))
            row_arcs.append(arcs)
        col_arcs = {}
        for i in range(rows - 1):
            for k in range(n + 1):
                seg_id = f"v{i}_{k}"
                segments[seg_id] = _segment(seg_id, nodes[grid[i, k]], nodes[grid[i + 1, k]], "trunk", False)
                col_arcs[i, k] = (seg_id, Direction.ALONG)
        # up the first column, then east along the top row
        climb = [col_arcs[i, 0] for i in range(rows - 1)] + row_arcs[rows - 1]
        routes, background = [row_arcs[0], climb], _reverse(row_arcs[0])

    graph = RoadGraph(nodes.values(), segments.values())
    return graph, [RoutePath(graph, r) for r in routes], RoutePath(graph, background)


def _planted_motion(spec, routes):
    # truck id -> (route, s at t_on, t_on, t_off)
    motion = {}
    for p_idx, p in enumerate(spec.platoons):
        if not 0 <= p.route < len(routes):
            raise ConfigError(f"platoon {p_idx}: template {spec.template!r} has no route {p.route}")
        route = routes[p.route]
        t_on, t_off = spec.timestamp(p.start_step), spec.timestamp(p.end_step)
        lead = ROUTE_MARGIN_M + (p.members - 1) * p.headway_m
        if lead + spec.speed_mps * (t_off - t_on) > route.length_m - ROUTE_MARGIN_M:
            raise ConfigError(f"infeasible scenario: platoon {p_idx} runs off its route")
        for i in range(p.members):
            motion[f"P{p_idx:02d}-{i:02d}"] = (route, lead - i * p.headway_m, t_on, t_off)
    return motion


def _background_motion(spec, route):
    motion = {}
    t_on, t_off = spec.timestamp(0), spec.timestamp(spec.horizon_steps)
    for j in range(spec.n_background):
        start = ROUTE_MARGIN_M + j * BACKGROUND_SPACING_M
        if start + spec.speed_mps * (t_off - t_on) > route.length_m - ROUTE_MARGIN_M:
            raise ConfigError(f"infeasible scenario: background truck {j} does not fit the template")
        motion[f"B{j:03d}"] = (route, start, t_on, t_off)
    return motion


def generate(spec, dt_grid_s=15.0):
    """Return ``(graph, trajectories, truth)`` for `spec`.

    Fixes are taken every `sample_interval_s` while a truck is on the road,
    optionally jittered in time, thinned by dropout (the first and last fix
    always stay) and displaced by isotropic Gaussian noise after the true
    position is captured.
    """
    graph, routes, background = build_template(spec)
    motion = _planted_motion(spec, routes)
    motion.update(_background_motion(spec, background))
    rng = np.random.Generator(np.random.PCG64(spec.seed))

    trajectories = {}
    for truck in sorted(motion):
        route, s0, t_on, t_off = motion[truck]
        n_fixes = int(round((t_off - t_on) / spec.sample_interval_s)) + 1
        points = []
        for k in range(n_fixes):
            jitter, drop, east, north = rng.uniform(-1, 1), rng.random(), rng.normal(), rng.normal()
            edge = k in (0, n_fixes - 1)
            ts = t_on + k * spec.sample_interval_s + (0.0 if edge else jitter * spec.jitter_s)
            if not edge and drop < spec.dropout:
                continue
            true_lonlat = route.lonlat(s0 + spec.speed_mps * (ts - t_on))
            lon, lat = offset_lonlat(true_lonlat, east * spec.gps_sigma_m, north * spec.gps_sigma_m)
            points.append(TruckPoint(truck, ts, lon, lat, 0.0, spec.speed_mps))
        trajectories[truck] = points

    truth = _ground_truth(spec, motion, dt_grid_s)
    logger.info("Generated %s scenario: %d trucks, %d fixes, %d planted platoons",
                spec.template, len(trajectories), sum(len(v) for v in trajectories.values()),
                len(spec.platoons))
    return graph, trajectories, truth


def _grid_steps(t_on, t_off, dt_grid_s):
    return range(math.ceil(t_on / dt_grid_s - 1e-9), math.floor(t_off / dt_grid_s + 1e-9) + 1)


def _ground_truth(spec, motion, dt_grid_s):
    truth = GroundTruth(dt_grid_s)
    counts = {}
    for p_idx, p in enumerate(spec.platoons):
        members = tuple(f"P{p_idx:02d}-{i:02d}" for i in range(p.members))
        route, s0, t_on, t_off = motion[members[0]]
        steps = tuple(_grid_steps(t_on, t_off, dt_grid_s))
        for t in steps:
            truth.sets_by_step.setdefault(t, []).append(members)
            for truck in members:
                _, m_s0, _, _ = motion[truck]
                seg_id, _, _ = route.locate(m_s0 + spec.speed_mps * (t * dt_grid_s - t_on))
                counts[seg_id] = counts.get(seg_id, 0) + 1
        truth.patterns.append((tuple(sorted(members)), steps))
        truth.durations_s.append(len(steps) * dt_grid_s)
        truth.distances_km.append(spec.speed_mps * dt_grid_s * (len(steps) - 1) / 1000.0)
    for t in truth.sets_by_step:
        truth.sets_by_step[t].sort()
    for truck, (route, *_rest) in motion.items():
        truth.routes[truck] = [sid for sid, _ in route.arcs]
    if counts:
        truth.busiest_segment = min(counts, key=lambda sid: (-counts[sid], sid))
    return truth


def write_scenario(spec, out_dir, dt_grid_s=15.0):
    """Write nodes/edges/trajectories CSV, the scenario and its ground truth."""
    from .file_ops import atomic_write_text, write_trajectories
    from .road_graph import write_network

    out_dir = Path(out_dir)
    graph, trajectories, truth = generate(spec, dt_grid_s)
    write_network(graph, out_dir)
    write_trajectories(trajectories, out_dir / "trajectories.csv")
    atomic_write_text(out_dir / "scenario.json", json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "ground_truth.json", json.dumps(truth.to_dict(), indent=2, sort_keys=True) + "\n")
    return graph, trajectories, truth


# --- random fixtures for the oracle suites ----------------------------------

def random_snapshot(rng, graph, n_trucks, timestep=0):
    """`n_trucks` trucks at uniform random legal positions of `graph`."""
    arcs = sorted(
        (sid, d) for sid in graph.segments for d in (Direction.ALONG, Direction.AGAINST)
        if graph.arc_allowed(sid, d)
    )
    trucks = []
    for i in range(n_trucks):
        seg_id, direction = arcs[int(rng.integers(len(arcs)))]
        r = float(rng.uniform(0.02, 0.98))
        point = MatchedPoint(f"T{i:03d}", 0.0, seg_id, r, direction, graph.interpolate(seg_id, r))
        trucks.append(SnapshotTruck.from_matched(point, graph))
    return Snapshot(timestep, tuple(sorted(trucks, key=lambda t: t.truck_id)))


def random_partitions(rng, n_trucks, n_timesteps, max_groups=3, presence=0.8):
    """Random per-timestep partitions of trucks into groups of >= 2."""
    trucks = [f"T{i}" for i in range(n_trucks)]
    sets_by_step = {}
    for t in range(n_timesteps):
        present = [x for x in trucks if rng.random() < presence]
        labels = rng.integers(0, max_groups, size=len(present))
        groups = []
        for g in range(max_groups):
            members = tuple(x for x, label in zip(present, labels) if label == g)
            if len(members) >= 2:
                groups.append(members)
        sets_by_step[t] = sorted(groups)
    return sets_by_step
