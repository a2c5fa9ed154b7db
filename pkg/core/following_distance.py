"""Network-constrained following distance between two trucks at one instant.

A pair only has a finite following distance when one truck (the follower)
can drive onto the other's segment (the leader) along a directed route
that ends on the leader's segment and never re-uses the follower's own
segment. Every leader/follower configuration of two trucks on adjacent,
opposite or merging carriageways reduces to that one route test.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Point
from shapely.strtree import STRtree

from .road_graph import EARTH_RADIUS_M, geo_distance, remaining_fraction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SnapshotTruck:
    """A matched truck at one timestep plus the segment facts FD needs."""

    truck_id: str
    point: object
    seglen_m: float
    to_node: str
    from_node: str
    road_class: str

    @classmethod
    def from_matched(cls, point, graph):
        seg = graph.segments[point.segment_id]
        return cls(
            truck_id=point.truck_id,
            point=point,
            seglen_m=seg.length_m,
            to_node=seg.heading_node(point.dir),
            from_node=seg.entry_node(point.dir),
            road_class=seg.road_class,
        )

    @property
    def segment_id(self):
        return self.point.segment_id

    @property
    def r(self):
        return self.point.r

    @property
    def dir(self):
        return self.point.dir

    @property
    def lonlat(self):
        return self.point.snapped_lonlat

    @property
    def arc(self):
        return (self.point.segment_id, self.point.dir)

    @property
    def reverse_arc(self):
        return (self.point.segment_id, self.point.dir.opposite)


@dataclass
class FollowVerdict:
    """Following distance with the identified roles and the reasons."""

    distance_m: float
    leader: str = None
    follower: str = None
    reasons: list = field(default_factory=list)

    @property
    def following(self):
        return math.isfinite(self.distance_m)


def theta_remaining(t):
    """Fraction of its segment still ahead of the truck."""
    return remaining_fraction(t.r, t.dir)


def _remaining_m(t):
    return t.seglen_m * theta_remaining(t)


def catch_up_distance(a, b, graph, cutoff=None):
    """Distance truck `a` must drive to reach truck `b`'s position."""
    if a.segment_id == b.segment_id and a.dir == b.dir:
        ahead = graph.along_distance(a.segment_id, a.r, b.r, a.dir)
        if ahead >= 0:
            return ahead
    leg = graph.route_between(a.point.position, b.point.position, cutoff=cutoff)
    return leg.distance_m


def _route_to(f, l, graph, cutoff):
    # ETE route between heading nodes, leaving f without a U-turn.
    # It ends with the whole leader segment, so the search reaches past it.
    return graph.ete_route(f.to_node, l.to_node, frozenset((f.reverse_arc,)), cutoff + l.seglen_m)


def _catch_up(f, l, route, cutoff, reasons):
    """Catch-up distance of `f` onto `l` along `route`, or None when not following."""
    path, dist = route
    pair = f"{f.truck_id}->{l.truck_id}"
    if not math.isfinite(dist):
        reasons.append(f"{pair}: no route within cutoff")
        return None
    if not path or path[-1] != l.segment_id:
        reasons.append(f"{pair}: route does not end on leader segment {l.segment_id}")
        return None
    if f.segment_id in path:
        reasons.append(f"{pair}: route re-uses follower segment {f.segment_id}")
        return None
    # the leader has not yet driven the part of its segment still ahead of it
    cd = _remaining_m(f) + dist - _remaining_m(l)
    if cd > cutoff:
        reasons.append(f"{pair}: catch-up distance {cd:.1f} m beyond cutoff {cutoff:.1f} m")
        return None
    reasons.append(f"{pair}: leader segment {l.segment_id} closes the route ({cd:.1f} m behind)")
    return cd


def following_verdict(a, b, graph, eps_m, ete_cutoff_m=None):
    """Following distance of `a` and `b` with the roles that produced it."""
    cutoff = ete_cutoff_m if ete_cutoff_m is not None else 3.0 * eps_m
    reasons = []

    if a.segment_id == b.segment_id:
        if a.dir != b.dir:
            reasons.append("same segment, opposite directions")
            return FollowVerdict(math.inf, reasons=reasons)
        gap = a.seglen_m * abs(a.r - b.r)
        if graph.along_distance(a.segment_id, a.r, b.r, a.dir) >= 0:
            leader, follower = b, a
        else:
            leader, follower = a, b
        reasons.append("same segment, same direction")
        return FollowVerdict(gap, leader.truck_id, follower.truck_id, reasons)

    options = []
    for f, l in ((a, b), (b, a)):
        cd = _catch_up(f, l, _route_to(f, l, graph, cutoff), cutoff, reasons)
        if cd is not None:
            options.append((cd, l.truck_id, f.truck_id))
    if not options:
        return FollowVerdict(math.inf, reasons=reasons)
    cd, leader, follower = min(options)
    return FollowVerdict(cd, leader, follower, reasons)


def following_distance(a, b, graph, eps_m, ete_cutoff_m=None):
    """Symmetric following distance in meters, ``inf`` when not following."""
    return following_verdict(a, b, graph, eps_m, ete_cutoff_m).distance_m


@dataclass
class FollowingMatrix:
    """Pairwise FD (meters) and leader index for one snapshot.

    `leader[i, j]` is the index of the leading truck of pair (i, j), or -1.
    """

    trucks: list
    distance_m: np.ndarray
    leader: np.ndarray


def close_pairs(lonlats, radius_m):
    """Index pairs ``i < j`` whose haversine distance is within `radius_m`."""
    if len(lonlats) < 2:
        return []
    points = [Point(lon, lat) for lon, lat in lonlats]
    max_lat = max(abs(lat) for _, lat in lonlats)
    # degree radius that over-covers the metric disc at every latitude present
    deg = math.degrees(radius_m / EARTH_RADIUS_M) * 1.05
    deg /= max(math.cos(math.radians(min(max_lat + deg, 89.999))), 1e-9)
    tree = STRtree(points)
    left, right = tree.query(points, predicate="dwithin", distance=deg)
    pairs = sorted({(int(i), int(j)) for i, j in zip(left, right) if i < j})
    return [(i, j) for i, j in pairs if geo_distance(lonlats[i], lonlats[j]) <= radius_m]


def following_matrix(snapshot, graph, eps_m, ete_cutoff_m=None):
    """FD for every pair closer than `eps_m` as the crow flies."""
    trucks = sorted(snapshot, key=lambda t: t.truck_id)
    n = len(trucks)
    dist = np.full((n, n), np.inf)
    leader = np.full((n, n), -1, dtype=int)
    if n == 0:
        return FollowingMatrix(trucks, dist, leader)
    np.fill_diagonal(dist, 0.0)
    index = {t.truck_id: i for i, t in enumerate(trucks)}
    for i, j in close_pairs([t.lonlat for t in trucks], eps_m):
        verdict = following_verdict(trucks[i], trucks[j], graph, eps_m, ete_cutoff_m)
        if verdict.following:
            dist[i, j] = dist[j, i] = verdict.distance_m
            leader[i, j] = leader[j, i] = index[verdict.leader]
    return FollowingMatrix(trucks, dist, leader)
