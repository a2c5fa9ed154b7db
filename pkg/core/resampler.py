"""Resample matched trajectories onto the shared time grid.

Grid step k is the instant ``k * dt_grid_s`` seconds since the epoch, so
every truck lands on the same instants without a negotiated origin.
"""

import bisect
import logging
import math
from collections import defaultdict
from dataclasses import dataclass

from .following_distance import SnapshotTruck
from .map_matcher import MatchedPoint
from .road_graph import ROAD_CLASSES, remaining_fraction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GriddedPoint(MatchedPoint):
    step: int = 0
    odometer_m: float = 0.0


@dataclass(frozen=True)
class Snapshot:
    timestep: int
    trucks: tuple

    def __len__(self):
        return len(self.trucks)

    def __iter__(self):
        return iter(self.trucks)


def _pieces(graph, a, b, leg):
    # (segment_id, dir, r_start, r_end, length_m) pieces of one leg
    seg_a = graph.segments[a.segment_id]
    seg_b = graph.segments[b.segment_id]
    end_a = 1.0 if a.dir == 0 else 0.0
    pieces = [(a.segment_id, a.dir, a.r, end_a, seg_a.length_m * remaining_fraction(a.r, a.dir))]
    for seg_id, direction in leg.arcs:
        seg = graph.segments[seg_id]
        r0, r1 = (0.0, 1.0) if direction == 0 else (1.0, 0.0)
        pieces.append((seg_id, direction, r0, r1, seg.length_m))
    start_b = 0.0 if b.dir == 0 else 1.0
    pieces.append((b.segment_id, b.dir, start_b, b.r,
                   seg_b.length_m * (1.0 - remaining_fraction(b.r, b.dir))))
    return pieces


def _walk(pieces, travelled):
    # position after `travelled` meters along the pieces
    for k, (seg_id, direction, r0, r1, length) in enumerate(pieces):
        if travelled <= length or k == len(pieces) - 1:
            f = travelled / length if length > 0 else 1.0
            f = min(max(f, 0.0), 1.0)
            return seg_id, direction, r0 + f * (r1 - r0)
        travelled -= length


def resample(matched, graph, dt_grid_s=15.0, staleness_s=30.0, hmm_params=None):
    """Positions of one truck at every grid instant it is active.

    A grid instant between two fixes is active when the fixes are at most
    `staleness_s` apart and a directed route joins them; the position is
    interpolated along that route and altitude linearly in time.
    """
    points = sorted(matched, key=lambda p: p.timestamp)
    if not points:
        return []
    tolerance = hmm_params.backtrack_tolerance_m if hmm_params else 0.0
    cutoff = hmm_params.max_route_m if hmm_params else None

    legs = []
    odometer = [0.0]
    for a, b in zip(points[:-1], points[1:]):
        leg = graph.route_between(a.position, b.position, cutoff=cutoff,
                                  backtrack_tolerance_m=tolerance)
        legs.append(leg)
        odometer.append(odometer[-1] + (leg.distance_m if math.isfinite(leg.distance_m) else 0.0))

    times = [p.timestamp for p in points]
    first = math.ceil(times[0] / dt_grid_s - 1e-9)
    last = math.floor(times[-1] / dt_grid_s + 1e-9)
    out = []
    for step in range(first, last + 1):
        instant = step * dt_grid_s
        i = bisect.bisect_right(times, instant + 1e-6) - 1
        p = points[i]
        if abs(p.timestamp - instant) <= 1e-6:
            out.append(GriddedPoint(p.truck_id, instant, p.segment_id, p.r, p.dir,
                                    p.snapped_lonlat, p.altitude_m, step, odometer[i]))
            continue
        if i + 1 >= len(points):
            continue
        q, leg = points[i + 1], legs[i]
        span = q.timestamp - p.timestamp
        if span > staleness_s or not math.isfinite(leg.distance_m):
            continue
        f = (instant - p.timestamp) / span
        travelled = f * leg.distance_m
        if leg.direct:
            seg_id, direction, r = p.segment_id, p.dir, p.r + f * (q.r - p.r)
        else:
            seg_id, direction, r = _walk(_pieces(graph, p, q, leg), travelled)
        out.append(GriddedPoint(
            p.truck_id, instant, seg_id, r, direction,
            graph.interpolate(seg_id, r),
            p.altitude_m + f * (q.altitude_m - p.altitude_m),
            step, odometer[i] + travelled,
        ))
    return out


def build_snapshots(gridded, graph):
    """Per-timestep snapshots and available-truck counts by road class.

    `gridded` maps truck id -> list of GriddedPoint. Returns
    ``(snapshots, availability)`` where availability maps
    timestep -> {road_class or 'all': count}.
    """
    by_step = defaultdict(list)
    for truck_id in sorted(gridded):
        for gp in gridded[truck_id]:
            by_step[gp.step].append(SnapshotTruck.from_matched(gp, graph))

    snapshots = {}
    availability = {}
    for step in sorted(by_step):
        trucks = tuple(sorted(by_step[step], key=lambda t: t.truck_id))
        snapshots[step] = Snapshot(step, trucks)
        counts = {cls: 0 for cls in ROAD_CLASSES}
        for t in trucks:
            counts[t.road_class] += 1
        counts["all"] = len(trucks)
        availability[step] = counts
    return snapshots, availability
