import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace

from shapely.geometry import mapping

from .pattern_miner import pattern_distribution
from .road_graph import ROAD_CLASSES

logger = logging.getLogger(__name__)

CLASS_ALL = "all"


def icr(sets, n_total):
    """Share of available trucks riding in a co-driving set; None if none available."""
    if n_total <= 0:
        return None
    return sum(len(s.members) for s in sets) / n_total


def ich(sets, per_gap=False):
    """Summed adjacent headways over members (or over gaps); None without sets."""
    if not sets:
        return None
    total = math.fsum(h for s in sets for h in s.headways_m)
    members = sum(len(s.members) for s in sets)
    denominator = members - len(sets) if per_gap else members
    return total / denominator if denominator > 0 else None


def ics(sets):
    """Mean set size; None without sets."""
    if not sets:
        return None
    return sum(len(s.members) for s in sets) / len(sets)


@dataclass(frozen=True)
class TimestepMetrics:
    """Co-driving sums for one timestep (or window) and road class.

    Ratios are derived from the sums so that windows aggregate exactly.
    """

    timestep: int
    road_class: str
    n_total: int
    members: int = 0
    n_sets: int = 0
    headway_sum_m: float = 0.0
    per_gap_headway: bool = False

    @property
    def icr(self):
        return self.members / self.n_total if self.n_total > 0 else None

    @property
    def ich_m(self):
        if self.n_sets == 0:
            return None
        denominator = self.members - self.n_sets if self.per_gap_headway else self.members
        return self.headway_sum_m / denominator if denominator > 0 else None

    @property
    def ics(self):
        return self.members / self.n_sets if self.n_sets > 0 else None


def timestep_metrics(sets_by_step, availability, per_gap_headway=False):
    """Per-timestep metrics for every road class plus the all-roads row."""
    rows = []
    for step in sorted(availability):
        sets = sets_by_step.get(step, [])
        for road_class in (CLASS_ALL,) + ROAD_CLASSES:
            chosen = sets if road_class == CLASS_ALL else [s for s in sets if s.road_class == road_class]
            rows.append(TimestepMetrics(
                timestep=step,
                road_class=road_class,
                n_total=availability[step].get(road_class, 0),
                members=sum(len(s.members) for s in chosen),
                n_sets=len(chosen),
                headway_sum_m=math.fsum(h for s in chosen for h in s.headways_m),
                per_gap_headway=per_gap_headway,
            ))
    return rows


def aggregate_windows(metrics, window_steps=20):
    """Sum metrics into windows of `window_steps` grid steps.

    A window is labelled by its first grid step. Because only sums are
    carried, aggregating twice with nested window sizes equals one pass.
    """
    buckets = {}
    for m in metrics:
        start = (m.timestep // window_steps) * window_steps
        key = (start, m.road_class)
        if key not in buckets:
            buckets[key] = replace(m, timestep=start, n_total=0, members=0, n_sets=0, headway_sum_m=0.0)
        b = buckets[key]
        buckets[key] = replace(
            b,
            n_total=b.n_total + m.n_total,
            members=b.members + m.members,
            n_sets=b.n_sets + m.n_sets,
            headway_sum_m=b.headway_sum_m + m.headway_sum_m,
        )
    return [buckets[k] for k in sorted(buckets, key=lambda k: (k[0], _class_rank(k[1])))]


def _class_rank(road_class):
    order = (CLASS_ALL,) + ROAD_CLASSES
    return order.index(road_class) if road_class in order else len(order)


@dataclass
class FleetMetrics:
    """Fleet platooning ratios with the per-truck figures behind them."""

    pd_m: dict = field(default_factory=dict)
    pt_s: dict = field(default_factory=dict)
    d_m: dict = field(default_factory=dict)
    t_s: dict = field(default_factory=dict)

    @property
    def k(self):
        return len(self.d_m)

    @property
    def pdr(self):
        total = math.fsum(self.d_m.values())
        return math.fsum(self.pd_m.values()) / total if total > 0 else None

    @property
    def ptr(self):
        total = math.fsum(self.t_s.values())
        return math.fsum(self.pt_s.values()) / total if total > 0 else None


def _step_distance(track, t):
    # meters covered from grid step t to t+1, 0 when the truck stops reporting
    nxt = track.get(t + 1)
    if nxt is None:
        return 0.0
    return max(nxt.odometer_m - track[t].odometer_m, 0.0)


def pdr_ptr(patterns, gridded, dt_grid_s=15.0):
    """Platooned distance and time ratios over every available truck.

    `gridded` maps truck id -> {step: GriddedPoint}. Each truck's pattern
    timesteps are merged first, so overlapping patterns count once.
    """
    platooned = defaultdict(set)
    for p in patterns:
        for truck in p.trucks:
            platooned[truck].update(p.timesteps)

    fleet = FleetMetrics()
    for truck in sorted(gridded):
        track = gridded[truck]
        if not track:
            continue
        union = platooned.get(truck, set()) & set(track)
        fleet.d_m[truck] = math.fsum(_step_distance(track, t) for t in track)
        fleet.t_s[truck] = len(track) * dt_grid_s
        fleet.pd_m[truck] = math.fsum(_step_distance(track, t) for t in union)
        fleet.pt_s[truck] = len(union) * dt_grid_s
    return fleet


def haul_distance_breakdown(fleet, bucket_km=100.0):
    """PDR/PTR per daily haul distance bucket, as (start_km, trucks, pdr, ptr) rows."""
    buckets = defaultdict(list)
    for truck, d in fleet.d_m.items():
        buckets[int(d / 1000.0 // bucket_km)].append(truck)
    rows = []
    for b in sorted(buckets):
        trucks = buckets[b]
        sub = FleetMetrics(
            pd_m={t: fleet.pd_m[t] for t in trucks},
            pt_s={t: fleet.pt_s[t] for t in trucks},
            d_m={t: fleet.d_m[t] for t in trucks},
            t_s={t: fleet.t_s[t] for t in trucks},
        )
        rows.append((b * bucket_km, len(trucks), sub.pdr, sub.ptr))
    return rows


def segment_hotspots(patterns, gridded, graph):
    """Pattern memberships per segment, busiest first, every segment listed."""
    counts = {sid: 0 for sid in graph.segments}
    for p in patterns:
        for t in p.timesteps:
            for truck in p.trucks:
                gp = gridded.get(truck, {}).get(t)
                if gp is not None:
                    counts[gp.segment_id] = counts.get(gp.segment_id, 0) + 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def hotspots_geojson(hotspots, graph):
    """GeoJSON FeatureCollection of segment geometries with their counts."""
    features = []
    for segment_id, count in hotspots:
        seg = graph.segments[segment_id]
        features.append({
            "type": "Feature",
            "geometry": mapping(seg.geometry),
            "properties": {"segment_id": segment_id, "road_class": seg.road_class, "count": count},
        })
    return {"type": "FeatureCollection", "features": features}


def highway_share(availability):
    """Per-timestep share of available trucks on each road class."""
    shares = {}
    for step in sorted(availability):
        counts = availability[step]
        total = counts.get(CLASS_ALL, 0)
        shares[step] = {cls: (counts.get(cls, 0) / total if total else None) for cls in ROAD_CLASSES}
    return shares


class FleetAnalyzer:
    """Fleet-level statistics for one analysed day."""

    def __init__(self, dt_grid_s=15.0, per_gap_headway=False, window_steps=20,
                 haul_bucket_km=100.0, min_duration_s=600.0, min_distance_km=10.0):
        self.dt_grid_s = dt_grid_s
        self.per_gap_headway = per_gap_headway
        self.window_steps = window_steps
        self.haul_bucket_km = haul_bucket_km
        self.min_duration_s = min_duration_s
        self.min_distance_km = min_distance_km

    def analyze(self, patterns, sets_by_step, availability, gridded):
        """Return a dict of headline statistics plus the detailed tables."""
        per_step = timestep_metrics(sets_by_step, availability, self.per_gap_headway)
        windows = aggregate_windows(per_step, self.window_steps)
        fleet = pdr_ptr(patterns, gridded, self.dt_grid_s)

        available = {truck for truck, track in gridded.items() if track}
        in_sets = {m for sets in sets_by_step.values() for s in sets for m in s.members}
        in_patterns = {truck for p in patterns for truck in p.trucks}

        stats = {
            'n_trucks': fleet.k,
            'n_patterns': len(patterns),
            'pdr': fleet.pdr,
            'ptr': fleet.ptr,
            'codriving_truck_share': len(in_sets & available) / len(available) if available else None,
            'platooned_truck_share': len(in_patterns & available) / len(available) if available else None,
            'long_pattern_share': pattern_distribution(patterns, self.min_duration_s, self.min_distance_km),
            'expressway_share': self._class_share(availability, "expressway"),
        }
        logger.info("Fleet: %d trucks, %d patterns, PDR=%s PTR=%s",
                    fleet.k, len(patterns), stats['pdr'], stats['ptr'])
        return {
            'stats': stats,
            'timestep_metrics': per_step,
            'windows': windows,
            'fleet': fleet,
            'haul_breakdown': haul_distance_breakdown(fleet, self.haul_bucket_km),
            'highway_share': highway_share(availability),
        }

    @staticmethod
    def _class_share(availability, road_class):
        total = sum(c.get(CLASS_ALL, 0) for c in availability.values())
        on_class = sum(c.get(road_class, 0) for c in availability.values())
        return on_class / total if total else None
