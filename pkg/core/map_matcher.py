"""Heading-aware HMM map matching.

Each hidden state is a ``(segment, Direction)`` pair, so the choice between
travelling along or against a bidirectional segment is decided jointly
with the segment choice by one Viterbi pass instead of a greedy fix-up.
"""

import logging
import math
from dataclasses import dataclass, field

from .errors import ConfigError, TrajectoryFormatError, TrajectoryRejected
from .road_graph import Direction, geo_distance

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class TruckPoint:
    truck_id: str
    timestamp: float
    lon: float
    lat: float
    altitude_m: float = 0.0
    speed_mps: float = None

    @property
    def lonlat(self):
        return (self.lon, self.lat)


@dataclass(frozen=True)
class MatchedPoint:
    truck_id: str
    timestamp: float
    segment_id: str
    r: float
    dir: Direction
    snapped_lonlat: tuple
    altitude_m: float = 0.0

    @property
    def position(self):
        return (self.segment_id, self.r, self.dir)


@dataclass(frozen=True)
class HmmParams:
    match_radius_m: float = 50.0
    emission_sigma_m: float = 20.0
    transition_beta: float = 200.0
    speed_weight: float = 0.05
    max_skip: int = 4
    max_speed_mps: float = 50.0
    backtrack_tolerance_m: float = 30.0
    max_route_m: float = 15000.0

    def __post_init__(self):
        for name in ("match_radius_m", "emission_sigma_m", "transition_beta",
                     "speed_weight", "max_speed_mps", "max_route_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"map_match.{name} must be positive")
        if self.max_skip < 0:
            raise ConfigError("map_match.max_skip must be >= 0")
        if self.backtrack_tolerance_m < 0:
            raise ConfigError("map_match.backtrack_tolerance_m must be >= 0")


@dataclass(frozen=True)
class _State:
    projection: object
    dir: Direction

    @property
    def key(self):
        return (self.projection.segment_id, int(self.dir))


@dataclass
class _Step:
    point: TruckPoint
    states: list
    scores: list
    back: list = field(default_factory=list)


def emission_prob(proj, params):
    """Gaussian density of the perpendicular snapping distance."""
    sigma = params.emission_sigma_m
    z = proj.perp_dist_m / sigma
    return math.exp(-0.5 * z * z) / (sigma * _SQRT_2PI)


def transition_prob(prev, nxt, obs_gap, graph, params):
    """Transition density between two hypothesised matched points.

    `obs_gap` is ``(great_circle_m, dt_s)`` between the raw observations.
    """
    gc, dt = obs_gap
    if dt <= 0:
        raise ValueError(f"non-positive time gap {dt}")
    leg = graph.route_between(prev.position, nxt.position,
                              cutoff=max(params.max_route_m, 2.0 * gc),
                              backtrack_tolerance_m=params.backtrack_tolerance_m)
    route = leg.distance_m
    if not math.isfinite(route):
        return 0.0
    mismatch = abs(route - gc)
    return math.exp(-mismatch / params.transition_beta) * math.exp(-params.speed_weight * mismatch / dt)


def filter_low_quality(points, max_speed_mps=50.0):
    """Drop duplicate timestamps and fixes implying an impossible speed.

    Returns ``(kept, dropped_count)``.
    """
    kept = []
    for p in points:
        if kept:
            last = kept[-1]
            dt = p.timestamp - last.timestamp
            if dt < 0:
                raise TrajectoryFormatError(
                    f"truck {p.truck_id}: timestamps not sorted at {p.timestamp}")
            if dt == 0:
                continue
            if geo_distance(last.lonlat, p.lonlat) / dt > max_speed_mps:
                continue
        kept.append(p)
    return kept, len(points) - len(kept)


def candidate_states(point, graph, params):
    """Hidden states for one observation, ordered by (segment_id, dir)."""
    states = []
    for proj in graph.candidates(point.lonlat, params.match_radius_m):
        for direction in (Direction.AGAINST, Direction.ALONG):
            if graph.arc_allowed(proj.segment_id, direction):
                states.append(_State(proj, direction))
    states.sort(key=lambda s: s.key)
    return states


def _hypothesis(point, state):
    proj = state.projection
    return MatchedPoint(point.truck_id, point.timestamp, proj.segment_id, proj.r,
                        state.dir, proj.snapped_lonlat, point.altitude_m)


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def _start_step(point, states, params):
    scores = [_log(emission_prob(s.projection, params)) for s in states]
    return _Step(point, states, scores, [None] * len(states))


def _advance(prev, point, states, graph, params):
    gap = (geo_distance(prev.point.lonlat, point.lonlat), point.timestamp - prev.point.timestamp)
    prev_hyp = [_hypothesis(prev.point, s) for s in prev.states]
    scores, back = [], []
    for state in states:
        hyp = _hypothesis(point, state)
        best, arg = -math.inf, None
        # predecessors are visited in key order, strict '>' keeps the smallest key on ties
        for i, p_hyp in enumerate(prev_hyp):
            if prev.scores[i] == -math.inf:
                continue
            tp = transition_prob(p_hyp, hyp, gap, graph, params)
            if tp <= 0.0:
                continue
            value = prev.scores[i] + math.log(tp)
            if value > best:
                best, arg = value, i
        if arg is None:
            scores.append(-math.inf)
        else:
            scores.append(best + _log(emission_prob(state.projection, params)))
        back.append(arg)
    return _Step(point, states, scores, back)


def _decode(chain):
    if len(chain) < 2:
        return []
    last = chain[-1]
    best, arg = -math.inf, None
    for i, score in enumerate(last.scores):
        if score > best:
            best, arg = score, i
    if arg is None:
        return []
    path = []
    for step in reversed(chain):
        path.append(_hypothesis(step.point, step.states[arg]))
        arg = step.back[arg]
    path.reverse()
    return path


def match_trajectory(points, graph, params):
    """Viterbi-optimal (segment, dir) sequence for one truck.

    Points without candidates are skipped; more than `max_skip` in a row, or
    a step that no predecessor can reach, closes the current chain and
    decoding restarts. Chains shorter than two points are discarded.
    """
    if not points:
        raise TrajectoryRejected("?", "empty trajectory")
    truck_id = points[0].truck_id
    kept, dropped = filter_low_quality(points, params.max_speed_mps)
    if dropped:
        logger.debug("truck %s: dropped %d low-quality fixes", truck_id, dropped)
    if len(kept) < 2:
        raise TrajectoryRejected(truck_id, "fewer than 2 points after filtering")

    matched = []
    chain = []
    skipped = 0
    for point in kept:
        states = candidate_states(point, graph, params)
        # No road nearby: skip the fix, but only so many in a row
        if not states:
            skipped += 1
            if skipped > params.max_skip and chain:
                matched.extend(_decode(chain))
                chain = []
            continue
        skipped = 0
        # First point of a chain: emission scores only
        if not chain:
            chain = [_start_step(point, states, params)]
            continue
        step = _advance(chain[-1], point, states, graph, params)
        # Nothing reachable from the previous step, so decode what we have and restart
        if all(score == -math.inf for score in step.scores):
            matched.extend(_decode(chain))
            chain = [_start_step(point, states, params)]
        else:
            chain.append(step)

    # Flush the last open chain
    matched.extend(_decode(chain))

    if len(matched) < 2:
        raise TrajectoryRejected(truck_id, "fewer than 2 matchable points")
    return matched


def match_fleet(trajectories, graph, params, processor):
    """Match every truck through `processor`; rejected trucks are reported.

    Returns ``(matched_by_truck, summary)`` where `summary` is the batch
    processor's result dict.
    """
    result = processor.process_batch(
        sorted(trajectories.items()),
        lambda pts: match_trajectory(pts, graph, params),
        label="match",
    )
    return result.results, result.summary()
