"""Instantaneous co-driving sets: OPTICS under the following distance,
then valley refinement of the reachability plot by angle and rate.

Reachability and core distances are kept in km so the sentinel for
"reachable but farther than eps" is exactly ``1.01 * eps_km``.
"""

import heapq
import logging
import math
from collections import Counter, deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UndefinedReachabilityError
from .following_distance import following_matrix

logger = logging.getLogger(__name__)

SENTINEL_FACTOR = 1.01


@dataclass(frozen=True)
class ClusterParams:
    eps_km: float = 1.0
    min_pts: int = 2
    delta: float = 0.5
    theta_thresh_deg: float = 150.0
    lambda_thresh: float = 0.0
    ete_cutoff_factor: float = 3.0

    def __post_init__(self):
        if not self.eps_km > 0:
            raise ConfigError("cluster.eps_km must be positive")
        if self.min_pts < 2:
            raise ConfigError("cluster.min_pts must be >= 2")
        if not self.delta > 0:
            raise ConfigError("cluster.delta must be positive")
        if not 0 < self.theta_thresh_deg <= 180:
            raise ConfigError("cluster.theta_thresh_deg must lie in (0, 180]")
        if self.ete_cutoff_factor < 1:
            raise ConfigError("follow_dist.ete_cutoff_factor must be >= 1")

    @property
    def eps_m(self):
        return self.eps_km * 1000.0

    @property
    def sentinel(self):
        return SENTINEL_FACTOR * self.eps_km

    @property
    def ete_cutoff_m(self):
        return self.ete_cutoff_factor * self.eps_m


@dataclass(frozen=True)
class OpticsOutput:
    ordering: tuple
    reach_dist: tuple
    core_dist: tuple


@dataclass(frozen=True)
class CoDrivingSet:
    """One co-driving set; `members` run front to back.

    `offsets_m[i]` is how far member i drives behind the front truck along
    the FD chain, so `headways_m` are the gaps between neighbours.
    `positions[i]` is the member's `(segment_id, r, dir)`.
    """

    timestep: int
    members: tuple
    road_class: str
    offsets_m: tuple = ()
    positions: tuple = ()

    @property
    def headways_m(self):
        return tuple(b - a for a, b in zip(self.offsets_m[:-1], self.offsets_m[1:]))

    def __len__(self):
        return len(self.members)


def working_reachability(rd, eps_km):
    """Map +inf and RD above eps to the 1.01*eps sentinel."""
    sentinel = SENTINEL_FACTOR * eps_km
    return [sentinel if (not math.isfinite(v) or v > eps_km) else float(v) for v in rd]


def _finite_neighbours(dist):
    # other trucks at finite FD, per row, in index order
    mask = np.isfinite(dist)
    np.fill_diagonal(mask, False)
    return [np.flatnonzero(mask[p]).tolist() for p in range(len(dist))]


def p_optics(snapshot, graph, params, fd=None):
    """OPTICS ordering with FD as the metric.

    `fd` may be a precomputed `FollowingMatrix` for the same snapshot.
    """
    if fd is None:
        fd = following_matrix(snapshot, graph, params.eps_m, params.ete_cutoff_m)
    trucks = fd.trucks
    n = len(trucks)
    if n == 0:
        return OpticsOutput((), (), ())
    dist = fd.distance_m / 1000.0
    eps = params.eps_km

    # Core distance: FD to the (min_pts - 1)-th nearest truck within eps
    finite = _finite_neighbours(dist)
    core = np.full(n, math.inf)
    for p in range(n):
        row = dist[p, finite[p]]
        neigh = np.sort(row[row <= eps])
        # the point itself counts towards min_pts
        if len(neigh) + 1 >= params.min_pts:
            core[p] = neigh[params.min_pts - 2]

    processed = np.zeros(n, dtype=bool)
    reach = np.full(n, math.inf)
    order = []
    seeds = []

    def expand(p):
        processed[p] = True
        order.append(p)
        # Only core trucks pass reachability on to their neighbours
        if not math.isfinite(core[p]):
            return
        for q in finite[p]:
            if processed[q]:
                continue
            candidate = max(core[p], dist[p, q])
            if candidate < reach[q]:
                reach[q] = candidate
                heapq.heappush(seeds, (candidate, trucks[q].truck_id, q))

    # Seeds come off the heap closest first, ties by truck id
    for start in range(n):
        if processed[start]:
            continue
        expand(start)
        while seeds:
            value, _, q = heapq.heappop(seeds)
            # Stale heap entry, a shorter reach was pushed later
            if processed[q] or value > reach[q]:
                continue
            expand(q)

    # Reachable but farther than eps shows up as the sentinel
    rd = []
    for p in order:
        value = reach[p]
        if math.isfinite(value) and value > eps:
            value = params.sentinel
        rd.append(float(value))
    return OpticsOutput(
        ordering=tuple(trucks[p].truck_id for p in order),
        reach_dist=tuple(rd),
        core_dist=tuple(float(core[p]) for p in order),
    )


def angle_lambda(ordered_rd, y, delta):
    """Turning angle (degrees) and rate at position `y` of a reachability plot."""
    if not 1 <= y <= len(ordered_rd) - 2:
        raise UndefinedReachabilityError(f"position {y} has no neighbour on both sides")
    x_r, y_r, z_r = ordered_rd[y - 1], ordered_rd[y], ordered_rd[y + 1]
    if not all(math.isfinite(v) for v in (x_r, y_r, z_r)):
        raise UndefinedReachabilityError(f"non-finite reachability around position {y}")
    back = (-delta, x_r - y_r)
    fore = (delta, z_r - y_r)
    cos_theta = (back[0] * fore[0] + back[1] * fore[1]) / (math.hypot(*back) * math.hypot(*fore))
    theta = math.degrees(math.acos(min(1.0, max(-1.0, cos_theta))))
    lam = -delta * (z_r - y_r) - delta * (x_r - y_r)
    return theta, lam


def find_valley(core_dist, eps_km=1.0):
    """Index ranges around maximal runs of core distance below eps."""
    n = len(core_dist)
    valleys = []
    i = 0
    while i < n:
        if core_dist[i] < eps_km:
            j = i
            while j + 1 < n and core_dist[j + 1] < eps_km:
                j += 1
            valleys.append(range(max(i - 1, 0), min(j + 2, n)))
            i = j + 1
        else:
            i += 1
    return valleys


def adaptive_recognition(valleys, ordered_rd, params):
    """Trim each valley down to its platoon members.

    Positions just outside a valley act as sentinel-high walls. A front
    mark opens a candidate set, an end mark extends it, and a candidate
    is emitted once the next front arrives or the valley ends.
    """
    eps = params.eps_km
    sentinel = params.sentinel
    emitted = []
    for valley in valleys:
        positions = list(valley)
        if not positions:
            continue
        work = [sentinel] + working_reachability([ordered_rd[i] for i in positions], eps) + [sentinel]

        start = end = None
        for k, pos in enumerate(positions):
            theta, lam = angle_lambda(work, k + 1, params.delta)
            sharp = theta < params.theta_thresh_deg
            is_front = sharp and lam > params.lambda_thresh
            is_end = sharp and lam < params.lambda_thresh
            if is_front:
                if start is not None and end is not None:
                    emitted.append((positions[start], positions[end]))
                start, end = k, None
            elif is_end:
                if start is None:
                    start = max(k - 1, 0)
                end = k
            elif work[k + 1] >= sentinel:
                # unreached truck with no turn: nothing can be open across it
                if start is not None and end is not None:
                    emitted.append((positions[start], positions[end]))
                start = end = None
        if start is not None and end is not None:
            emitted.append((positions[start], positions[end]))

    ranges = []
    for first, last in emitted:
        if last - first + 1 >= params.min_pts:
            ranges.append(range(first, last + 1))
    return ranges


def _chain_offsets(fd, finite, component):
    # place trucks on a line by walking finite FD pairs from the first truck
    pos = {}
    inside = set(component)
    for root in component:
        if root in pos:
            continue
        pos[root] = 0.0
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in finite[i]:
                if j in pos or j not in inside:
                    continue
                gap = fd.distance_m[i, j]
                # a truck led by i sits `gap` behind it
                pos[j] = pos[i] - gap if fd.leader[i, j] == i else pos[i] + gap
                queue.append(j)
    return pos


def _finite_runs(fd, indices):
    """Cut `indices` wherever two neighbours have no finite FD."""
    runs, run = [], []
    for i in indices:
        if run and not math.isfinite(fd.distance_m[run[-1], i]):
            runs.append(run)
            run = []
        run.append(i)
    if run:
        runs.append(run)
    return runs


def _connected_runs(fd, indices):
    """Cut `indices` wherever a truck has no finite FD to any truck before it in the run."""
    runs, run = [], []
    for i in indices:
        if run and not np.isfinite(fd.distance_m[run, i]).any():
            runs.append(run)
            run = []
        run.append(i)
    if run:
        runs.append(run)
    return runs


def _line_up(fd, finite, members):
    """Members front to back, split where neighbours do not follow each other."""
    pos = _chain_offsets(fd, finite, sorted(members))
    # front truck has the largest position
    ordered = sorted(members, key=lambda i: (-pos[i], fd.trucks[i].truck_id))
    return _finite_runs(fd, ordered)


def _codriving_set(fd, line, timestep):
    trucks = [fd.trucks[i] for i in line]
    classes = Counter(t.road_class for t in trucks)
    top = max(classes.values())
    road_class = next(t.road_class for t in trucks if classes[t.road_class] == top)
    # offsets accumulate the FD between neighbours, so headways are real gaps
    offsets = [0.0]
    for prev, cur in zip(line[:-1], line[1:]):
        offsets.append(offsets[-1] + float(fd.distance_m[prev, cur]))
    return CoDrivingSet(
        timestep=timestep,
        members=tuple(t.truck_id for t in trucks),
        road_class=road_class,
        offsets_m=tuple(offsets),
        positions=tuple(t.point.position for t in trucks),
    )


def detect_codriving_sets(snapshot, graph, params, timestep=0):
    """A-OPTICS over one snapshot; returns disjoint sets, front truck first.

    Every member has a finite FD to some other member, and neighbours
    front to back always have a finite FD between them.
    """
    fd = following_matrix(snapshot, graph, params.eps_m, params.ete_cutoff_m)
    optics = p_optics(snapshot, graph, params, fd=fd)
    if not optics.ordering:
        return []
    valleys = find_valley(optics.core_dist, params.eps_km)
    ranges = adaptive_recognition(valleys, optics.reach_dist, params)

    finite = _finite_neighbours(fd.distance_m)
    index = {t.truck_id: i for i, t in enumerate(fd.trucks)}
    used = set()
    sets = []
    for rng in ranges:
        members = [index[optics.ordering[p]] for p in rng if index[optics.ordering[p]] not in used]
        # valley cuts follow reachability shape only, not FD connectivity
        for run in _connected_runs(fd, members):
            if len(run) < params.min_pts:
                continue
            for line in _line_up(fd, finite, run):
                if len(line) < params.min_pts:
                    continue
                used.update(line)
                sets.append(_codriving_set(fd, line, timestep))
    sets.sort(key=lambda s: s.members)
    return sets
