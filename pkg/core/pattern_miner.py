"""Closed spontaneous platoon patterns P(O, T) from per-timestep sets.

The miner walks a truck-index-ordered set-enumeration tree depth first.
Membership is held in a dense ``trucks x timesteps`` matrix of set ids so
``t_max`` of a child is one vectorised comparison against its parent.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UnknownTruckError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MineParams:
    min_o: int = 2
    min_t: int = 2
    logical: bool = True
    apriori: bool = True
    subset: bool = True
    marginal: bool = True

    def __post_init__(self):
        if self.min_o < 2:
            raise ConfigError("mine.min_o must be >= 2")
        if self.min_t < 1:
            raise ConfigError("mine.min_t must be >= 1")


@dataclass(frozen=True)
class PatternSummary:
    duration_s: float
    distance_km: float = None
    mean_headway_m: float = None
    max_headway_m: float = None
    runs: tuple = ()
    run_orders: tuple = ()
    coverage_ok: bool = True


@dataclass(frozen=True)
class PlatoonPattern:
    trucks: tuple
    timesteps: tuple
    summary: PatternSummary = None

    @property
    def runs(self):
        return consecutive_runs(self.timesteps)

    def sort_key(self):
        return (-len(self.trucks), self.timesteps[0] if self.timesteps else 0, self.trucks)


def consecutive_runs(timesteps):
    """Split sorted timesteps into maximal runs of consecutive integers."""
    runs = []
    for t in sorted(timesteps):
        if runs and t == runs[-1][-1] + 1:
            runs[-1].append(t)
        else:
            runs.append([t])
    return tuple(tuple(r) for r in runs)


class SnapshotIndex:
    """Per-timestep partition of trucks into co-driving sets."""

    def __init__(self, sets_by_timestep, trucks=()):
        # sets_by_timestep: {t: [CoDrivingSet or iterable of truck ids, ...]}
        self.timesteps = tuple(sorted(sets_by_timestep))
        self.sets = {}
        membership = {}
        for t in self.timesteps:
            for set_id, group in enumerate(sets_by_timestep[t]):
                members = tuple(getattr(group, "members", group))
                self.sets[(t, set_id)] = group
                for truck in members:
                    slot = membership.setdefault(truck, {})
                    if t in slot:
                        raise ValueError(f"truck {truck} is in two sets at timestep {t}")
                    slot[t] = set_id
        self.trucks = tuple(sorted(set(membership) | set(trucks)))
        self.membership = {truck: membership.get(truck, {}) for truck in self.trucks}

        col = {t: k for k, t in enumerate(self.timesteps)}
        self.matrix = np.full((len(self.trucks), len(self.timesteps)), -1, dtype=np.int64)
        for row, truck in enumerate(self.trucks):
            for t, set_id in self.membership[truck].items():
                self.matrix[row, col[t]] = set_id

    @classmethod
    def from_sets(cls, sets, trucks=()):
        """Build from CoDrivingSets (anything with `timestep` and `members`)."""
        grouped = {}
        for s in sets:
            grouped.setdefault(s.timestep, []).append(s)
        for t in grouped:
            grouped[t].sort(key=lambda s: tuple(s.members))
        return cls(grouped, trucks)

    def set_at(self, truck, t):
        """Co-driving set holding `truck` at `t`, or None."""
        set_id = self.membership.get(truck, {}).get(t)
        return None if set_id is None else self.sets[(t, set_id)]


def t_max(trucks, index):
    """Timesteps at which every truck of `trucks` shares one set."""
    trucks = list(trucks)
    if not trucks:
        raise ValueError("t_max needs at least one truck")
    for truck in trucks:
        if truck not in index.membership:
            raise UnknownTruckError(truck)
    first = index.membership[trucks[0]]
    result = []
    for t, set_id in first.items():
        if all(index.membership[o].get(t) == set_id for o in trucks[1:]):
            result.append(t)
    return frozenset(result)


class _Miner:
    def __init__(self, index, params):
        self.index = index
        self.params = params
        self.m = index.matrix
        self.n = len(index.trucks)

    def co_present(self, anchor, mask):
        # trucks sharing anchor's set at every timestep of mask
        cols = self.m[:, mask]
        return np.all(cols == self.m[anchor, mask], axis=1)

    def subtree(self, root):
        found = []
        if self.params.logical and self.n - root < self.params.min_o:
            return found
        mask = self.m[root] >= 0
        self._visit([root], mask, found)
        return found

    def _visit(self, members, mask, found):
        p = self.params
        last = members[-1]
        count = int(mask.sum())
        # Too few shared timesteps: no superset can do better
        if p.apriori and count < p.min_t:
            return
        # Trucks outside the group that share every one of its timesteps
        same = self.co_present(members[0], mask)
        same[members] = False
        if p.subset and np.any(same[:last]):
            # an earlier truck always rides along: no closed pattern below
            return
        # A later truck that always rides along means this group is not closed yet
        closed = not np.any(same[last + 1:]) if p.marginal else True
        if not p.subset:
            closed = closed and not np.any(same[:last])
        # Record the group once it is big and long enough
        if len(members) >= p.min_o and count >= p.min_t and closed:
            found.append((tuple(members), mask.copy()))
        # Grow the group by every truck after the last one, in index order
        for x in range(last + 1, self.n):
            # Not enough trucks left to ever reach min_o
            if p.logical and len(members) + 1 + (self.n - 1 - x) < p.min_o:
                break
            # Timesteps where x sits in the same set as the group
            child = mask & (self.m[x] == self.m[members[0]])
            if p.apriori and int(child.sum()) < p.min_t:
                continue
            self._visit(members + [x], child, found)


def _is_closed(candidate, others):
    trucks, steps = candidate
    for o_trucks, o_steps in others:
        if o_trucks is trucks:
            continue
        if set(trucks) < set(o_trucks) and steps == o_steps:
            return False
        if set(trucks) == set(o_trucks) and steps < o_steps:
            return False
    return True


def mine_patterns(index, min_o=2, min_t=2, params=None, processor=None):
    """All closed patterns with at least `min_o` trucks and `min_t` steps.

    Root subtrees are independent, so they may run on `processor`.
    """
    params = params or MineParams(min_o=min_o, min_t=min_t)
    miner = _Miner(index, params)
    roots = [(r, r) for r in range(miner.n)]
    if processor is not None and miner.n > 1:
        raw = processor.process_batch(roots, miner.subtree, label="mine").results.values()
    else:
        raw = [miner.subtree(r) for _, r in roots]

    steps = np.asarray(index.timesteps)
    found = []
    for part in raw:
        for members, mask in part:
            trucks = tuple(index.trucks[i] for i in members)
            found.append((trucks, frozenset(steps[mask].tolist())))
    if not params.marginal:
        # candidates were emitted without the forward closure check
        found = [c for c in found if _is_closed(c, found)]

    patterns = [PlatoonPattern(trucks, tuple(sorted(ts))) for trucks, ts in found]
    patterns.sort(key=PlatoonPattern.sort_key)
    logger.info("Mined %d patterns from %d trucks over %d timesteps",
                len(patterns), miner.n, len(index.timesteps))
    return patterns


def summarize_pattern(pattern, gridded, index, dt_grid_s):
    """Duration, distance and headway summary of one pattern.

    `gridded` maps truck id -> {step: GriddedPoint}. A timestep counts for
    the interval up to the next grid step while the truck stays active.
    """
    runs = consecutive_runs(pattern.timesteps)
    duration = len(pattern.timesteps) * dt_grid_s

    coverage_ok = all(
        t in gridded.get(truck, {}) for truck in pattern.trucks for t in pattern.timesteps
    )
    distance_km = None
    if coverage_ok:
        per_truck = []
        for truck in pattern.trucks:
            track = gridded[truck]
            total = 0.0
            for run in runs:
                end = run[-1] + 1 if run[-1] + 1 in track else run[-1]
                total += track[end].odometer_m - track[run[0]].odometer_m
            per_truck.append(total)
        distance_km = float(np.mean(per_truck)) / 1000.0

    gaps = []
    orders = []
    for run in runs:
        order = None
        for t in run:
            offsets = _offsets_of(index.set_at(pattern.trucks[0], t))
            if offsets is None:
                continue
            ranked = sorted(pattern.trucks, key=lambda truck: (offsets[truck], truck))
            if order is None:
                order = tuple(ranked)
            gaps.extend(offsets[b] - offsets[a] for a, b in zip(ranked[:-1], ranked[1:]))
        orders.append(order or tuple(pattern.trucks))

    return PatternSummary(
        duration_s=duration,
        distance_km=distance_km,
        mean_headway_m=float(np.mean(gaps)) if gaps else None,
        max_headway_m=float(np.max(gaps)) if gaps else None,
        runs=runs,
        run_orders=tuple(orders),
        coverage_ok=coverage_ok,
    )


def _offsets_of(group):
    members = getattr(group, "members", None)
    offsets = getattr(group, "offsets_m", None)
    if not members or not offsets:
        return None
    return dict(zip(members, offsets))


def pattern_distribution(patterns, min_duration_s=600.0, min_distance_km=10.0):
    """Share of summarised patterns lasting and travelling at least the thresholds."""
    summarised = [p for p in patterns if p.summary is not None and p.summary.distance_km is not None]
    if not summarised:
        return None
    long_ones = sum(
        1 for p in summarised
        if p.summary.duration_s >= min_duration_s and p.summary.distance_km >= min_distance_km
    )
    return long_ones / len(summarised)
