"""Exhaustive reference implementations for small inputs.

These share only the metric definitions (FD, emission/transition
densities) with the production modules; the search itself is redone the
slow, obvious way.
"""

import itertools
import math

import networkx as nx
import numpy as np

from .errors import OracleSizeError
from .following_distance import following_distance
from .map_matcher import MatchedPoint, candidate_states, emission_prob, transition_prob
from .road_graph import geo_distance

MAX_CLUSTER_TRUCKS = 12
MAX_PATTERN_TRUCKS = 8
MAX_PATTERN_TIMESTEPS = 12
MAX_PATHS = 200_000


def oracle_cluster(snapshot, graph, eps_km=1.0, min_pts=2, ete_cutoff_factor=3.0):
    """Density-connected components under FD <= eps.

    Core trucks with at least ``min_pts`` trucks (themselves included)
    within eps are joined when within eps of each other; a border truck
    joins every component holding a core truck within eps of it.
    """
    trucks = sorted(snapshot, key=lambda t: t.truck_id)
    if len(trucks) > MAX_CLUSTER_TRUCKS:
        raise OracleSizeError(f"oracle_cluster handles at most {MAX_CLUSTER_TRUCKS} trucks")
    eps_m = eps_km * 1000.0
    cutoff = ete_cutoff_factor * eps_m
    n = len(trucks)
    close = {i: set() for i in range(n)}
    for i, j in itertools.combinations(range(n), 2):
        if following_distance(trucks[i], trucks[j], graph, eps_m, cutoff) <= eps_m:
            close[i].add(j)
            close[j].add(i)

    core = {i for i in range(n) if len(close[i]) + 1 >= min_pts}
    links = nx.Graph()
    links.add_nodes_from(core)
    links.add_edges_from((i, j) for i in core for j in close[i] if j in core)
    components = []
    for component in nx.connected_components(links):
        members = set(component)
        for i in component:
            members |= close[i]
        components.append(frozenset(trucks[i].truck_id for i in members))
    return sorted(components, key=lambda c: sorted(c))


def oracle_patterns(sets_by_step, min_o=2, min_t=2):
    """Closed patterns by enumerating every truck subset.

    `sets_by_step` maps timestep -> iterable of member groups.
    Returns ``(trucks, timesteps)`` tuples.
    """
    groups = {t: [frozenset(g) for g in sets] for t, sets in sets_by_step.items()}
    trucks = sorted({x for sets in groups.values() for g in sets for x in g})
    if len(trucks) > MAX_PATTERN_TRUCKS or len(groups) > MAX_PATTERN_TIMESTEPS:
        raise OracleSizeError(
            f"oracle_patterns handles at most {MAX_PATTERN_TRUCKS} trucks and {MAX_PATTERN_TIMESTEPS} timesteps")

    found = {}
    for size in range(max(min_o, 1), len(trucks) + 1):
        for subset in itertools.combinations(trucks, size):
            together = set(subset)
            steps = frozenset(t for t, sets in groups.items() if any(together <= g for g in sets))
            if len(steps) >= min_t:
                found[frozenset(subset)] = steps

    closed = []
    for members, steps in found.items():
        dominated = any(
            members < other and steps == other_steps
            for other, other_steps in found.items()
        )
        if not dominated:
            closed.append((tuple(sorted(members)), tuple(sorted(steps))))
    closed.sort(key=lambda p: (-len(p[0]), p[1][0], p[0]))
    return closed


def brute_force_path(points, graph, params):
    """Best ``(segment_id, dir)`` sequence by scoring every state combination."""
    layers = [candidate_states(p, graph, params) for p in points]
    if any(not layer for layer in layers):
        return None
    if math.prod(len(layer) for layer in layers) > MAX_PATHS:
        raise OracleSizeError(f"brute_force_path handles at most {MAX_PATHS} paths")

    def hyp(point, state):
        proj = state.projection
        return MatchedPoint(point.truck_id, point.timestamp, proj.segment_id, proj.r,
                            state.dir, proj.snapped_lonlat, point.altitude_m)

    best, best_path = -math.inf, None
    for combo in itertools.product(*layers):
        score = math.log(emission_prob(combo[0].projection, params))
        for k in range(1, len(points)):
            gap = (geo_distance(points[k - 1].lonlat, points[k].lonlat),
                   points[k].timestamp - points[k - 1].timestamp)
            tp = transition_prob(hyp(points[k - 1], combo[k - 1]), hyp(points[k], combo[k]), gap, graph, params)
            if tp <= 0.0:
                score = -math.inf
                break
            score += math.log(tp) + math.log(emission_prob(combo[k].projection, params))
        if score > best:
            best, best_path = score, [s.key for s in combo]
    return best_path


def fuel_oracle(profile, phi, params, step_s=0.1):
    """Fuel in ml integrated with a fixed fine time step (midpoint rule)."""
    phis = np.broadcast_to(np.asarray(phi, dtype=float), profile.v.shape)
    n = int(round(params.dt_s / step_s))
    total = 0.0
    for v0, a, alpha, p in zip(profile.v, profile.a, profile.alpha, phis):
        for k in range(n):
            tau = (k + 0.5) * step_s
            v = max(v0 + a * tau, 0.0)
            drag = 0.5 * params.rho_air * params.frontal_area * params.c_d * v * v * p
            force = (params.mass_kg * a + drag
                     + params.mass_kg * params.g * (params.c_r * math.cos(alpha) + math.sin(alpha)))
            if force >= 0:
                total += force * v / (params.psi * params.eta_eng * params.rho_d) * step_s
    return total
