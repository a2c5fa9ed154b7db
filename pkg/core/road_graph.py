"""Road network: loading, spatial candidate search and directed routing.

The network is stored twice: as a shapely STRtree over segment geometries
for candidate search, and as a networkx MultiDiGraph whose arcs are keyed
by ``(segment_id, Direction)`` for routing. A bidirectional segment yields
one arc per direction; a oneway segment yields only its ALONG arc.
"""

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
from shapely import to_wkt, wkt
from shapely.errors import ShapelyError
from shapely.geometry import LineString, Point, box
from shapely.strtree import STRtree

from .errors import NetworkFormatError, UnknownNodeError

logger = logging.getLogger(__name__)

# WGS84 mean radius (IUGG)
EARTH_RADIUS_M = 6371008.8
ROAD_CLASSES = ("expressway", "trunk")
LENGTH_TOLERANCE = 0.01

_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


class Direction(IntEnum):
    """Travel direction relative to the segment's from_node -> to_node."""

    ALONG = 0
    AGAINST = -1

    @property
    def opposite(self):
        return Direction.AGAINST if self is Direction.ALONG else Direction.ALONG


@dataclass(frozen=True)
class RoadNode:
    node_id: str
    lon: float
    lat: float


@dataclass(frozen=True)
class RoadSegment:
    segment_id: str
    from_node: str
    to_node: str
    length_m: float
    road_class: str
    oneway: bool
    geometry: LineString

    def heading_node(self, direction):
        """Node a truck travelling in `direction` is heading to."""
        return self.to_node if direction == Direction.ALONG else self.from_node

    def entry_node(self, direction):
        """Node a truck travelling in `direction` entered the segment from."""
        return self.from_node if direction == Direction.ALONG else self.to_node


@dataclass(frozen=True)
class Projection:
    segment_id: str
    r: float
    perp_dist_m: float
    snapped_lonlat: tuple


@dataclass(frozen=True)
class Leg:
    """Directed network movement between two positions on the graph.

    `arcs` are the whole segments traversed between the start segment and
    the end segment; `direct` marks movement inside a single segment.
    """

    distance_m: float
    arcs: tuple = ()
    direct: bool = False


def geo_distance(a, b):
    """Haversine distance in meters between two (lon, lat) pairs."""
    lon1, lat1 = map(math.radians, a)
    lon2, lat2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2.0) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def offset_lonlat(origin, east_m, north_m):
    """Move `origin` by a local east/north offset in meters."""
    lon0, lat0 = origin
    lat = lat0 + math.degrees(north_m / EARTH_RADIUS_M)
    lon = lon0 + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return (lon, lat)


def polyline_length(coords):
    """Sum of haversine lengths of consecutive vertex pairs."""
    coords = list(coords)
    return sum(geo_distance(coords[i], coords[i + 1]) for i in range(len(coords) - 1))


def remaining_fraction(r, direction):
    """Fraction of the segment still ahead of a truck at ratio `r`."""
    return 1.0 - r if direction == Direction.ALONG else r


def _to_local(coords, lon0, lat0):
    # equirectangular frame in meters centred on (lon0, lat0)
    arr = np.asarray(coords, dtype=float)
    kx = math.radians(1.0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    ky = math.radians(1.0) * EARTH_RADIUS_M
    return np.column_stack(((arr[:, 0] - lon0) * kx, (arr[:, 1] - lat0) * ky))


class RoadGraph:
    """Immutable road network with a spatial index and a routing graph."""

    def __init__(self, nodes, segments, route_cache_size=200_000):
        # Canonical ordering keeps index positions and tie-breaks stable
        self.nodes = {n.node_id: n for n in sorted(nodes, key=lambda n: n.node_id)}
        self.segments = {s.segment_id: s for s in sorted(segments, key=lambda s: s.segment_id)}

        self._segment_ids = list(self.segments)
        self._cum_lengths = {
            sid: np.concatenate(([0.0], np.cumsum([
                geo_distance(c0, c1)
                for c0, c1 in zip(seg.geometry.coords[:-1], seg.geometry.coords[1:])
            ])))
            for sid, seg in self.segments.items()
        }
        self._tree = STRtree([self.segments[sid].geometry for sid in self._segment_ids])

        # Routing graph: one arc per allowed travel direction
        self._digraph = nx.MultiDiGraph()
        self._digraph.add_nodes_from(self.nodes)
        for seg in self.segments.values():
            self._digraph.add_edge(seg.from_node, seg.to_node,
                                   key=(seg.segment_id, Direction.ALONG), length=seg.length_m)
            if not seg.oneway:
                self._digraph.add_edge(seg.to_node, seg.from_node,
                                       key=(seg.segment_id, Direction.AGAINST), length=seg.length_m)

        self._incident = {nid: [] for nid in self.nodes}
        for seg in self.segments.values():
            self._incident[seg.from_node].append(seg.segment_id)
            self._incident[seg.to_node].append(seg.segment_id)

        # Per-instance memo of shortest routes; the graph never changes
        self._route_cached = lru_cache(maxsize=route_cache_size)(self._route_uncached)

    def __repr__(self):
        return f"RoadGraph({len(self.nodes)} nodes, {len(self.segments)} segments)"

    # ------------------------------------------------------------------
    # Topology helpers
    # ------------------------------------------------------------------
    def incident_segments(self, node_id):
        """Segments touching `node_id`, in either direction."""
        if node_id not in self.nodes:
            raise UnknownNodeError(node_id)
        return list(self._incident[node_id])

    def arc_allowed(self, segment_id, direction):
        return direction == Direction.ALONG or not self.segments[segment_id].oneway

    # ------------------------------------------------------------------
    # Geometry
    # ------------------------------------------------------------------
    def interpolate(self, segment_id, r):
        """Point at fraction `r` of the segment geometry, as (lon, lat)."""
        seg = self.segments[segment_id]
        cum = self._cum_lengths[segment_id]
        coords = seg.geometry.coords
        total = cum[-1]
        if total <= 0.0:
            return tuple(coords[0])
        target = min(max(r, 0.0), 1.0) * total
        i = int(np.searchsorted(cum, target, side="right")) - 1
        i = min(max(i, 0), len(coords) - 2)
        piece = cum[i + 1] - cum[i]
        f = (target - cum[i]) / piece if piece > 0 else 0.0
        (x0, y0), (x1, y1) = coords[i], coords[i + 1]
        return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))

    def project(self, segment_id, lonlat):
        """Orthogonal projection of `lonlat` onto one segment."""
        seg = self.segments[segment_id]
        lon0, lat0 = lonlat
        local = LineString(_to_local(seg.geometry.coords, lon0, lat0))
        length = local.length
        r = local.project(Point(0.0, 0.0)) / length if length > 0 else 0.0
        r = min(max(r, 0.0), 1.0)
        snapped = self.interpolate(segment_id, r)
        return Projection(segment_id, r, geo_distance(lonlat, snapped), snapped)

    def candidates(self, lonlat, radius_m):
        """Projections onto every segment within `radius_m` of `lonlat`."""
        if radius_m <= 0:
            raise ValueError("radius_m must be positive")
        lon, lat = lonlat
        # Degree box padded so no segment inside the disc is missed
        dlat = math.degrees(radius_m / EARTH_RADIUS_M) * 1.05
        coslat = max(math.cos(math.radians(min(abs(lat) + dlat, 89.999))), 1e-9)
        dlon = dlat / coslat
        hits = self._tree.query(box(lon - dlon, lat - dlat, lon + dlon, lat + dlat))
        found = []
        for i in sorted(int(h) for h in hits):
            proj = self.project(self._segment_ids[i], lonlat)
            if proj.perp_dist_m <= radius_m:
                found.append(proj)
        found.sort(key=lambda p: (round(p.perp_dist_m, 6), p.segment_id))
        return found

    def along_distance(self, segment_id, r_from, r_to, direction):
        """Signed progress in the travel direction between two ratios."""
        length = self.segments[segment_id].length_m
        if direction == Direction.ALONG:
            return (r_to - r_from) * length
        return (r_from - r_to) * length

    # ------------------------------------------------------------------
    # Routing
    # ------------------------------------------------------------------
    def ete_route(self, from_node, to_node, banned_arcs=frozenset(), cutoff=None):
        """Shortest directed route between two nodes.

        `banned_arcs` holds ``(segment_id, Direction)`` arcs that may not be
        used; passing the reverse of the arc a truck arrived on enforces the
        no-U-turn rule. Returns ``(segment_ids, distance_m)``, with an empty
        path and ``inf`` when no route exists within `cutoff`.
        """
        arcs, dist = self.route_arcs(from_node, to_node, banned_arcs, cutoff)
        return [sid for sid, _ in arcs], dist

    def route_arcs(self, from_node, to_node, banned_arcs=frozenset(), cutoff=None):
        for node_id in (from_node, to_node):
            if node_id not in self.nodes:
                raise UnknownNodeError(node_id)
        if from_node == to_node:
            return (), 0.0
        return self._route_cached(from_node, to_node, frozenset(banned_arcs), cutoff)

    def _route_uncached(self, from_node, to_node, banned, cutoff):
        weight = _arc_weight(banned)
        try:
            dist, path = nx.single_source_dijkstra(
                self._digraph, from_node, target=to_node, cutoff=cutoff, weight=weight)
        except nx.NetworkXNoPath:
            return (), math.inf
        arcs = tuple(self._best_arc(u, v, banned) for u, v in zip(path[:-1], path[1:]))
        return arcs, float(dist)

    def _best_arc(self, u, v, banned):
        options = [
            (attr["length"], key)
            for key, attr in self._digraph[u][v].items()
            if key not in banned
        ]
        return min(options)[1]

    def route_between(self, a, b, cutoff=None, backtrack_tolerance_m=0.0):
        """Directed movement from position `a` to position `b`.

        Positions are ``(segment_id, r, Direction)``. Leaving `a` by the
        reverse of its own arc and entering `b` through the reverse of b's
        arc are both U-turns and are excluded. A small backwards step on the
        same arc (GPS jitter of a slow truck) counts as standing still.
        """
        seg_a, r_a, dir_a = a
        seg_b, r_b, dir_b = b
        if not (self.arc_allowed(seg_a, dir_a) and self.arc_allowed(seg_b, dir_b)):
            return Leg(math.inf)
        if seg_a == seg_b and dir_a == dir_b:
            progress = self.along_distance(seg_a, r_a, r_b, dir_a)
            if progress >= -backtrack_tolerance_m:
                return Leg(max(progress, 0.0), (), True)

        sa, sb = self.segments[seg_a], self.segments[seg_b]
        rest_a = sa.length_m * remaining_fraction(r_a, dir_a)
        done_b = sb.length_m * (1.0 - remaining_fraction(r_b, dir_b))
        head, entry = sa.heading_node(dir_a), sb.entry_node(dir_b)
        reverse_a = (seg_a, dir_a.opposite)
        reverse_b = (seg_b, dir_b.opposite)

        if head == entry:
            if (seg_b, dir_b) == reverse_a:
                return Leg(math.inf)
            return Leg(rest_a + done_b)

        arcs, dist = self.route_arcs(head, entry, frozenset((reverse_a, reverse_b)), cutoff)
        if not math.isfinite(dist):
            return Leg(math.inf)
        return Leg(rest_a + dist + done_b, arcs)


def _arc_weight(banned):
    def weight(u, v, keyed):
        # keyed maps arc key -> attributes for every parallel arc u -> v
        best = None
        for key, attr in keyed.items():
            if key in banned:
                continue
            if best is None or attr["length"] < best:
                best = attr["length"]
        return best
    return weight


# ----------------------------------------------------------------------
# Module-level API
# ----------------------------------------------------------------------
def candidates(graph, lonlat, radius_m):
    return graph.candidates(lonlat, radius_m)


def ete_route(graph, from_node, to_node, direction_constraints=frozenset(), cutoff=None):
    return graph.ete_route(from_node, to_node, direction_constraints, cutoff)


def segment_polyline_length(segment):
    return polyline_length(segment.geometry.coords)


def interpolate(graph, segment_id, r):
    return graph.interpolate(segment_id, r)


def along_distance(graph, segment_id, r_from, r_to, direction):
    return graph.along_distance(segment_id, r_from, r_to, direction)


def _network_paths(path):
    path = Path(path)
    if path.is_dir():
        return path / "nodes.csv", path / "edges.csv"
    raise NetworkFormatError(path, 0, "expected a directory holding nodes.csv and edges.csv")


def _read_csv(path, columns, required):
    if not path.exists():
        raise NetworkFormatError(path, 0, "file not found")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise NetworkFormatError(path, 1, f"missing columns: {', '.join(missing)}")
    for col in columns:
        if col not in frame.columns:
            frame[col] = ""
    return frame


def _parse_float(path, line, value, name):
    try:
        result = float(value)
    except ValueError:
        raise NetworkFormatError(path, line, f"{name} is not a number: {value!r}") from None
    if not math.isfinite(result):
        raise NetworkFormatError(path, line, f"{name} is not finite")
    return result


def _parse_bool(path, line, value):
    text = value.strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise NetworkFormatError(path, line, f"oneway must be a boolean, got {value!r}")


def load_network(path, route_cache_size=200_000, length_tolerance=LENGTH_TOLERANCE):
    """Load and validate a two-file CSV network from a directory.

    Line numbers in errors are 1-based file lines (the header is line 1).
    A `length_m` more than `length_tolerance` away from the geometry's
    haversine length is only logged as a warning; the segment is kept.
    """
    nodes_path, edges_path = _network_paths(path)

    nodes = {}
    node_frame = _read_csv(nodes_path, ["node_id", "lon", "lat"], ["node_id", "lon", "lat"])
    for idx, row in enumerate(node_frame.itertuples(index=False)):
        line = idx + 2
        node_id = row.node_id.strip()
        if not node_id:
            raise NetworkFormatError(nodes_path, line, "empty node_id")
        if node_id in nodes:
            raise NetworkFormatError(nodes_path, line, f"duplicate node_id {node_id!r}")
        lon = _parse_float(nodes_path, line, row.lon, "lon")
        lat = _parse_float(nodes_path, line, row.lat, "lat")
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            raise NetworkFormatError(nodes_path, line, f"coordinates out of range for {node_id!r}")
        nodes[node_id] = RoadNode(node_id, lon, lat)

    columns = ["segment_id", "from_node", "to_node", "length_m", "road_class", "oneway", "geometry_wkt"]
    edge_frame = _read_csv(edges_path, columns, columns[:6])
    segments = {}
    for idx, row in enumerate(edge_frame.itertuples(index=False)):
        line = idx + 2
        seg_id = row.segment_id.strip()
        if not seg_id:
            raise NetworkFormatError(edges_path, line, "empty segment_id")
        if seg_id in segments:
            raise NetworkFormatError(edges_path, line, f"duplicate segment_id {seg_id!r}")
        from_node, to_node = row.from_node.strip(), row.to_node.strip()
        for ref in (from_node, to_node):
            if ref not in nodes:
                raise NetworkFormatError(edges_path, line, f"dangling node reference {ref!r}")
        if from_node == to_node:
            raise NetworkFormatError(edges_path, line, "from_node equals to_node")
        length = _parse_float(edges_path, line, row.length_m, "length_m")
        if length <= 0:
            raise NetworkFormatError(edges_path, line, f"non-positive length_m {length}")
        road_class = row.road_class.strip().lower()
        if road_class not in ROAD_CLASSES:
            raise NetworkFormatError(edges_path, line, f"unknown road_class {row.road_class!r}")
        oneway = _parse_bool(edges_path, line, row.oneway)
        if road_class == "expressway" and not oneway:
            raise NetworkFormatError(edges_path, line, "expressway segments must be oneway")

        start, end = nodes[from_node], nodes[to_node]
        if row.geometry_wkt.strip():
            try:
                geometry = wkt.loads(row.geometry_wkt)
            except ShapelyError as e:
                raise NetworkFormatError(edges_path, line, f"bad geometry_wkt: {e}") from None
            if geometry.geom_type != "LineString" or len(geometry.coords) < 2:
                raise NetworkFormatError(edges_path, line, "geometry_wkt must be a LINESTRING")
        else:
            geometry = LineString([(start.lon, start.lat), (end.lon, end.lat)])

        segment = RoadSegment(seg_id, from_node, to_node, length, road_class, oneway, geometry)
        # length_m stays as given even when the geometry disagrees
        geodesic = segment_polyline_length(segment)
        if geodesic > 0 and abs(length - geodesic) > length_tolerance * geodesic:
            logger.warning("%s:%d: length_m %.1f deviates from geometry length %.1f",
                           edges_path, line, length, geodesic)
        segments[seg_id] = segment

    graph = RoadGraph(nodes.values(), segments.values(), route_cache_size)
    logger.info("Loaded network %s: %d nodes, %d segments", path, len(nodes), len(segments))
    return graph


def write_network(graph, directory):
    """Write `graph` in the format `load_network` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nodes = pd.DataFrame(
        [(n.node_id, n.lon, n.lat) for n in graph.nodes.values()],
        columns=["node_id", "lon", "lat"],
    )
    edges = pd.DataFrame(
        [
            (s.segment_id, s.from_node, s.to_node, s.length_m, s.road_class,
             int(s.oneway), to_wkt(s.geometry, rounding_precision=9))
            for s in graph.segments.values()
        ],
        columns=["segment_id", "from_node", "to_node", "length_m", "road_class", "oneway", "geometry_wkt"],
    )
    nodes.to_csv(directory / "nodes.csv", index=False, float_format="%.9f", lineterminator="\n")
    edges.to_csv(directory / "edges.csv", index=False, float_format="%.6f", lineterminator="\n")
    return directory / "nodes.csv", directory / "edges.csv"
