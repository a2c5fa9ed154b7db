"""Small graph and snapshot builders shared by the test modules."""

from shapely.geometry import LineString

from core.following_distance import SnapshotTruck
from core.map_matcher import MatchedPoint
from core.resampler import Snapshot
from core.road_graph import Direction, RoadGraph, RoadNode, RoadSegment, offset_lonlat, polyline_length

ORIGIN = (121.5, 41.8)


def build_graph(points, edges):
    """RoadGraph from local coordinates.

    `points` maps node id -> (east_m, north_m); `edges` are
    ``(segment_id, from_node, to_node, road_class, oneway)``.
    """
    nodes = {nid: RoadNode(nid, *offset_lonlat(ORIGIN, east, north)) for nid, (east, north) in points.items()}
    segments = []
    for seg_id, a, b, road_class, oneway in edges:
        geometry = LineString([(nodes[a].lon, nodes[a].lat), (nodes[b].lon, nodes[b].lat)])
        segments.append(RoadSegment(seg_id, a, b, polyline_length(geometry.coords), road_class, oneway, geometry))
    return RoadGraph(nodes.values(), segments)


def place(graph, truck_id, segment_id, r, direction=Direction.ALONG, timestamp=0.0):
    """A SnapshotTruck at ratio `r` of `segment_id`."""
    point = MatchedPoint(truck_id, timestamp, segment_id, r, direction, graph.interpolate(segment_id, r))
    return SnapshotTruck.from_matched(point, graph)


def snapshot(*trucks, timestep=0):
    return Snapshot(timestep, tuple(sorted(trucks, key=lambda t: t.truck_id)))
