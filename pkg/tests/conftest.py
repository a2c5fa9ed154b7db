import pytest

from core.map_matcher import HmmParams
from helpers import build_graph


@pytest.fixture
def line_graph():
    """Three 1 km bidirectional trunk segments heading east: s0, s1, s2."""
    points = {f"a{k}": (1000.0 * k, 0.0) for k in range(4)}
    edges = [(f"s{k}", f"a{k}", f"a{k + 1}", "trunk", False) for k in range(3)]
    return build_graph(points, edges)


@pytest.fixture
def oneway_graph():
    """Three 1 km oneway expressway segments heading east."""
    points = {f"a{k}": (1000.0 * k, 0.0) for k in range(4)}
    edges = [(f"s{k}", f"a{k}", f"a{k + 1}", "expressway", True) for k in range(3)]
    return build_graph(points, edges)


@pytest.fixture
def junction_graph():
    """Trunk approaches from the west (w) and south (s) merging onto an expressway (e, e2) at J."""
    points = {"W": (-1000.0, 0.0), "S": (0.0, -1000.0), "J": (0.0, 0.0), "E": (1000.0, 0.0), "E2": (2000.0, 0.0)}
    edges = [
        ("w", "W", "J", "trunk", False),
        ("s", "S", "J", "trunk", False),
        ("e", "J", "E", "expressway", True),
        ("e2", "E", "E2", "expressway", True),
    ]
    return build_graph(points, edges)


@pytest.fixture
def parallel_graph():
    """An eastbound expressway with a trunk road 30 m to its north."""
    points = {"x0": (0.0, 0.0), "x1": (1000.0, 0.0), "y0": (0.0, 30.0), "y1": (1000.0, 30.0)}
    edges = [("exp", "x0", "x1", "expressway", True), ("trk", "y0", "y1", "trunk", False)]
    return build_graph(points, edges)


@pytest.fixture
def hmm_params():
    return HmmParams()
