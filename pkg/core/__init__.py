"""Core package exports.

Re-exports the main classes and entry points so callers can import from
`core` directly (e.g. `from core import Pipeline`).
"""

from .aoptics import ClusterParams, CoDrivingSet, detect_codriving_sets
from .batch_processor import BatchProcessor
from .errors import PlatoonScopeError
from .fleet_analyzer import FleetAnalyzer
from .fuel_model import FuelParams, platoon_savings
from .logger import Logger
from .map_matcher import HmmParams, match_fleet, match_trajectory
from .pattern_miner import MineParams, PlatoonPattern, SnapshotIndex, mine_patterns
from .pipeline import Pipeline, run_pipeline
from .road_graph import RoadGraph, load_network
from .settings_manager import PipelineConfig, SettingsManager
from .synth import ScenarioSpec, generate

__all__ = [
    'BatchProcessor',
    'ClusterParams',
    'CoDrivingSet',
    'FleetAnalyzer',
    'FuelParams',
    'HmmParams',
    'Logger',
    'MineParams',
    'Pipeline',
    'PipelineConfig',
    'PlatoonPattern',
    'PlatoonScopeError',
    'RoadGraph',
    'ScenarioSpec',
    'SettingsManager',
    'SnapshotIndex',
    'detect_codriving_sets',
    'generate',
    'load_network',
    'match_fleet',
    'match_trajectory',
    'mine_patterns',
    'platoon_savings',
    'run_pipeline',
]
