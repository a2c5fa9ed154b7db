"""Stage orchestration: match -> resample -> cluster -> mine -> fuel -> report.

Each stage reads its inputs from the output directory and writes its own
artifacts back there, so running the stages one by one from the CLI and
running them all through `Pipeline.run` produce the same files.
"""

import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import psutil

from . import file_ops
from .aoptics import detect_codriving_sets
from .batch_processor import BatchProcessor
from .errors import ConfigError, PlatoonScopeError, StageError
from .fleet_analyzer import FleetAnalyzer, hotspots_geojson, segment_hotspots
from .fuel_model import derive_profile, platoon_savings
from .logger import Logger
from .map_matcher import match_fleet
from .pattern_miner import SnapshotIndex, mine_patterns, summarize_pattern
from .resampler import build_snapshots, resample
from .road_graph import ROAD_CLASSES, load_network

logger = logging.getLogger(__name__)

STAGES = ("match", "resample", "cluster", "mine", "fuel", "report")

ARTIFACTS = {
    "match": ("matched.csv",),
    "resample": ("gridded.csv", "availability.csv"),
    "cluster": ("codriving_sets.csv",),
    "mine": ("patterns.csv", "pattern_timesteps.csv"),
    "fuel": ("savings.csv", "fuel_summary.json"),
    "report": ("metrics_windows.csv", "metrics_timesteps.csv", "fleet_summary.csv", "fleet_trucks.csv",
               "haul_breakdown.csv", "highway_share.csv", "hotspots.csv", "hotspots.geojson"),
}

MANIFEST = "run_manifest.json"
RUN_LOG = "run_log.json"


def _by_step(gridded):
    return {truck: {p.step: p for p in points} for truck, points in gridded.items()}


def _finite_or_none(value):
    return value if value is None or math.isfinite(value) else None


class Pipeline:
    """One configured run over one output directory."""

    def __init__(self, config, graph=None, processor=None, run_log=None, config_hash=None):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self._graph = graph
        self.processor = processor or BatchProcessor(config.threads)
        self.run_log = run_log or Logger(str(self.out_dir / RUN_LOG))
        self.config_hash = config_hash
        self.stage_stats = {}
        self._written = []

    # ------------------------------------------------------------------
    @property
    def graph(self):
        if self._graph is None:
            if not self.config.network_dir:
                raise ConfigError("pipeline.network_dir is not set")
            self._graph = load_network(self.config.network_dir, self.config.route_cache_size,
                                       self.config.length_tolerance)
        return self._graph

    def path(self, name):
        return self.out_dir / name

    def _wrote(self, *paths):
        self._written.extend(Path(p) for p in paths)

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------
    def stage_match(self, trajectories_path=None):
        source = trajectories_path or self.config.trajectories
        if not source:
            raise ConfigError("pipeline.trajectories is not set")
        trajectories = file_ops.read_trajectories(source)
        matched, summary = match_fleet(trajectories, self.graph, self.config.hmm, self.processor)
        self._wrote(file_ops.write_matched(matched, self.path("matched.csv")))
        return {
            "trucks_in": len(trajectories),
            "trucks_matched": len(matched),
            "points_matched": sum(len(v) for v in matched.values()),
            "rejected": summary["failed"],
            "errors": summary["errors"],
        }

    def stage_resample(self):
        matched = file_ops.read_matched(self.path("matched.csv"))
        cfg = self.config
        result = self.processor.process_batch(
            sorted(matched.items()),
            lambda points: resample(points, self.graph, cfg.dt_grid_s, cfg.staleness_s, cfg.hmm),
            label="resample",
        )
        gridded = {truck: points for truck, points in result.results.items() if points}
        _, availability = build_snapshots(gridded, self.graph)
        self._wrote(
            file_ops.write_gridded(gridded, self.path("gridded.csv")),
            file_ops.write_availability(availability, self.path("availability.csv")),
        )
        return {
            "trucks": len(gridded),
            "grid_points": sum(len(v) for v in gridded.values()),
            "timesteps": len(availability),
        }

    def stage_cluster(self):
        gridded = file_ops.read_gridded(self.path("gridded.csv"))
        snapshots, _ = build_snapshots(gridded, self.graph)
        params = self.config.cluster
        result = self.processor.process_batch(
            sorted(snapshots.items()),
            lambda snap: detect_codriving_sets(snap, self.graph, params, snap.timestep),
            label="cluster",
        )
        sets_by_step = {t: sets for t, sets in result.results.items() if sets}
        self._wrote(file_ops.write_codriving_sets(sets_by_step, self.path("codriving_sets.csv")))
        return {
            "timesteps": len(snapshots),
            "sets": sum(len(v) for v in sets_by_step.values()),
            "members": sum(len(s.members) for v in sets_by_step.values() for s in v),
        }

    def stage_mine(self):
        sets_by_step = file_ops.read_codriving_sets(self.path("codriving_sets.csv"))
        gridded = _by_step(file_ops.read_gridded(self.path("gridded.csv")))
        index = SnapshotIndex.from_sets(s for sets in sets_by_step.values() for s in sets)
        patterns = mine_patterns(index, params=self.config.mine, processor=self.processor)
        patterns = [
            replace(p, summary=summarize_pattern(p, gridded, index, self.config.dt_grid_s))
            for p in patterns
        ]
        self._wrote(*file_ops.write_patterns(
            patterns, self.path("patterns.csv"), self.path("pattern_timesteps.csv")))
        return {"patterns": len(patterns), "trucks_indexed": len(index.trucks)}

    def stage_fuel(self):
        patterns = file_ops.read_patterns(self.path("patterns.csv"), self.path("pattern_timesteps.csv"))
        gridded = file_ops.read_gridded(self.path("gridded.csv"))
        cfg = self.config
        profiles = {truck: derive_profile(points, None, cfg.dt_grid_s) for truck, points in gridded.items()}
        report = platoon_savings(patterns, profiles, cfg.fuel, cfg.coordination_factor, cfg.headway_rule)
        summary = {
            "patterns": len(patterns),
            "excluded": report.excluded,
            "coordinable_share": report.coordinable_share,
            "fleet_baseline_ml": report.fleet_baseline_ml,
            "fleet_platooned_ml": report.fleet_platooned_ml,
            "fleet_saving_pct": report.fleet_saving_pct,
        }
        self._wrote(
            file_ops.write_savings(report, self.path("savings.csv")),
            file_ops.write_json(summary, self.path("fuel_summary.json")),
        )
        return {"patterns_costed": len(report.rows), "excluded": report.excluded}

    def stage_report(self):
        cfg = self.config
        patterns = file_ops.read_patterns(self.path("patterns.csv"), self.path("pattern_timesteps.csv"))
        sets_by_step = file_ops.read_codriving_sets(self.path("codriving_sets.csv"))
        availability = file_ops.read_availability(self.path("availability.csv"))
        gridded = _by_step(file_ops.read_gridded(self.path("gridded.csv")))

        analyzer = FleetAnalyzer(
            dt_grid_s=cfg.dt_grid_s,
            per_gap_headway=cfg.metrics.per_gap_headway,
            window_steps=cfg.window_steps,
            haul_bucket_km=cfg.metrics.haul_bucket_km,
            min_duration_s=cfg.metrics.min_platoon_duration_s,
            min_distance_km=cfg.metrics.min_platoon_distance_km,
        )
        analysis = analyzer.analyze(patterns, sets_by_step, availability, gridded)
        hotspots = segment_hotspots(patterns, gridded, self.graph)
        fleet = analysis["fleet"]

        self._wrote(
            file_ops.write_metric_rows(analysis["windows"], self.path("metrics_windows.csv"), cfg.dt_grid_s),
            file_ops.write_metric_rows(analysis["timestep_metrics"], self.path("metrics_timesteps.csv")),
            file_ops.write_table(
                [(k, _finite_or_none(v)) for k, v in analysis["stats"].items()],
                ["metric", "value"], self.path("fleet_summary.csv")),
            file_ops.write_table(
                [(t, fleet.d_m[t], fleet.t_s[t], fleet.pd_m[t], fleet.pt_s[t]) for t in sorted(fleet.d_m)],
                ["truck_id", "d_m", "t_s", "pd_m", "pt_s"], self.path("fleet_trucks.csv")),
            file_ops.write_table(analysis["haul_breakdown"], ["bucket_start_km", "n_trucks", "pdr", "ptr"],
                                 self.path("haul_breakdown.csv")),
            file_ops.write_table(
                [(t,) + tuple(shares[c] for c in ROAD_CLASSES) for t, shares in analysis["highway_share"].items()],
                ["timestep"] + list(ROAD_CLASSES), self.path("highway_share.csv")),
            file_ops.write_table(hotspots, ["segment_id", "count"], self.path("hotspots.csv")),
            file_ops.write_json(hotspots_geojson(hotspots, self.graph), self.path("hotspots.geojson")),
        )
        return {"trucks": fleet.k, "patterns": len(patterns), "segments": len(hotspots)}

    # ------------------------------------------------------------------
    # Orchestration
    # ------------------------------------------------------------------
    def run_stage(self, name, **kwargs):
        """Run one stage, log it, and wrap any failure in `StageError`."""
        if name not in STAGES:
            raise ConfigError(f"unknown stage {name!r}")
        started = time.perf_counter()
        try:
            counts = getattr(self, f"stage_{name}")(**kwargs)
        except StageError:
            raise
        except Exception as e:
            self.run_log.log_error(f"{name}: {e}", action_type="Stage")
            raise StageError(name, e) from e
        wall = time.perf_counter() - started
        self.stage_stats[name] = dict(counts, wall_s=round(wall, 3))
        self.run_log.log_stage(name, self._headline(counts), wall, counts.get("rejected", 0))
        return counts

    @staticmethod
    def _headline(counts):
        for value in counts.values():
            if isinstance(value, int):
                return value
        return 0

    def run(self):
        """Every stage in order, then the manifest. Partial outputs go on failure."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._written = []
        try:
            for name in STAGES:
                self.run_stage(name)
        except PlatoonScopeError:
            file_ops.remove_outputs(self._written)
            raise
        return self.write_manifest()

    def write_manifest(self):
        inputs = {}
        if self.config.trajectories and Path(self.config.trajectories).exists():
            inputs[str(self.config.trajectories)] = file_ops.get_file_hash(self.config.trajectories)
        if self.config.network_dir:
            for name in ("nodes.csv", "edges.csv"):
                p = Path(self.config.network_dir) / name
                if p.exists():
                    inputs[str(p)] = file_ops.get_file_hash(p)
        outputs = {}
        for stage in STAGES:
            for name in ARTIFACTS[stage]:
                p = self.path(name)
                if p.exists():
                    outputs[name] = file_ops.get_file_hash(p)
        manifest = {
            "config_hash": self.config_hash,
            "inputs": inputs,
            "outputs": outputs,
            "stages": self.stage_stats,
            "rss_mb": round(psutil.Process().memory_info().rss / 2 ** 20, 1),
            "workers": self.processor.max_workers,
        }
        return file_ops.write_json(manifest, self.path(MANIFEST))


def run_pipeline(config, graph=None, config_hash=None):
    """Run every stage for `config`; returns the artifact directory."""
    pipeline = Pipeline(config, graph=graph, config_hash=config_hash)
    pipeline.run()
    return pipeline.out_dir

