import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

from .aoptics import ClusterParams
from .errors import ConfigError
from .fuel_model import FuelParams
from .map_matcher import HmmParams
from .pattern_miner import MineParams

logger = logging.getLogger(__name__)

# Where each default comes from: "published" values are printed in the source
# study, "chosen" ones are engineering picks, "resolved" ones settle a
# contradiction or gap in the printed description.
PROVENANCE = {
    "road_graph.length_tolerance": "chosen",
    "road_graph.route_cache_size": "chosen",
    "map_match.match_radius_m": "chosen",
    "map_match.emission_sigma_m": "chosen",
    "map_match.transition_beta": "chosen",
    "map_match.speed_weight": "chosen",
    "map_match.max_skip": "chosen",
    "map_match.max_speed_mps": "chosen",
    "map_match.backtrack_tolerance_m": "chosen",
    "map_match.max_route_m": "chosen",
    "follow_dist.ete_cutoff_factor": "chosen",
    "cluster.eps_km": "published",
    "cluster.min_pts": "published",
    "cluster.delta": "published",
    "cluster.theta_thresh_deg": "published",
    "cluster.lambda_thresh": "published",
    "mine.min_o": "published",
    "mine.min_t": "published",
    "mine.logical": "published",
    "mine.apriori": "published",
    "mine.subset": "published",
    "mine.marginal": "published",
    "fuel.rho_air": "published",
    "fuel.frontal_area": "published",
    "fuel.c_d": "resolved",
    "fuel.c_r": "resolved",
    "fuel.mass_kg": "published",
    "fuel.g": "published",
    "fuel.phi_lead": "published",
    "fuel.phi_follow": "published",
    "fuel.psi": "published",
    "fuel.eta_eng": "published",
    "fuel.rho_d": "published",
    "fuel.substeps": "chosen",
    "fuel.printed_coefficients": "resolved",
    "fuel.coordination_factor": "published",
    "fuel.headway_rule": "resolved",
    "metrics.per_gap_headway": "resolved",
    "metrics.window_s": "published",
    "metrics.haul_bucket_km": "chosen",
    "metrics.min_platoon_duration_s": "published",
    "metrics.min_platoon_distance_km": "published",
    "pipeline.dt_grid_s": "published",
    "pipeline.staleness_s": "chosen",
    "pipeline.network_dir": "chosen",
    "pipeline.trajectories": "chosen",
    "pipeline.out_dir": "chosen",
    "pipeline.threads": "chosen",
    "synth.seed": "chosen",
    "synth.template": "chosen",
    "synth.n_background": "chosen",
    "synth.n_segments": "chosen",
    "synth.segment_length_m": "chosen",
    "synth.speed_mps": "chosen",
    "synth.gps_sigma_m": "chosen",
    "synth.jitter_s": "chosen",
    "synth.dropout": "chosen",
    "synth.sample_interval_s": "chosen",
    "synth.start_time_s": "chosen",
    "synth.platoons": "chosen",
}


@dataclass(frozen=True)
class MetricsParams:
    per_gap_headway: bool = False
    window_s: float = 300.0
    haul_bucket_km: float = 100.0
    min_platoon_duration_s: float = 600.0
    min_platoon_distance_km: float = 10.0

    def __post_init__(self):
        if not self.window_s > 0:
            raise ConfigError("metrics.window_s must be positive")
        if not self.haul_bucket_km > 0:
            raise ConfigError("metrics.haul_bucket_km must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    """Typed, validated view of the settings a pipeline run needs."""

    hmm: HmmParams = field(default_factory=HmmParams)
    cluster: ClusterParams = field(default_factory=ClusterParams)
    fuel: FuelParams = field(default_factory=FuelParams)
    mine: MineParams = field(default_factory=MineParams)
    metrics: MetricsParams = field(default_factory=MetricsParams)
    dt_grid_s: float = 15.0
    staleness_s: float = 30.0
    coordination_factor: float = 17.0
    headway_rule: str = "mean"
    route_cache_size: int = 200_000
    length_tolerance: float = 0.01
    network_dir: str = None
    trajectories: str = None
    out_dir: str = "out"
    threads: int = None

    def __post_init__(self):
        if not self.dt_grid_s > 0:
            raise ConfigError("pipeline.dt_grid_s must be positive")
        if self.staleness_s < self.dt_grid_s:
            raise ConfigError("pipeline.staleness_s must be >= pipeline.dt_grid_s")
        if self.headway_rule not in ("mean", "max"):
            raise ConfigError("fuel.headway_rule must be 'mean' or 'max'")
        if not self.coordination_factor > 0:
            raise ConfigError("fuel.coordination_factor must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("pipeline.threads must be >= 1")
        steps = self.metrics.window_s / self.dt_grid_s
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("metrics.window_s must be a multiple of pipeline.dt_grid_s")

    @property
    def window_steps(self):
        return int(round(self.metrics.window_s / self.dt_grid_s))


class SettingsManager:
    """Manage run settings stored in a JSON file.

    Responsibilities:
    - Provide default settings, one section per module
    - Load settings from disk (merged over the defaults per section)
    - Save settings back to disk
    - Provide dotted get/set accessors and a typed `PipelineConfig`
    """

    def __init__(self, settings_file="settings.json"):
        self.settings_file = settings_file
        self.settings = self.get_default_settings()

    def get_default_settings(self):
        """Return a fresh nested dict of defaults."""
        return {
            "road_graph": {
                "length_tolerance": 0.01,  # warn when length_m and geometry disagree by more
                "route_cache_size": 200000,
            },
            "map_match": {
                "match_radius_m": 50.0,
                "emission_sigma_m": 20.0,  # GPS noise scale
                "transition_beta": 200.0,
                "speed_weight": 0.05,
                "max_skip": 4,
                "max_speed_mps": 50.0,  # ~180 km/h, fixes implying more are dropped
                "backtrack_tolerance_m": 30.0,
                "max_route_m": 15000.0,
            },
            "follow_dist": {
                "ete_cutoff_factor": 3.0,  # catch-up distances beyond this many eps do not follow
            },
            "cluster": {
                "eps_km": 1.0,
                "min_pts": 2,
                "delta": 0.5,
                "theta_thresh_deg": 150.0,
                "lambda_thresh": 0.0,
            },
            "mine": {
                "min_o": 2,
                "min_t": 2,
                "logical": True,
                "apriori": True,
                "subset": True,
                "marginal": True,
            },
            "fuel": {
                "rho_air": 1.29,
                "frontal_area": 10.26,
                "c_d": 0.6,
                "c_r": 0.007,
                "mass_kg": 26800.0,
                "g": 9.8,
                "phi_lead": 0.92,
                "phi_follow": 0.72,
                "psi": 0.737,
                "eta_eng": 0.4,
                "rho_d": 44000.0,
                "substeps": 15,
                "printed_coefficients": False,  # true swaps c_d and c_r back as printed
                "coordination_factor": 17.0,
                "headway_rule": "mean",
            },
            "metrics": {
                "per_gap_headway": False,
                "window_s": 300.0,
                "haul_bucket_km": 100.0,
                "min_platoon_duration_s": 600.0,
                "min_platoon_distance_km": 10.0,
            },
            "pipeline": {
                "dt_grid_s": 15.0,
                "staleness_s": 30.0,
                "network_dir": None,
                "trajectories": None,
                "out_dir": "out",
                "threads": None,  # None means one worker per physical core
            },
            "synth": {
                "seed": 7,
                "template": "line",
                "n_background": 2,
                "n_segments": 10,
                "segment_length_m": 1000.0,
                "speed_mps": 22.0,
                "gps_sigma_m": 0.0,
                "jitter_s": 0.0,
                "dropout": 0.0,
                "sample_interval_s": 15.0,
                "start_time_s": 1699999995.0,
                "platoons": [
                    {"members": 3, "start_step": 0, "end_step": 20, "headway_m": 100.0, "route": 0},
                ],
            },
        }

    def load(self, path=None):
        """Read `path` (default: the settings file) and merge it over the defaults.

        A missing file keeps the defaults. Unknown sections or keys raise
        `ConfigError` so typos never go unnoticed.
        """
        path = path or self.settings_file
        self.settings_file = path
        if not os.path.exists(path):
            logger.debug("No settings file at %s, using defaults", path)
            return self.settings
        try:
            with open(path, "r", encoding="utf-8") as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read settings {path}: {e}") from e
        self.merge(loaded)
        logger.debug("Loaded settings from %s", path)
        return self.settings

    def merge(self, overrides):
        """Merge a nested dict of overrides over the current settings."""
        if not isinstance(overrides, dict):
            raise ConfigError("settings must be a JSON object of sections")
        for section, values in overrides.items():
            if section not in self.settings:
                raise ConfigError(f"unknown settings section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"settings section {section!r} must be an object")
            for key, value in values.items():
                if key not in self.settings[section]:
                    raise ConfigError(f"unknown setting {section}.{key}")
                self.settings[section][key] = value

    def save(self, path=None):
        """Persist current settings to disk as pretty JSON."""
        path = path or self.settings_file
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.settings, f, indent=2)
            f.write("\n")

    def get(self, key, default=None):
        """Return a section (``"cluster"``) or a leaf (``"cluster.eps_km"``)."""
        node = self.settings
        for part in key.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key, value):
        """Assign a leaf given as ``"section.key"``."""
        section, _, leaf = key.partition(".")
        if section not in self.settings or leaf not in self.settings[section]:
            raise ConfigError(f"unknown setting {key}")
        self.settings[section][leaf] = value

    def config_hash(self):
        """SHA-256 of the canonical JSON form of the settings."""
        canonical = json.dumps(self.settings, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def provenance_rows(self):
        """``(key, value, provenance)`` for every leaf, in section order."""
        rows = []
        for section, values in self.settings.items():
            for key, value in values.items():
                name = f"{section}.{key}"
                rows.append((name, value, PROVENANCE.get(name, "chosen")))
        return rows

    def to_config(self):
        """Validated `PipelineConfig` built from the current settings."""
        s = copy.deepcopy(self.settings)
        try:
            pipe = s["pipeline"]
            fuel = s["fuel"]
            printed = fuel.pop("printed_coefficients")
            coordination_factor = fuel.pop("coordination_factor")
            headway_rule = fuel.pop("headway_rule")
            fuel_params = FuelParams(dt_s=float(pipe["dt_grid_s"]), **fuel)
            if printed:
                fuel_params = fuel_params.as_printed()
            return PipelineConfig(
                hmm=HmmParams(**s["map_match"]),
                cluster=ClusterParams(ete_cutoff_factor=s["follow_dist"]["ete_cutoff_factor"], **s["cluster"]),
                fuel=fuel_params,
                mine=MineParams(**s["mine"]),
                metrics=MetricsParams(**s["metrics"]),
                dt_grid_s=float(pipe["dt_grid_s"]),
                staleness_s=float(pipe["staleness_s"]),
                coordination_factor=float(coordination_factor),
                headway_rule=headway_rule,
                route_cache_size=int(s["road_graph"]["route_cache_size"]),
                length_tolerance=float(s["road_graph"]["length_tolerance"]),
                network_dir=pipe["network_dir"],
                trajectories=pipe["trajectories"],
                out_dir=pipe["out_dir"],
                threads=pipe["threads"],
            )
        except TypeError as e:
            raise ConfigError(f"invalid settings: {e}") from e
