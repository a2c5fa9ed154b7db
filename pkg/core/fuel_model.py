"""Longitudinal-dynamics fuel model and platoon savings.

Traction force balances inertia, air drag (scaled by the drag reduction
coefficient Phi), rolling resistance and grade. Fuel flows only while the
force is non-negative; braking burns nothing.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ProfileError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FuelParams:
    rho_air: float = 1.29
    frontal_area: float = 10.26
    c_d: float = 0.6
    c_r: float = 0.007
    mass_kg: float = 26800.0
    g: float = 9.8
    phi_lead: float = 0.92
    phi_follow: float = 0.72
    psi: float = 0.737
    eta_eng: float = 0.4
    rho_d: float = 44000.0
    dt_s: float = 15.0
    substeps: int = 15

    def __post_init__(self):
        for name in ("rho_air", "frontal_area", "c_d", "c_r", "mass_kg", "g",
                     "phi_lead", "phi_follow", "psi", "eta_eng", "rho_d", "dt_s"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"fuel.{name} must be positive")
        if self.phi_lead > 1 or self.phi_follow > 1:
            raise ConfigError("fuel.phi_lead and fuel.phi_follow must be <= 1")
        if self.eta_eng > 1:
            raise ConfigError("fuel.eta_eng must lie in (0, 1]")
        if self.substeps < 1:
            raise ConfigError("fuel.substeps must be >= 1")

    def as_printed(self):
        """Copy with drag and rolling coefficients as the source table prints them."""
        return replace(self, c_d=0.007, c_r=0.6)


@dataclass
class DrivingProfile:
    """Per-interval kinematics of one truck on the grid.

    Interval k starts at grid step `steps[k]` and lasts one grid step.
    """

    truck_id: str
    steps: np.ndarray
    v: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    role: list = field(default_factory=list)

    def __post_init__(self):
        if not self.role:
            self.role = ["alone"] * len(self.steps)
        if not (len(self.steps) == len(self.v) == len(self.a) == len(self.alpha) == len(self.role)):
            raise ProfileError(f"truck {self.truck_id}: profile arrays differ in length")

    def __len__(self):
        return len(self.steps)

    def select(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return DrivingProfile(self.truck_id, self.steps[mask], self.v[mask], self.a[mask],
                              self.alpha[mask], [r for r, keep in zip(self.role, mask) if keep])


def derive_profile(gridded, graph=None, dt_s=15.0):
    """Speed, acceleration and slope per grid interval.

    `gridded` is one truck's list of GriddedPoint. Only pairs of consecutive
    grid steps form intervals; within each active run the last interval
    keeps zero acceleration.
    """
    points = list(gridded)
    truck_id = points[0].truck_id if points else "?"
    for p, q in zip(points[:-1], points[1:]):
        if q.timestamp <= p.timestamp:
            raise ProfileError(f"truck {truck_id}: non-monotone timestamps at {q.timestamp}")

    steps, v, alpha, run_end = [], [], [], []
    for p, q in zip(points[:-1], points[1:]):
        if q.step != p.step + 1:
            if run_end:
                run_end[-1] = True
            continue
        d = max(q.odometer_m - p.odometer_m, 0.0)
        steps.append(p.step)
        v.append(d / dt_s)
        alpha.append(math.atan((q.altitude_m - p.altitude_m) / d) if d > 0 else 0.0)
        run_end.append(False)
    if run_end:
        run_end[-1] = True

    v = np.asarray(v, dtype=float)
    a = np.zeros_like(v)
    for k in range(len(v) - 1):
        if not run_end[k]:
            a[k] = (v[k + 1] - v[k]) / dt_s
    return DrivingProfile(truck_id, np.asarray(steps, dtype=np.int64), v, a, np.asarray(alpha, dtype=float))


def traction_force(v, a, alpha, phi, params):
    """Engine (positive) or braking (negative) force in newtons."""
    m, g = params.mass_kg, params.g
    drag = 0.5 * params.rho_air * params.frontal_area * params.c_d * np.square(v) * phi
    return m * a + drag + m * g * params.c_r * np.cos(alpha) + m * g * np.sin(alpha)


def fuel_rate(force, v, params):
    """Fuel flow in ml/s; zero while braking."""
    power = np.where(np.asarray(force) >= 0, np.asarray(force) * np.asarray(v), 0.0)
    rate = power / (params.psi * params.eta_eng * params.rho_d)
    return float(rate) if np.ndim(rate) == 0 else rate


def interval_fuel(profile, phi, params, substeps=None):
    """Fuel in ml over every interval of `profile`.

    Acceleration is held constant inside an interval and the rate is
    integrated with the trapezoidal rule on `substeps` sub-intervals.
    `phi` is a scalar or one value per interval.
    """
    if len(profile) == 0:
        return 0.0
    substeps = substeps or params.substeps
    dt = params.dt_s
    phi = np.broadcast_to(np.asarray(phi, dtype=float), profile.v.shape)
    tau = np.linspace(0.0, dt, substeps + 1)
    v = np.maximum(profile.v[:, None] + profile.a[:, None] * tau[None, :], 0.0)
    force = traction_force(v, profile.a[:, None], profile.alpha[:, None], phi[:, None], params)
    rate = np.where(force >= 0, force * v, 0.0) / (params.psi * params.eta_eng * params.rho_d)
    h = dt / substeps
    per_interval = (rate[:, :-1] + rate[:, 1:]).sum(axis=1) * h / 2.0
    return math.fsum(per_interval.tolist())


@dataclass
class SavingsRow:
    pattern_id: int
    coordinable: bool
    overlap_km: float
    mean_headway_m: float
    baseline_ml: float
    platooned_ml: float

    @property
    def saving_pct(self):
        if self.baseline_ml <= 0:
            return 0.0
        return 100.0 * (self.baseline_ml - self.platooned_ml) / self.baseline_ml


@dataclass
class SavingsReport:
    rows: list
    excluded: int
    fleet_baseline_ml: float
    fleet_platooned_ml: float

    @property
    def coordinable_share(self):
        if not self.rows:
            return None
        return sum(1 for r in self.rows if r.coordinable) / len(self.rows)

    @property
    def fleet_saving_pct(self):
        if self.fleet_baseline_ml <= 0:
            return 0.0
        return 100.0 * (self.fleet_baseline_ml - self.fleet_platooned_ml) / self.fleet_baseline_ml


def is_coordinable(summary, coordination_factor=17.0, headway_rule="mean"):
    """Overlap distance longer than `coordination_factor` headways."""
    headway = summary.max_headway_m if headway_rule == "max" else summary.mean_headway_m
    if summary.distance_km is None or headway is None:
        return False
    return summary.distance_km * 1000.0 > coordination_factor * headway


def _covers(profile, runs):
    # every step of a run but its last must start an interval
    inner = [t for run in runs for t in run[:-1]]
    return bool(np.isin(np.asarray(inner, dtype=np.int64), profile.steps).all())


def _roles(pattern, params):
    # (truck, step) -> phi for every timestep of the pattern
    phis = {}
    summary = pattern.summary
    for run, order in zip(summary.runs, summary.run_orders):
        for rank, truck in enumerate(order):
            phi = params.phi_lead if rank == 0 else params.phi_follow
            for t in run:
                phis[(truck, t)] = phi
    return phis


def platoon_savings(patterns, profiles, params, coordination_factor=17.0, headway_rule="mean"):
    """Per-pattern and fleet fuel with and without coordinated platooning.

    Patterns without a distance summary, or whose trucks have no profile
    interval at some pattern timestep, are excluded and counted.
    """
    rows = []
    excluded = 0
    fleet_phi = {}
    for pid, pattern in enumerate(patterns):
        summary = pattern.summary
        steps = np.asarray(pattern.timesteps, dtype=np.int64)
        covered = summary is not None and summary.distance_km is not None and all(
            truck in profiles and _covers(profiles[truck], summary.runs)
            for truck in pattern.trucks
        )
        if not covered:
            excluded += 1
            continue

        coordinable = is_coordinable(summary, coordination_factor, headway_rule)
        phis = _roles(pattern, params) if coordinable else {}
        baseline, platooned = [], []
        for truck in pattern.trucks:
            profile = profiles[truck]
            part = profile.select(np.isin(profile.steps, steps))
            baseline.append(interval_fuel(part, 1.0, params))
            if coordinable:
                phi = np.array([phis.get((truck, int(s)), 1.0) for s in part.steps])
                platooned.append(interval_fuel(part, phi, params))
                for s, value in zip(part.steps.tolist(), phi.tolist()):
                    key = (truck, s)
                    fleet_phi[key] = min(fleet_phi.get(key, 1.0), value)
            else:
                platooned.append(baseline[-1])
        rows.append(SavingsRow(
            pattern_id=pid,
            coordinable=coordinable,
            overlap_km=summary.distance_km,
            mean_headway_m=summary.mean_headway_m,
            baseline_ml=math.fsum(baseline),
            platooned_ml=math.fsum(platooned),
        ))

    fleet_base, fleet_plat = [], []
    for truck in sorted(profiles):
        profile = profiles[truck]
        fleet_base.append(interval_fuel(profile, 1.0, params))
        phi = np.array([fleet_phi.get((truck, int(s)), 1.0) for s in profile.steps])
        fleet_plat.append(interval_fuel(profile, phi, params))

    if excluded:
        logger.info("Excluded %d patterns without profile coverage", excluded)
    return SavingsReport(rows, excluded, math.fsum(fleet_base), math.fsum(fleet_plat))
