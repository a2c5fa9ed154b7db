"""CSV, JSON and GeoJSON artifacts of a pipeline run.

Every writer sorts its rows and uses fixed float formatting, so identical
inputs give byte-identical files.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from collections import defaultdict
from pathlib import Path

import pandas as pd

from .aoptics import CoDrivingSet
from .errors import TrajectoryFormatError
from .map_matcher import MatchedPoint, TruckPoint
from .pattern_miner import PatternSummary, PlatoonPattern, consecutive_runs
from .resampler import GriddedPoint
from .road_graph import Direction

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9f"

TRAJECTORY_COLUMNS = ["truck_id", "timestamp", "lon", "lat", "altitude_m", "speed_mps"]
MATCHED_COLUMNS = ["truck_id", "timestamp", "segment_id", "r", "dir", "snap_lon", "snap_lat", "altitude_m"]
GRIDDED_COLUMNS = MATCHED_COLUMNS + ["step", "odometer_m"]
SET_COLUMNS = ["timestep", "set_id", "truck_id", "segment_id", "r", "dir", "road_class", "order", "offset_m"]
AVAILABILITY_COLUMNS = ["timestep", "road_class", "n_total"]
PATTERN_COLUMNS = ["pattern_id", "truck_ids", "first_ts", "last_ts", "n_timesteps", "duration_s",
                   "distance_km", "mean_headway_m", "n_runs", "max_headway_m"]
PATTERN_STEP_COLUMNS = ["pattern_id", "timestep", "order"]
SAVINGS_COLUMNS = ["pattern_id", "coordinable", "overlap_km", "mean_headway_m",
                   "baseline_ml", "platooned_ml", "saving_pct"]
WINDOW_COLUMNS = ["window_start", "road_class", "n_total", "icr", "ich_m", "ics"]
TIMESTEP_COLUMNS = ["timestep", "road_class", "n_total", "icr", "ich_m", "ics"]

TRUCK_SEP = "|"


def _write_frame(rows, columns, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _read_frame(path, columns, dtypes, required=None):
    path = Path(path)
    if not path.exists():
        raise TrajectoryFormatError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, dtype=dtypes, keep_default_na=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns)
    except ValueError as e:
        raise TrajectoryFormatError(f"{path}: {e}") from e
    missing = [c for c in (required or columns) if c not in frame.columns]
    if missing:
        raise TrajectoryFormatError(f"{path}: missing columns: {', '.join(missing)}")
    return frame


def _optional(value):
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else value


# --- raw trajectories -----------------------------------------------------

def read_trajectories(path):
    """Raw GPS fixes grouped by truck, each list sorted by timestamp."""
    frame = _read_frame(
        path, TRAJECTORY_COLUMNS,
        {"truck_id": str, "timestamp": float, "lon": float, "lat": float,
         "altitude_m": float, "speed_mps": float},
        required=TRAJECTORY_COLUMNS[:5],
    )
    if frame[["timestamp", "lon", "lat"]].isna().any().any():
        raise TrajectoryFormatError(f"{path}: empty timestamp or coordinate")
    has_speed = "speed_mps" in frame.columns
    trajectories = defaultdict(list)
    for row in frame.itertuples(index=False):
        trajectories[row.truck_id].append(TruckPoint(
            truck_id=row.truck_id,
            timestamp=float(row.timestamp),
            lon=float(row.lon),
            lat=float(row.lat),
            altitude_m=0.0 if math.isnan(row.altitude_m) else float(row.altitude_m),
            speed_mps=_optional(float(row.speed_mps)) if has_speed else None,
        ))
    result = {}
    for truck in sorted(trajectories):
        # stable sort keeps duplicate timestamps in file order for the filter
        result[truck] = sorted(trajectories[truck], key=lambda p: p.timestamp)
    logger.info("Read %d fixes for %d trucks from %s", len(frame), len(result), path)
    return result


def write_trajectories(trajectories, path):
    rows = [
        (p.truck_id, p.timestamp, p.lon, p.lat, p.altitude_m, p.speed_mps)
        for truck in sorted(trajectories)
        for p in sorted(trajectories[truck], key=lambda p: p.timestamp)
    ]
    return _write_frame(rows, TRAJECTORY_COLUMNS, path)


# --- matched and gridded points -------------------------------------------

def _matched_row(p):
    return (p.truck_id, p.timestamp, p.segment_id, p.r, int(p.dir),
            p.snapped_lonlat[0], p.snapped_lonlat[1], p.altitude_m)


def write_matched(matched, path):
    rows = [_matched_row(p) for truck in sorted(matched) for p in matched[truck]]
    return _write_frame(rows, MATCHED_COLUMNS, path)


def read_matched(path):
    frame = _read_frame(path, MATCHED_COLUMNS, {"truck_id": str, "segment_id": str})
    matched = defaultdict(list)
    for row in frame.itertuples(index=False):
        matched[row.truck_id].append(MatchedPoint(
            row.truck_id, float(row.timestamp), row.segment_id, float(row.r),
            Direction(int(row.dir)), (float(row.snap_lon), float(row.snap_lat)), float(row.altitude_m),
        ))
    return {truck: matched[truck] for truck in sorted(matched)}


def write_gridded(gridded, path):
    rows = [_matched_row(p) + (p.step, p.odometer_m) for truck in sorted(gridded) for p in gridded[truck]]
    return _write_frame(rows, GRIDDED_COLUMNS, path)


def read_gridded(path):
    frame = _read_frame(path, GRIDDED_COLUMNS, {"truck_id": str, "segment_id": str})
    gridded = defaultdict(list)
    for row in frame.itertuples(index=False):
        gridded[row.truck_id].append(GriddedPoint(
            row.truck_id, float(row.timestamp), row.segment_id, float(row.r),
            Direction(int(row.dir)), (float(row.snap_lon), float(row.snap_lat)), float(row.altitude_m),
            int(row.step), float(row.odometer_m),
        ))
    return {truck: gridded[truck] for truck in sorted(gridded)}


# --- co-driving sets and availability -------------------------------------

def write_codriving_sets(sets_by_step, path):
    rows = []
    for step in sorted(sets_by_step):
        for set_id, s in enumerate(sets_by_step[step]):
            for order, truck in enumerate(s.members):
                seg, r, direction = s.positions[order]
                rows.append((step, set_id, truck, seg, r, int(direction), s.road_class,
                             order, s.offsets_m[order]))
    return _write_frame(rows, SET_COLUMNS, path)


def read_codriving_sets(path):
    frame = _read_frame(path, SET_COLUMNS, {"truck_id": str, "segment_id": str, "road_class": str})
    grouped = defaultdict(list)
    for row in frame.itertuples(index=False):
        grouped[(int(row.timestep), int(row.set_id))].append(row)
    sets_by_step = defaultdict(list)
    for (step, _), rows in sorted(grouped.items()):
        rows.sort(key=lambda r: r.order)
        sets_by_step[step].append(CoDrivingSet(
            timestep=step,
            members=tuple(r.truck_id for r in rows),
            road_class=rows[0].road_class,
            offsets_m=tuple(float(r.offset_m) for r in rows),
            positions=tuple((r.segment_id, float(r.r), Direction(int(r.dir))) for r in rows),
        ))
    return dict(sets_by_step)


def write_availability(availability, path):
    rows = [(step, cls, n) for step in sorted(availability) for cls, n in sorted(availability[step].items())]
    return _write_frame(rows, AVAILABILITY_COLUMNS, path)


def read_availability(path):
    frame = _read_frame(path, AVAILABILITY_COLUMNS, {"road_class": str})
    availability = defaultdict(dict)
    for row in frame.itertuples(index=False):
        availability[int(row.timestep)][row.road_class] = int(row.n_total)
    return dict(availability)


# --- patterns ---------------------------------------------------------------

def write_patterns(patterns, path, steps_path):
    """Pattern table plus one row per (pattern, timestep) with the run's order."""
    rows, step_rows = [], []
    for pid, p in enumerate(patterns):
        s = p.summary
        rows.append((
            pid, TRUCK_SEP.join(p.trucks), p.timesteps[0], p.timesteps[-1], len(p.timesteps),
            s.duration_s if s else None, s.distance_km if s else None,
            s.mean_headway_m if s else None, len(p.runs), s.max_headway_m if s else None,
        ))
        orders = dict(zip(s.runs, s.run_orders)) if s else {}
        for run in p.runs:
            order = TRUCK_SEP.join(orders.get(run, p.trucks))
            step_rows.extend((pid, t, order) for t in run)
    _write_frame(rows, PATTERN_COLUMNS, path)
    _write_frame(step_rows, PATTERN_STEP_COLUMNS, steps_path)
    return path, steps_path


def read_patterns(path, steps_path):
    frame = _read_frame(path, PATTERN_COLUMNS, {"truck_ids": str})
    steps = _read_frame(steps_path, PATTERN_STEP_COLUMNS, {"order": str})
    by_pattern = defaultdict(list)
    for row in steps.itertuples(index=False):
        by_pattern[int(row.pattern_id)].append((int(row.timestep), row.order))

    patterns = []
    for row in frame.itertuples(index=False):
        pid = int(row.pattern_id)
        entries = sorted(by_pattern[pid])
        timesteps = tuple(t for t, _ in entries)
        order_at = dict(entries)
        runs = consecutive_runs(timesteps)
        summary = PatternSummary(
            duration_s=float(row.duration_s),
            distance_km=_optional(float(row.distance_km)),
            mean_headway_m=_optional(float(row.mean_headway_m)),
            max_headway_m=_optional(float(row.max_headway_m)),
            runs=runs,
            run_orders=tuple(tuple(order_at[run[0]].split(TRUCK_SEP)) for run in runs),
            coverage_ok=not math.isnan(float(row.distance_km)),
        )
        patterns.append(PlatoonPattern(tuple(row.truck_ids.split(TRUCK_SEP)), timesteps, summary))
    return patterns


# --- reports ---------------------------------------------------------------

def write_savings(report, path):
    rows = [
        (r.pattern_id, int(r.coordinable), r.overlap_km, r.mean_headway_m,
         r.baseline_ml, r.platooned_ml, r.saving_pct)
        for r in report.rows
    ]
    return _write_frame(rows, SAVINGS_COLUMNS, path)


def write_metric_rows(metrics, path, dt_grid_s=None):
    """Timestep rows, or window rows keyed by start time when `dt_grid_s` is given."""
    rows = []
    for m in metrics:
        key = m.timestep * dt_grid_s if dt_grid_s else m.timestep
        rows.append((key, m.road_class, m.n_total, m.icr, m.ich_m, m.ics))
    return _write_frame(rows, WINDOW_COLUMNS if dt_grid_s else TIMESTEP_COLUMNS, path)


def write_table(rows, columns, path):
    return _write_frame(rows, columns, path)


def write_json(data, path):
    text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"
    return atomic_write_text(path, text)


def atomic_write_text(path, text):
    """Write `text` through a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def get_file_hash(filepath, chunk_size=8192):
    """SHA-256 of a file, read in chunks."""
    hasher = hashlib.sha256()
    with open(filepath, "rb") as f:
        while chunk := f.read(chunk_size):
            hasher.update(chunk)
    return hasher.hexdigest()


def remove_outputs(paths):
    """Delete files a failed stage left behind; returns how many went."""
    removed = 0
    for path in paths:
        try:
            os.remove(path)
            removed += 1
        except FileNotFoundError:
            continue
    if removed:
        logger.info("Removed %d partial outputs", removed)
    return removed
