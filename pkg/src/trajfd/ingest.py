"""Parse, validate, and segment raw trajectory files.

Internal units are strictly seconds and meters; any unit conversion happens
here, once, at parse time. Parsed sets are shifted so the earliest time and
the smallest position are both zero.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Union

import numpy as np

logger = logging.getLogger(__name__)

FOOT_IN_M = 0.3048

TIME_FACTORS = {
    "seconds": 1.0,
    "milliseconds": 1e-3,
    # Frame counters sampled at 10 Hz (NGSIM convention): 1 frame = 0.1 s.
    "frames10": 0.1,
}

POSITION_FACTORS = {
    "meters": 1.0,
    "feet": FOOT_IN_M,
    "kilometers": 1000.0,
}


class IngestError(ValueError):
    """Any unrecoverable problem with a trajectory input file."""


class TrajectoryPoint(NamedTuple):
    time: float
    position: float


@dataclass
class VehicleTrajectory:
    """Time-ordered samples of one vehicle along a 1-D road axis."""

    vehicle_id: str
    times: np.ndarray
    positions: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.times)

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(float(t), float(x)) for t, x in zip(self.times, self.positions)]


@dataclass
class TrajectorySet:
    """A collection of trajectories plus the space-time extent they cover."""

    trajectories: list[VehicleTrajectory]
    units_declared: dict = field(default_factory=dict)

    @property
    def t_min(self) -> float:
        return min(float(t.times[0]) for t in self.trajectories)

    @property
    def t_max(self) -> float:
        return max(float(t.times[-1]) for t in self.trajectories)

    @property
    def x_min(self) -> float:
        return min(float(t.positions.min()) for t in self.trajectories)

    @property
    def x_max(self) -> float:
        return max(float(t.positions.max()) for t in self.trajectories)

    @property
    def T(self) -> float:
        return self.t_max - self.t_min

    @property
    def X(self) -> float:
        return self.x_max - self.x_min

    @property
    def n_points(self) -> int:
        return sum(t.n_points for t in self.trajectories)


@dataclass(frozen=True)
class TrajectorySchema:
    """Column mapping and unit declaration for a delimited trajectory file."""

    vehicle_col: str
    time_col: str
    position_col: str
    time_unit: str = "seconds"
    position_unit: str = "meters"

    def __post_init__(self):
        if self.time_unit not in TIME_FACTORS:
            raise IngestError(f"unknown time unit {self.time_unit!r}")
        if self.position_unit not in POSITION_FACTORS:
            raise IngestError(f"unknown position unit {self.position_unit!r}")


PROFILES = {
    "generic": TrajectorySchema("vehicle_id", "t_s", "x_m", "seconds", "meters"),
    "ngsim": TrajectorySchema("Vehicle_ID", "Frame_ID", "Local_Y", "frames10", "feet"),
}

LANE_COLUMNS = ("Lane_ID", "lane", "lane_id")


def parse_trajectories(source, schema: TrajectorySchema) -> TrajectorySet:
    """Read a delimited trajectory file into a TrajectorySet in SI units.

    `source` may be a path, bytes, or a text/byte stream. Rows are grouped by
    vehicle id and sorted by time; the time and position origins are shifted
    to zero. Vehicles with fewer than 2 points are dropped (counted in
    units_declared["dropped_vehicles"]), malformed rows raise with their line
    number.
    """
    text = _read_text(source)
    lines = text.splitlines()
    if not lines or all(not ln.strip() for ln in lines):
        raise IngestError("empty file")

    delimiter = "\t" if "\t" in lines[0] else ","
    reader = csv.DictReader(lines, delimiter=delimiter)
    if reader.fieldnames is None:
        raise IngestError("empty file")
    for col in (schema.vehicle_col, schema.time_col, schema.position_col):
        if col not in reader.fieldnames:
            raise IngestError(f"missing column {col!r} (have {reader.fieldnames})")
    lane_col = next((c for c in LANE_COLUMNS if c in reader.fieldnames), None)
    if lane_col is not None:
        logger.info("lane column %r present; lanes are aggregated onto one axis", lane_col)

    t_factor = TIME_FACTORS[schema.time_unit]
    x_factor = POSITION_FACTORS[schema.position_unit]

    by_vehicle: dict[str, list[tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            vid = row[schema.vehicle_col]
            t = float(row[schema.time_col]) * t_factor
            x = float(row[schema.position_col]) * x_factor
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"malformed row at line {lineno}: {exc}") from exc
        if vid is None or vid == "":
            raise IngestError(f"malformed row at line {lineno}: empty vehicle id")
        if not (np.isfinite(t) and np.isfinite(x)):
            raise IngestError(f"malformed row at line {lineno}: non-finite value")
        by_vehicle.setdefault(vid, []).append((t, x))

    dropped = 0
    trajectories = []
    for vid in by_vehicle:
        rows = sorted(by_vehicle[vid], key=lambda r: r[0])
        if len(rows) < 2:
            dropped += 1
            continue
        arr = np.asarray(rows, dtype=float)
        trajectories.append(VehicleTrajectory(vid, arr[:, 0].copy(), arr[:, 1].copy()))
    if dropped:
        logger.warning("dropped %d vehicle(s) with < 2 points", dropped)
    if not trajectories:
        raise IngestError("no vehicle has 2 or more points")

    t0 = min(t.times[0] for t in trajectories)
    x0 = min(t.positions.min() for t in trajectories)
    for traj in trajectories:
        traj.times -= t0
        traj.positions -= x0

    meta = {
        "time_unit": schema.time_unit,
        "position_unit": schema.position_unit,
        "dropped_vehicles": dropped,
        "lane_column_ignored": lane_col,
    }
    return TrajectorySet(trajectories, units_declared=meta)


def _read_text(source) -> str:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


@dataclass
class ValidationOutcome:
    trajectory: Optional[VehicleTrajectory]
    rejected: bool
    vehicle_id: str
    duplicates_removed: int = 0
    clamped_points: int = 0
    negative_fraction: float = 0.0
    reason: str = ""


def validate_trajectory(traj: VehicleTrajectory,
                        backward_tolerance: float = 0.01) -> ValidationOutcome:
    """Collapse duplicate timestamps (keep first) and clean backward motion.

    A trajectory whose backward movement exceeds `backward_tolerance` of its
    total absolute movement is rejected; smaller backward blips are clamped
    to the previous position.
    """
    t = np.asarray(traj.times, dtype=float)
    x = np.asarray(traj.positions, dtype=float)

    keep = np.ones(len(t), dtype=bool)
    keep[1:] = np.diff(t) > 0.0
    duplicates = int(len(t) - keep.sum())
    t, x = t[keep], x[keep]

    if len(t) < 2:
        return ValidationOutcome(None, True, traj.vehicle_id, duplicates_removed=duplicates,
                                 reason="fewer than 2 points after removing duplicate timestamps")

    dx = np.diff(x)
    backward = float(-dx[dx < 0].sum())
    total = float(np.abs(dx).sum())
    frac = backward / total if total > 0 else 0.0
    if frac > backward_tolerance:
        return ValidationOutcome(None, True, traj.vehicle_id, duplicates_removed=duplicates,
                                 negative_fraction=frac,
                                 reason=f"backward motion is {frac:.1%} of total movement")

    clamped = int((dx < 0).sum())
    if clamped:
        x = np.maximum.accumulate(x)

    out = VehicleTrajectory(traj.vehicle_id, t, x)
    return ValidationOutcome(out, False, traj.vehicle_id, duplicates_removed=duplicates,
                             clamped_points=clamped, negative_fraction=frac)


def validate_set(ts: TrajectorySet,
                 backward_tolerance: float = 0.01) -> tuple[TrajectorySet, list[ValidationOutcome]]:
    """Validate every trajectory; rejected ones are dropped and reported."""
    kept = []
    rejections = []
    for traj in ts.trajectories:
        outcome = validate_trajectory(traj, backward_tolerance)
        if outcome.rejected:
            rejections.append(outcome)
            logger.warning("rejected vehicle %s: %s", outcome.vehicle_id, outcome.reason)
        else:
            kept.append(outcome.trajectory)
    if not kept:
        raise IngestError("all trajectories rejected by validation")
    meta = dict(ts.units_declared)
    meta["rejected_vehicles"] = len(rejections)
    return TrajectorySet(kept, units_declared=meta), rejections


def segment_contiguous(ts: TrajectorySet, gap_threshold: float) -> list[TrajectorySet]:
    """Split the set along global time gaps longer than `gap_threshold`.

    Every input point lands in exactly one output segment. Sub-trajectories
    reduced to a single point are kept so that the partition is exact; they
    contribute nothing to downstream field estimates.
    """
    if gap_threshold <= 0:
        raise ValueError("gap_threshold must be > 0")

    all_times = np.sort(np.unique(np.concatenate([t.times for t in ts.trajectories])))
    gaps = np.nonzero(np.diff(all_times) > gap_threshold)[0]
    if len(gaps) == 0:
        return [ts]

    # Cut between the last point before each gap and the first point after it.
    cuts = (all_times[gaps] + all_times[gaps + 1]) / 2.0
    edges = np.concatenate([[-np.inf], cuts, [np.inf]])

    segments = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        seg_trajs = []
        for traj in ts.trajectories:
            mask = (traj.times > lo) & (traj.times <= hi)
            if mask.any():
                seg_trajs.append(VehicleTrajectory(
                    traj.vehicle_id, traj.times[mask].copy(), traj.positions[mask].copy()))
        if seg_trajs:
            segments.append(TrajectorySet(seg_trajs, units_declared=dict(ts.units_declared)))
    return segments


def write_canonical_csv(ts: TrajectorySet, path) -> None:
    """Write the canonical trajectory schema `vehicle_id,t_s,x_m` (full precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "t_s", "x_m"])
        for traj in ts.trajectories:
            for t, x in zip(traj.times, traj.positions):
                writer.writerow([traj.vehicle_id, repr(float(t)), repr(float(x))])


def read_canonical_csv(path) -> TrajectorySet:
    return parse_trajectories(path, PROFILES["generic"])
