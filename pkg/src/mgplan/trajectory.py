"""Ground-truth waypoint generation from the ego's future trajectory.

Every waypoint granularity comes from the same future: temporal and
driving-style sets sample it at fixed time steps, spatial sets sample a
piecewise-linear arc-length fit of it at fixed distances.
"""
import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from mgplan.errors import ContractError, DataError, DegeneratePathError

log = logging.getLogger(__name__)

KINDS = ("temporal", "spatial", "driving_style")


@dataclass
class Trajectory:
    points: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(self.points) < 2 or len(self.points) != len(self.timestamps):
            raise ContractError("a trajectory needs >= 2 points with one timestamp each")
        if not np.all(np.diff(self.timestamps) > 0):
            raise ContractError("trajectory timestamps must be strictly increasing")
        if not np.all(np.isfinite(self.points)):
            raise ContractError("trajectory coordinates must be finite")


@dataclass(frozen=True)
class GranularitySpec:
    kind: str
    horizon: int
    frequency_hz: float = None
    interval_m: float = None
    speed_bin: int = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown granularity kind {self.kind!r}")
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.kind in ("temporal", "driving_style") and not (self.frequency_hz and self.frequency_hz > 0):
            raise ContractError(f"{self.kind} granularity needs a positive frequency_hz")
        if self.kind == "spatial" and not (self.interval_m and self.interval_m > 0):
            raise ContractError("spatial granularity needs a positive interval_m")
        if self.kind == "driving_style" and self.speed_bin is None:
            raise ContractError("driving_style granularity needs speed_bin")

    @property
    def id(self):
        if self.kind == "temporal":
            return f"temporal@{self.frequency_hz:g}Hz"
        if self.kind == "spatial":
            return f"spatial@{self.interval_m:g}m"
        return f"style{self.speed_bin}@{self.frequency_hz:g}Hz"

    @classmethod
    def from_id(cls, gid, horizon):
        try:
            head, rate = gid.split("@")
            if head == "temporal":
                return cls("temporal", horizon, frequency_hz=float(rate.removesuffix("Hz")))
            if head == "spatial":
                return cls("spatial", horizon, interval_m=float(rate.removesuffix("m")))
            if head.startswith("style"):
                return cls("driving_style", horizon, frequency_hz=float(rate.removesuffix("Hz")),
                           speed_bin=int(head[5:]))
        except ValueError:
            pass
        raise ContractError(f"cannot parse granularity id {gid!r}")


@dataclass
class WaypointSet:
    spec: GranularitySpec
    waypoints: np.ndarray
    padded: np.ndarray = None

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=np.float64).reshape(-1, 2)
        if self.padded is None:
            self.padded = np.zeros(len(self.waypoints), dtype=bool)
        self.padded = np.asarray(self.padded, dtype=bool)

    @property
    def valid(self):
        return ~self.padded


@dataclass(frozen=True)
class SpeedBins:
    """Left-closed, right-open speed ranges in m/s, given by their boundaries."""

    boundaries: tuple = (0.0, 0.4, 3.0, 10.0)

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if len(b) < 2 or b[0] != 0.0 or not np.all(np.diff(b) > 0):
            raise ContractError("speed bin boundaries must start at 0 and increase")

    @property
    def n_bins(self):
        return len(self.boundaries) - 1

    def range(self, index):
        return self.boundaries[index], self.boundaries[index + 1]

    def representative_speed(self, index):
        lo, hi = self.range(index)
        return 0.5 * (lo + hi)


def classify_speed(speed_mps, bins=SpeedBins()):
    """Index of the bin containing ``speed_mps``; speeds past the top clamp to the last bin."""
    if not speed_mps >= 0:
        raise ContractError(f"speed must be non-negative, got {speed_mps}")
    b = bins.boundaries
    idx = int(np.searchsorted(b, speed_mps, side="right")) - 1
    return min(max(idx, 0), bins.n_bins - 1)


class ArcPath:
    """Continuous piecewise-linear map from arc length to position."""

    def __init__(self, vertices):
        self.vertices = np.asarray(vertices, dtype=np.float64)
        seg = np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self):
        return float(self.cumulative[-1])

    def __call__(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.cumulative, self.vertices[:, 0])
        y = np.interp(s, self.cumulative, self.vertices[:, 1])
        return np.stack([x, y], axis=-1)


def fit_path(traj):
    """Arc-length parameterization of the trajectory polyline.

    Zero-length segments are dropped so the cumulative length is strictly
    increasing and interpolation stays well defined.
    """
    pts = traj.points if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0])
    pts = pts[keep]
    if len(pts) < 2:
        raise DegeneratePathError("all trajectory points coincide")
    return ArcPath(pts)


def resample_spatial(path, interval_m, horizon, spec=None):
    if interval_m <= 0:
        raise ContractError("interval_m must be positive")
    spec = spec or GranularitySpec("spatial", horizon, interval_m=interval_m)
    s = interval_m * np.arange(1, horizon + 1)
    # tolerance keeps the endpoint itself unpadded despite float rounding in the cumsum
    padded = s > path.length * (1 + 1e-12)
    return WaypointSet(spec, path(s), padded)


def resample_temporal(traj, frequency_hz, horizon, spec=None):
    if frequency_hz <= 0:
        raise ContractError("frequency_hz must be positive")
    spec = spec or GranularitySpec("temporal", horizon, frequency_hz=frequency_hz)
    t = np.arange(1, horizon + 1) / frequency_hz
    ts = traj.timestamps
    pts = np.stack([np.interp(t, ts, traj.points[:, 0]), np.interp(t, ts, traj.points[:, 1])], axis=-1)
    padded = t > ts[-1] + 1e-12
    return WaypointSet(spec, pts, padded)


def implied_speeds(waypoints, frequency_hz, origin=(0.0, 0.0)):
    """Speeds of consecutive segments, starting from ``origin``."""
    pts = np.vstack([np.asarray(origin, dtype=float)[None], np.asarray(waypoints, dtype=float)])
    return np.linalg.norm(np.diff(pts, axis=0), axis=1) * frequency_hz


def _speed_at_arclength(traj, s):
    seg = np.linalg.norm(np.diff(traj.points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    speeds = seg / np.diff(traj.timestamps)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(speeds) - 1)
    return speeds[idx]


@dataclass
class GroundTruth:
    sets: dict
    speeds: dict = field(default_factory=dict)
    spatial_padded: bool = False

    def __getitem__(self, gid):
        return self.sets[gid]

    def mean_speed(self, frequency_hz):
        """Mean GT speed over the unpadded temporal horizon at ``frequency_hz``."""
        v = self.speeds[frequency_hz]
        return float(v.mean()) if len(v) else 0.0


def build_gt(traj, specs):
    """Ground truth for every granularity in ``specs`` keyed by spec id.

    Driving-style sets reuse the temporal array at the same frequency, and
    ``speeds`` holds the per-step temporal GT speeds (unpadded steps only).
    """
    sets, speeds = {}, {}
    temporal_cache = {}
    spatial_padded = False
    path = None
    for spec in specs:
        if spec.kind in ("temporal", "driving_style"):
            key = (spec.frequency_hz, spec.horizon)
            if key not in temporal_cache:
                temporal_cache[key] = resample_temporal(traj, spec.frequency_hz, spec.horizon)
            base = temporal_cache[key]
            sets[spec.id] = WaypointSet(spec, base.waypoints, base.padded)
            v = implied_speeds(base.waypoints, spec.frequency_hz, traj.points[0])
            speeds[spec.frequency_hz] = v[base.valid]
        else:
            if path is None and not spatial_padded:
                try:
                    path = fit_path(traj)
                except DegeneratePathError:
                    spatial_padded = True
                    log.debug("stationary future; spatial ground truth fully padded")
            if spatial_padded:
                pts = np.repeat(traj.points[:1], spec.horizon, axis=0)
                sets[spec.id] = WaypointSet(spec, pts, np.ones(spec.horizon, dtype=bool))
            else:
                sets[spec.id] = resample_spatial(path, spec.interval_m, spec.horizon, spec)
    return GroundTruth(sets, speeds, spatial_padded)


def gt_speed_column(traj, wset):
    """Per-waypoint speed for the GT cache: segment speed for timed sets,
    trajectory speed at the waypoint's arc length for spatial sets."""
    spec = wset.spec
    if spec.kind == "spatial":
        s = spec.interval_m * np.arange(1, spec.horizon + 1)
        return _speed_at_arclength(traj, s)
    return implied_speeds(wset.waypoints, spec.frequency_hz, traj.points[0])


GT_COLUMNS = ("granularity_id", "index", "x", "y", "padded", "speed")


def write_gt_csv(fp, traj, gt):
    w = csv.writer(fp)
    w.writerow(GT_COLUMNS)
    for gid, wset in gt.sets.items():
        speed = gt_speed_column(traj, wset)
        for i, (p, pad) in enumerate(zip(wset.waypoints, wset.padded)):
            w.writerow([gid, i, repr(float(p[0])), repr(float(p[1])), int(pad), repr(float(speed[i]))])


def read_waypoint_csv(fp):
    """Parse rows with at least ``granularity_id,index,x,y[,padded]`` into WaypointSets.

    Raises DataError carrying the 1-based line number of the first bad row.
    """
    text = fp.read() if hasattr(fp, "read") else fp
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:4] != ["granularity_id", "index", "x", "y"]:
        raise DataError("expected header starting granularity_id,index,x,y", line=1)
    groups = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            gid, idx, x, y = row[0], int(row[1]), float(row[2]), float(row[3])
            pad = bool(int(row[4])) if len(row) > 4 and "padded" in header else False
        except (ValueError, IndexError) as exc:
            raise DataError(f"bad waypoint row {row!r}: {exc}", line=lineno) from None
        groups.setdefault(gid, []).append((idx, x, y, pad))
    out = {}
    for gid, rows in groups.items():
        rows.sort()
        spec = GranularitySpec.from_id(gid, len(rows))
        out[gid] = WaypointSet(spec, [(r[1], r[2]) for r in rows], [r[3] for r in rows])
    return out


def read_trajectory_csv(fp):
    """Parse ``t,x,y`` rows (header required) into a Trajectory."""
    text = fp.read() if hasattr(fp, "read") else fp
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header[:3]] != ["t", "x", "y"]:
        raise DataError("expected header t,x,y", line=1)
    ts, pts = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            t, x, y = (float(v) for v in row[:3])
        except ValueError as exc:
            raise DataError(f"bad trajectory row {row!r}: {exc}", line=lineno) from None
        ts.append(t)
        pts.append((x, y))
    try:
        return Trajectory(pts, ts)
    except ContractError as exc:
        raise DataError(str(exc)) from None
