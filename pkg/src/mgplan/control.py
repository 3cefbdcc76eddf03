"""Turn a multi-granularity plan into steering and acceleration.

Spatial waypoints steer (pure pursuit) and timed waypoints set the speed (PID).
When the chosen driving-style waypoints move at a speed outside their own
bin, the longitudinal controller falls back to the plain temporal waypoints.
"""
import csv
from dataclasses import asdict, dataclass

import numpy as np

from mgplan.trajectory import implied_speeds


@dataclass
class ControlConfig:
    wheelbase: float = 2.8
    k_v: float = 1.0
    lookahead_min: float = 2.0
    lookahead_max: float = 8.0
    max_steer: float = 0.6
    max_accel: float = 3.0
    max_brake: float = 6.0
    kp: float = 1.5
    ki: float = 0.1
    kd: float = 0.0
    integral_limit: float = 5.0

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ControlCommand:
    steering: float
    acceleration: float

    @classmethod
    def bounded(cls, steering, acceleration, cfg):
        return cls(float(np.clip(steering, -cfg.max_steer, cfg.max_steer)),
                   float(np.clip(acceleration, -cfg.max_brake, cfg.max_accel)))


@dataclass
class SelectedPlan:
    modality: int
    lateral: np.ndarray
    lateral_id: str
    longitudinal: np.ndarray
    longitudinal_id: str
    frequency_hz: float
    source: str
    style_bin: int = None


def _densest(layout, kind):
    specs = [s for s in layout.specs if s.kind == kind]
    if not specs:
        return None
    if kind == "spatial":
        return min(specs, key=lambda s: s.interval_m)
    return max(specs, key=lambda s: s.frequency_hz)


def consistency_check(waypoints, frequency_hz, bins, bin_index, padded=None):
    """True when the mean implied speed of the unpadded waypoints lies in the bin's ``[lo, hi)``."""
    w = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    if padded is not None:
        w = w[~np.asarray(padded, bool)]
    if len(w) < 2:
        return False
    lo, hi = bins.range(bin_index)
    v = float(implied_speeds(w, frequency_hz).mean())
    return lo <= v < hi


def select(plan, layout=None):
    """Top modality; densest spatial set for steering; style or temporal set for speed."""
    layout = layout or plan.layout
    i = int(np.argmax(plan.modality_scores.data))
    temporal = _densest(layout, "temporal")
    lateral = _densest(layout, "spatial") or temporal
    lat = plan.waypoints_np(lateral.id)[i]
    fallback = plan.waypoints_np(temporal.id)[i]
    if layout.n_d and plan.style_scores is not None:
        b = int(np.argmax(plan.style_scores.data[i]))
        spec = max((s for s in layout.specs if s.kind == "driving_style" and s.speed_bin == b),
                   key=lambda s: s.frequency_hz)
        cand = plan.waypoints_np(spec.id)[i]
        if consistency_check(cand, spec.frequency_hz, layout.bins, b):
            return SelectedPlan(i, lat, lateral.id, cand, spec.id, spec.frequency_hz, "style", b)
        return SelectedPlan(i, lat, lateral.id, fallback, temporal.id, temporal.frequency_hz,
                            "temporal_fallback", b)
    return SelectedPlan(i, lat, lateral.id, fallback, temporal.id, temporal.frequency_hz, "temporal")


def lookahead_point(path, distance):
    """Point ``distance`` meters along the polyline ``origin -> path``, extended past its end."""
    pts = np.vstack([[0.0, 0.0], np.asarray(path, dtype=float).reshape(-1, 2)])
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-9])
    pts = pts[keep]
    if len(pts) < 2:
        return None
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if distance <= cum[-1]:
        return np.array([np.interp(distance, cum, pts[:, 0]), np.interp(distance, cum, pts[:, 1])])
    direction = (pts[-1] - pts[-2]) / seg[-1]
    return pts[-1] + (distance - cum[-1]) * direction


def lateral_control(speed, path, cfg=ControlConfig()):
    """Pure pursuit toward the lookahead point; 0 when the path has no length."""
    ld = float(np.clip(cfg.k_v * speed, cfg.lookahead_min, cfg.lookahead_max))
    p = lookahead_point(path, ld)
    if p is None:
        return 0.0
    dist = float(np.hypot(*p))
    if dist < 1e-9:
        return 0.0
    alpha = np.arctan2(p[1], p[0])
    steer = np.arctan2(2.0 * cfg.wheelbase * np.sin(alpha), dist)
    return float(np.clip(steer, -cfg.max_steer, cfg.max_steer))


class PID:
    def __init__(self, cfg=ControlConfig()):
        self.cfg = cfg
        self.reset()

    def reset(self):
        self.integral = 0.0
        self.prev = None

    def __call__(self, error, dt):
        c = self.cfg
        self.integral = float(np.clip(self.integral + error * dt, -c.integral_limit, c.integral_limit))
        deriv = 0.0 if self.prev is None else (error - self.prev) / dt
        self.prev = error
        return c.kp * error + c.ki * self.integral + c.kd * deriv


def target_speed(waypoints, frequency_hz):
    return float(implied_speeds(np.asarray(waypoints)[:1], frequency_hz)[0])


def longitudinal_control(speed, waypoints, frequency_hz, pid, dt, cfg=ControlConfig()):
    """PID on the first implied segment speed; a standing plan brakes to a stop."""
    target = target_speed(waypoints, frequency_hz)
    a = pid(target - speed, dt)
    if target < 1e-3:
        # standing plan: brake, and never push a stopped car backwards or forwards
        a = min(a, 0.0) if speed > 0 else 0.0
    return float(np.clip(a, -cfg.max_brake, cfg.max_accel))


class Controller:
    """Stateful plan follower owned by one episode."""

    def __init__(self, cfg=ControlConfig()):
        self.cfg = cfg
        self.pid = PID(cfg)

    def reset(self):
        self.pid.reset()

    def __call__(self, selected, speed, dt):
        steer = lateral_control(speed, selected.lateral, self.cfg)
        acc = longitudinal_control(speed, selected.longitudinal, selected.frequency_hz, self.pid, dt, self.cfg)
        return ControlCommand.bounded(steer, acc, self.cfg)


TRACE_FIELDS = ("t", "steering", "acceleration", "source", "modality", "style_bin")


def write_command_trace(path, rows):
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=TRACE_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in TRACE_FIELDS})
