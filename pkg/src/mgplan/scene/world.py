"""Synthetic driving scenarios and their ego-frame views.

Scenario file schema (JSON, ``schema == "mgplan.scenario/1"``)::

    name, family, seed, dt, duration    identification and time base (s)
    command                             one of planning_head.COMMANDS
    route        [[x, y], ...]          world-frame centerline the ego should follow
    goal_s                              arc length along ``route`` that counts as arrival
    ego          {x, y, heading, speed} initial ego state
    agents       [{kind, length, width, states: [[x, y, heading], ...]}]
                                        scripted agents sampled every ``dt`` from t = 0
    obstacles    [[x, y, length, width, heading], ...]
    map_polylines [[[x, y], ...], ...]  lane boundaries and centerlines
    cameras      [CameraModel.to_dict(), ...]
    expert       {t, x, y, heading, speed}  reference driving, sampled every ``dt``

Floats are written with full precision, so loading a file reproduces the
in-memory scenario exactly.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from mgplan.errors import ContractError, DataError
from mgplan.geometry import project_to_polyline, world_to_ego, wrap_angle
from mgplan.planning_head import COMMANDS
from mgplan.scene.camera import CameraModel
from mgplan.trajectory import Trajectory

SCHEMA = "mgplan.scenario/1"
FAMILIES = ("emergency_brake", "obstacle_detour", "unprotected_left", "merge", "overtake",
            "pedestrian_yield")
EGO_LENGTH, EGO_WIDTH = 4.5, 2.0
PERCEPTION_RANGE = ((-10.0, 40.0), (-15.0, 15.0))


@dataclass
class Agent:
    kind: str
    length: float
    width: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64).reshape(-1, 3)

    def state_at(self, t, dt):
        f = np.clip(t / dt, 0, len(self.states) - 1)
        i = int(np.floor(f))
        j = min(i + 1, len(self.states) - 1)
        a = f - i
        s0, s1 = self.states[i], self.states[j]
        heading = s0[2] + a * float(wrap_angle(s1[2] - s0[2]))
        return np.array([s0[0] + a * (s1[0] - s0[0]), s0[1] + a * (s1[1] - s0[1]), heading])

    def box_at(self, t, dt):
        x, y, h = self.state_at(t, dt)
        return np.array([x, y, self.length, self.width, h])


@dataclass
class Scenario:
    name: str
    family: str
    seed: int
    dt: float
    duration: float
    command: str
    route: np.ndarray
    goal_s: float
    ego: dict
    agents: list
    obstacles: np.ndarray
    map_polylines: list
    cameras: list
    expert: dict
    route_cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.route = np.asarray(self.route, dtype=np.float64)
        self.obstacles = np.asarray(self.obstacles, dtype=np.float64).reshape(-1, 5)
        self.map_polylines = [np.asarray(p, dtype=np.float64) for p in self.map_polylines]
        self.expert = {k: np.asarray(v, dtype=np.float64) for k, v in self.expert.items()}
        seg = np.linalg.norm(np.diff(self.route, axis=0), axis=1)
        self.route_cumulative = np.concatenate([[0.0], np.cumsum(seg)])
        if not self.cameras:
            raise ContractError("scenario needs at least one camera")
        if self.command not in COMMANDS:
            raise ContractError(f"unknown command {self.command!r}")
        start = np.array([self.ego["x"], self.ego["y"]])
        if np.hypot(*(start - (self.expert["x"][0], self.expert["y"][0]))) > 1e-9:
            raise ContractError("expert trajectory must start at the ego pose")

    @property
    def command_index(self):
        return COMMANDS.index(self.command)

    @property
    def n_steps(self):
        return len(self.expert["t"])

    def expert_pose(self, t):
        tt = self.expert["t"]
        x = np.interp(t, tt, self.expert["x"])
        y = np.interp(t, tt, self.expert["y"])
        h = np.interp(t, tt, np.unwrap(self.expert["heading"]))
        return np.array([x, y, h])

    def expert_speed(self, t):
        return float(np.interp(t, self.expert["t"], self.expert["speed"]))

    def expert_future(self, t, pose=None, horizon=None):
        """Expert positions from ``t`` onward in the ego frame of ``pose`` (default: expert pose)."""
        pose = self.expert_pose(t) if pose is None else pose
        tt = self.expert["t"]
        k = int(np.searchsorted(tt, t - 1e-9))
        ts = np.concatenate([[t], tt[k:][tt[k:] > t + 1e-9]])
        if horizon is not None:
            ts = ts[ts <= t + horizon + 1e-9]
        if len(ts) < 2:
            ts = np.array([t, t + self.dt])
        xs = np.interp(ts, tt, self.expert["x"])
        ys = np.interp(ts, tt, self.expert["y"])
        pts = world_to_ego(np.stack([xs, ys], -1), pose)
        return Trajectory(pts, ts - t)

    def agent_boxes(self, t):
        if not self.agents:
            return np.zeros((0, 5))
        return np.stack([a.box_at(t, self.dt) for a in self.agents])

    def route_progress(self, xy):
        return project_to_polyline(xy, self.route, self.route_cumulative)

    def route_point(self, s):
        s = np.clip(s, 0.0, self.route_cumulative[-1])
        return np.array([np.interp(s, self.route_cumulative, self.route[:, 0]),
                         np.interp(s, self.route_cumulative, self.route[:, 1])])

    def target_point(self, pose, lookahead=20.0):
        """Route point ``lookahead`` meters past the ego's projection, capped at the goal, in ego frame."""
        s, _ = self.route_progress(pose[:2])
        return world_to_ego(self.route_point(min(s + lookahead, self.goal_s)), pose)

    # --- serialization ---------------------------------------------------------

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "name": self.name,
            "family": self.family,
            "seed": int(self.seed),
            "dt": self.dt,
            "duration": self.duration,
            "command": self.command,
            "route": self.route.tolist(),
            "goal_s": self.goal_s,
            "ego": {k: float(v) for k, v in self.ego.items()},
            "agents": [dict(kind=a.kind, length=a.length, width=a.width, states=a.states.tolist())
                       for a in self.agents],
            "obstacles": self.obstacles.tolist(),
            "map_polylines": [p.tolist() for p in self.map_polylines],
            "cameras": [c.to_dict() for c in self.cameras],
            "expert": {k: v.tolist() for k, v in self.expert.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise DataError(f"unsupported scenario schema {d.get('schema')!r}")
        try:
            return cls(
                name=d["name"], family=d["family"], seed=d["seed"], dt=d["dt"], duration=d["duration"],
                command=d["command"], route=d["route"], goal_s=d["goal_s"], ego=d["ego"],
                agents=[Agent(a["kind"], a["length"], a["width"], a["states"]) for a in d["agents"]],
                obstacles=d["obstacles"], map_polylines=d["map_polylines"],
                cameras=[CameraModel.from_dict(c) for c in d["cameras"]], expert=d["expert"],
            )
        except (KeyError, TypeError, ContractError) as exc:
            raise DataError(f"invalid scenario: {exc}") from None

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path):
        with open(path, "w") as fp:
            fp.write(self.dumps())

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fp:
                d = json.load(fp)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc.msg}", line=exc.lineno) from None
        return cls.from_dict(d)


@dataclass
class Frame:
    """Everything the model and losses need at one instant, in the ego frame."""

    t: float
    pose: np.ndarray
    agent_boxes: np.ndarray
    agent_futures: np.ndarray
    agent_future_valid: np.ndarray
    obstacles: np.ndarray
    map_polylines: list
    map_pieces: np.ndarray
    target_point: np.ndarray
    command: int
    ego_status: np.ndarray
    future: Trajectory = None


def in_range(xy):
    (x0, x1), (y0, y1) = PERCEPTION_RANGE
    xy = np.asarray(xy)
    return (xy[..., 0] >= x0) & (xy[..., 0] <= x1) & (xy[..., 1] >= y0) & (xy[..., 1] <= y1)


def map_pieces(polylines, pose, piece_len=20.0, n_points=6):
    """Cut world polylines into ``piece_len`` chunks resampled to ``n_points``; keep
    chunks whose midpoint is in perception range, in ego frame."""
    out = []
    for pl in polylines:
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pl, axis=0), axis=1))])
        start = 0.0
        while start < cum[-1] - 1e-6:
            s = np.linspace(start, min(start + piece_len, cum[-1]), n_points)
            pts = np.stack([np.interp(s, cum, pl[:, 0]), np.interp(s, cum, pl[:, 1])], -1)
            ego = world_to_ego(pts, pose)
            if in_range(ego[n_points // 2]):
                out.append(ego)
            start += piece_len
    return np.array(out).reshape(-1, n_points, 2)


def make_frame(scn, t, pose=None, speed=None, yaw_rate=None, motion_steps=6, motion_hz=2.0):
    expert = pose is None
    pose = scn.expert_pose(t) if expert else np.asarray(pose, dtype=float)
    boxes = scn.agent_boxes(t)
    ego_boxes, futures, valid = [], [], []
    for a, b in zip(scn.agents, boxes):
        c = world_to_ego(b[:2], pose)
        if not in_range(c):
            continue
        ego_boxes.append([c[0], c[1], b[2], b[3], float(wrap_angle(b[4] - pose[2]))])
        ts = t + np.arange(1, motion_steps + 1) / motion_hz
        fut = np.stack([a.state_at(tt, scn.dt)[:2] for tt in ts])
        futures.append(world_to_ego(fut, pose) - c)
        valid.append(ts <= scn.duration + 1e-9)
    obstacles = []
    for x, y, l, w, h in scn.obstacles:
        c = world_to_ego((x, y), pose)
        obstacles.append([c[0], c[1], l, w, float(wrap_angle(h - pose[2]))])
    if speed is None:
        speed = scn.expert_speed(t)
    if yaw_rate is None:
        h0 = scn.expert_pose(max(t - scn.dt, 0.0))[2]
        h1 = scn.expert_pose(min(t + scn.dt, scn.duration))[2]
        span = min(t + scn.dt, scn.duration) - max(t - scn.dt, 0.0)
        yaw_rate = (h1 - h0) / span if span > 0 else 0.0
    return Frame(
        t=t,
        pose=pose,
        agent_boxes=np.array(ego_boxes).reshape(-1, 5),
        agent_futures=np.array(futures).reshape(-1, motion_steps, 2),
        agent_future_valid=np.array(valid, dtype=bool).reshape(-1, motion_steps),
        obstacles=np.array(obstacles).reshape(-1, 5),
        map_polylines=[world_to_ego(p, pose) for p in scn.map_polylines],
        map_pieces=map_pieces(scn.map_polylines, pose),
        target_point=scn.target_point(pose),
        command=scn.command_index,
        ego_status=np.array([speed, yaw_rate]),
        future=scn.expert_future(t) if expert else None,
    )
