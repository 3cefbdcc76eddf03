"""Closed-loop driving: kinematic bicycle physics at 10 Hz around a planner.

The planner runs every step, but memory slot ``step mod 5`` is the only slot
read and written at that step, so each slot holds history that is 0.5 s old,
the same spacing the planner saw during training.
"""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from mgplan.control import ControlCommand, ControlConfig, Controller, SelectedPlan, select
from mgplan.decoder.memory import MemoryBank
from mgplan.geometry import boxes_overlap, world_to_ego
from mgplan.metrics import aggregate_metrics, open_loop_l2  # noqa: F401  (re-exported)
from mgplan.scene.render import render_frame
from mgplan.scene.world import EGO_LENGTH, EGO_WIDTH, make_frame

STATUSES = ("success", "collision", "timeout", "off_route")


@dataclass
class BicycleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if not self.speed >= 0:
            raise ValueError(f"speed must be non-negative, got {self.speed}")

    @property
    def pose(self):
        return np.array([self.x, self.y, self.heading])


def bicycle_step(s, c, dt, wheelbase=2.8):
    """Forward-Euler kinematic bicycle; speed never goes negative."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return BicycleState(
        x=s.x + s.speed * np.cos(s.heading) * dt,
        y=s.y + s.speed * np.sin(s.heading) * dt,
        heading=s.heading + s.speed / wheelbase * np.tan(c.steering) * dt,
        speed=max(0.0, s.speed + c.acceleration * dt),
    )


@dataclass
class SimConfig:
    dt: float = 0.1
    duration: float = 40.0
    n_slots: int = 5
    goal_tolerance: float = 2.0
    off_route: float = 3.0
    collision_margin: float = 0.1

    def to_dict(self):
        return asdict(self)


@dataclass
class EpisodeResult:
    scenario: str
    family: str
    status: str
    completion: float
    collisions: int
    steps: int
    time: float
    trace: list = field(default_factory=list)
    slots: list = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown episode status {self.status!r}")

    def summary(self):
        return {"scenario": self.scenario, "family": self.family, "status": self.status,
                "completion": self.completion, "collisions": self.collisions, "steps": self.steps,
                "time": self.time}


# --- policies -------------------------------------------------------------------

class ModelPolicy:
    """Planner + selection + controller with a multi-slot memory."""

    def __init__(self, model, control_cfg=ControlConfig(), n_slots=5):
        self.model = model
        self.controller = Controller(control_cfg)
        cfg = model.cfg
        self.memory = MemoryBank(n_slots, {"agent": cfg.k_agent, "map": cfg.k_map, "planning": cfg.k_planning})

    def reset(self):
        self.memory.reset()
        self.controller.reset()

    def __call__(self, step, scn, frame, state, dt):
        self.memory.select(step)
        grid = render_frame(frame, scn.cameras)
        out = self.model(grid, frame.target_point, frame.command, state.speed,
                         self.memory.read(frame.pose, self.model.cfg.dim))
        feats, centers, scores = out.memory_payload()
        self.memory.store(frame.pose, feats, centers, scores)
        sel = select(out.plan)
        return self.controller(sel, state.speed, dt), sel


class OraclePolicy:
    """Follows the route geometry at the expert's speed for the current time."""

    def __init__(self, control_cfg=ControlConfig()):
        self.controller = Controller(control_cfg)

    def reset(self):
        self.controller.reset()

    def __call__(self, step, scn, frame, state, dt):
        s, _ = scn.route_progress(state.pose[:2])
        ahead = world_to_ego(np.stack([scn.route_point(s + d) for d in np.arange(1.0, 21.0)]), state.pose)
        v = scn.expert_speed(step * dt + 0.5)
        heading = np.array([1.0, 0.0])
        longitudinal = np.outer(np.arange(1, 16) * v / 5.0, heading)
        sel = SelectedPlan(0, ahead, "route", longitudinal, "expert", 5.0, "temporal")
        return self.controller(sel, state.speed, dt), sel


class ZeroPolicy:
    def reset(self):
        pass

    def __call__(self, step, scn, frame, state, dt):
        return ControlCommand(0.0, 0.0), None


# --- episodes -------------------------------------------------------------------

def ego_box(state):
    return np.array([state.x, state.y, EGO_LENGTH, EGO_WIDTH, state.heading])


def collides(scn, state, t, margin):
    box = ego_box(state)
    for b in scn.agent_boxes(t):
        if boxes_overlap(box, b, margin):
            return True
    return any(boxes_overlap(box, ob, margin) for ob in scn.obstacles)


def run_episode(scn, policy, cfg=SimConfig(), hook=None):
    """Drive ``scn`` until success, collision, leaving the route, or the time budget.

    ``hook(step, policy)`` runs before each policy call (tests use it to tamper with memory).
    """
    policy.reset()
    e = scn.ego
    state = BicycleState(e["x"], e["y"], e["heading"], e["speed"])
    wheelbase = getattr(getattr(policy, "controller", None), "cfg", ControlConfig()).wheelbase
    n_steps = int(round(cfg.duration / cfg.dt))
    trace, slots = [], []
    status = "timeout"
    yaw_rate = 0.0
    step = 0
    for step in range(n_steps):
        t = step * cfg.dt
        if hook is not None:
            hook(step, policy)
        frame = make_frame(scn, t, pose=state.pose, speed=state.speed, yaw_rate=yaw_rate)
        cmd, sel = policy(step, scn, frame, state, cfg.dt)
        if hasattr(policy, "memory"):
            slots.append(step % policy.memory.n_slots)
        trace.append({"t": t, "x": state.x, "y": state.y, "heading": state.heading, "speed": state.speed,
                      "steering": cmd.steering, "acceleration": cmd.acceleration,
                      "source": sel.source if sel else "none",
                      "modality": sel.modality if sel else None,
                      "style_bin": sel.style_bin if sel else None})
        new = bicycle_step(state, cmd, cfg.dt, wheelbase)
        yaw_rate = (new.heading - state.heading) / cfg.dt
        state = new
        t_next = t + cfg.dt
        if collides(scn, state, t_next, cfg.collision_margin):
            status = "collision"
            break
        s, lateral = scn.route_progress(state.pose[:2])
        if s >= scn.goal_s - cfg.goal_tolerance:
            status = "success"
            break
        if abs(lateral) > cfg.off_route:
            status = "off_route"
            break
    s, _ = scn.route_progress(state.pose[:2])
    completion = 1.0 if status == "success" else float(np.clip(s / scn.goal_s, 0.0, 1.0))
    return EpisodeResult(scn.name, scn.family, status, completion, int(status == "collision"),
                         step + 1, (step + 1) * cfg.dt, trace, slots)


TRACE_FIELDS = ("t", "x", "y", "heading", "speed", "steering", "acceleration", "source")


def write_trace(path, result):
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=TRACE_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(result.trace)


def write_summary(path, results, extra=None):
    report = {"summary": aggregate_metrics(results), "episodes": [r.summary() for r in results]}
    report.update(extra or {})
    with open(path, "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
    return report
