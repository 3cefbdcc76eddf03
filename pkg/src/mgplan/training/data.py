"""Training samples: rendered frames with their multi-granularity ground truth."""
from dataclasses import dataclass

import numpy as np

from mgplan.decoder.anchors import fine_future, map_anchors, plan_anchors
from mgplan.planning_head import COMMANDS
from mgplan.scene.render import render_frame
from mgplan.scene.world import make_frame
from mgplan.trajectory import build_gt

FRAME_STEP = 0.5


@dataclass
class Sample:
    scenario: str
    t: float
    frame: object
    grid: object
    gt: object


def goal_time(scn):
    """First expert time at which the route goal is reached (or the last time)."""
    for k in range(scn.n_steps):
        s, _ = scn.route_progress((scn.expert["x"][k], scn.expert["y"][k]))
        if s >= scn.goal_s:
            return float(scn.expert["t"][k])
    return float(scn.expert["t"][-1])


def frame_times(scn, max_frames=None, step=FRAME_STEP):
    """Consecutive 2 Hz instants from the start until the goal is reached."""
    times = np.arange(0.0, goal_time(scn) + 1e-9, step)
    return times[:max_frames] if max_frames else times


def build_samples(scenarios, layout, max_frames=None):
    """Samples grouped per scenario, in time order (memory runs across each group)."""
    groups = []
    for scn in scenarios:
        group = []
        for t in frame_times(scn, max_frames):
            frame = make_frame(scn, float(t))
            group.append(Sample(scn.name, float(t), frame, render_frame(frame, scn.cameras),
                                build_gt(frame.future, layout.specs)))
        groups.append(group)
    return groups


def anchor_data(groups, cfg, seed=0):
    """k-means map and planning anchors from the training samples."""
    pieces, futures = [], {}
    for group in groups:
        for s in group:
            if len(s.frame.map_pieces) and s.frame.map_pieces.shape[1] == cfg.map_points:
                pieces.extend(s.frame.map_pieces)
            futures.setdefault(s.frame.command, []).append(fine_future(s.frame))
    return (map_anchors(np.array(pieces), cfg.n_map, cfg.map_points, seed),
            plan_anchors(futures, len(COMMANDS), cfg.layout.modalities, seed))
