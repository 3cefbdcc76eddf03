"""Per-task query features and anchors, and the reference points they project."""
from dataclasses import dataclass, replace

import numpy as np

from mgplan.scene.camera import lift_waypoints


@dataclass
class QuerySet:
    """Agent boxes ``N_a x 5`` (x, y, length, width, heading), map polylines
    ``N_map x P x 2`` and planning waypoints as one ``N_mod x T_j x 2`` tensor
    per granularity. Planning features are modality-major, ``N_mod * N_g x C``.
    """

    agent_feat: object
    agent_anchor: object
    map_feat: object
    map_anchor: object
    plan_feat: object
    plan_anchor: list

    def __post_init__(self):
        if self.agent_feat.shape[0] != self.agent_anchor.shape[0]:
            raise ValueError("agent features and anchors differ in count")
        if self.map_feat.shape[0] != self.map_anchor.shape[0]:
            raise ValueError("map features and anchors differ in count")
        n_plan = sum(a.shape[0] for a in self.plan_anchor)
        if self.plan_feat.shape[0] != n_plan:
            raise ValueError("planning features and anchors differ in count")
        dims = {self.agent_feat.shape[-1], self.map_feat.shape[-1], self.plan_feat.shape[-1]}
        if len(dims) != 1:
            raise ValueError(f"task feature widths differ: {sorted(dims)}")

    def replace(self, **kw):
        return replace(self, **kw)

    @property
    def n_granularities(self):
        return len(self.plan_anchor)

    @property
    def n_modalities(self):
        return self.plan_anchor[0].shape[0]

    def centers(self):
        """Anchor centers per task in the ego frame (plain arrays)."""
        n_g = self.n_granularities
        plan = np.zeros((self.n_modalities * n_g, 2))
        for j, a in enumerate(self.plan_anchor):
            plan[j::n_g] = a.data.mean(axis=1)
        return {
            "agent": self.agent_anchor.data[:, :2].copy(),
            "map": self.map_anchor.data.mean(axis=1),
            "planning": plan,
        }


def agent_refs(anchor, heights):
    pts = lift_waypoints(anchor[:, :2], heights)
    owner = np.repeat(np.arange(len(anchor)), len(heights))
    return pts, owner


def map_refs(anchor):
    n, p, _ = anchor.shape
    pts = np.concatenate([anchor.reshape(-1, 2), np.zeros((n * p, 1))], axis=1)
    return pts, np.repeat(np.arange(n), p)


def waypoint_subset(horizon, max_points):
    """Evenly spread waypoint indices, always including the last one."""
    if max_points is None or horizon <= max_points:
        return np.arange(horizon)
    return np.unique(np.round(np.linspace(horizon - 1, 0, max_points)[::-1]).astype(int))


def planning_refs(anchors, heights, max_points=None):
    """Lifted waypoints of every planning query; ``owner`` is the query index ``i * N_g + j``.

    ``max_points`` caps the waypoints used per query to keep sampling cheap for long horizons.
    """
    n_g = len(anchors)
    pts, owner = [], []
    for j, a in enumerate(anchors):
        a = a[:, waypoint_subset(a.shape[1], max_points)]
        n_mod, t, _ = a.shape
        pts.append(lift_waypoints(a.reshape(-1, 2), heights))
        owner.append(np.repeat(np.arange(n_mod) * n_g + j, t * len(heights)))
    return np.concatenate(pts), np.concatenate(owner)


def pooling_matrix(owner, n_queries):
    """``Q x R`` matrix averaging each query's references."""
    m = np.zeros((n_queries, len(owner)))
    m[owner, np.arange(len(owner))] = 1.0
    counts = m.sum(axis=1, keepdims=True)
    return m / np.maximum(counts, 1.0)
