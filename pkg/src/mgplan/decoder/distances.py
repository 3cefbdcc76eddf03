"""Anchor-to-anchor distances that penalize geometric attention.

Agents are points (box centers), map elements are vertex sets and the
distance involving a vertex set is the minimum over its vertices. Planning
queries carry no distance constraint, so their rows and columns are zero.
"""
from dataclasses import dataclass

import numpy as np

ROLES = ("agent-agent", "agent-map", "map-map", "planning-row")


@dataclass
class DistanceMatrix:
    values: np.ndarray
    role: str

    def __post_init__(self):
        if self.role not in ROLES and self.role != "unified":
            raise ValueError(f"unknown distance role {self.role!r}")


def _point_sets(a, b):
    """Minimum distance between every pair of point sets ``A x P x 2`` and ``B x Q x 2``."""
    d = np.linalg.norm(a[:, None, :, None, :] - b[None, :, None, :, :], axis=-1)
    return d.min(axis=(2, 3))


def agent_agent(centers):
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    return np.linalg.norm(c[:, None] - c[None], axis=-1)


def agent_map(centers, polylines):
    c = np.asarray(centers, dtype=float).reshape(-1, 1, 2)
    return _point_sets(c, np.asarray(polylines, dtype=float))


def map_map(polylines):
    p = np.asarray(polylines, dtype=float)
    return _point_sets(p, p)


def build_distances(agent_centers, map_polylines, n_planning):
    """Per-task and unified distance blocks.

    Returns a dict with ``agent-agent``, ``map-map``, ``planning-row`` and a
    ``unified`` ``(N_a + N_m + N_p)`` square matrix ordered agent, map, planning.
    """
    na, nm = len(agent_centers), len(map_polylines)
    aa = agent_agent(agent_centers)
    am = agent_map(agent_centers, map_polylines) if na and nm else np.zeros((na, nm))
    mm = map_map(map_polylines) if nm else np.zeros((0, 0))
    n = na + nm + n_planning
    unified = np.zeros((n, n))
    unified[:na, :na] = aa
    unified[:na, na:na + nm] = am
    unified[na:na + nm, :na] = am.T
    unified[na:na + nm, na:na + nm] = mm
    return {
        "agent-agent": DistanceMatrix(aa, "agent-agent"),
        "agent-map": DistanceMatrix(am, "agent-map"),
        "map-map": DistanceMatrix(mm, "map-map"),
        "planning-row": DistanceMatrix(np.zeros((n_planning, n_planning)), "planning-row"),
        "unified": DistanceMatrix(unified, "unified"),
    }
