"""Pinhole cameras mounted on the ego vehicle.

Ego frame: x forward, y left, z up. Camera frame: x right, y down, z along
the optical axis. ``X_cam = R @ X_ego + t``.
"""
from dataclasses import dataclass

import numpy as np

from mgplan.errors import ContractError

MIN_DEPTH = 1e-6


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    height: int
    width: int
    name: str = "cam"

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError("focal lengths must be positive")
        if np.max(np.abs(self.rotation @ self.rotation.T - np.eye(3))) > 1e-9:
            raise ContractError("camera rotation is not orthonormal")

    @property
    def intrinsics(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def to_dict(self):
        return dict(name=self.name, fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
                    width=self.width, height=self.height,
                    rotation=self.rotation.tolist(), translation=self.translation.tolist())

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["rotation"], d["translation"],
                   d["height"], d["width"], d.get("name", "cam"))


def mounted_camera(position, yaw, pitch, width, height, hfov_deg, name):
    """Camera at ego-frame ``position`` looking along ``yaw`` and tilted down by ``pitch``."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy_, sy_ = np.cos(yaw), np.sin(yaw)
    forward = np.array([cp * cy_, cp * sy_, -sp])
    right = np.array([sy_, -cy_, 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    t = -R @ np.asarray(position, dtype=float)
    f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
    return CameraModel(f, f, (width - 1) / 2.0, (height - 1) / 2.0, R, t, height, width, name)


def default_rig(width=64, height=32, hfov_deg=70.0, pitch=0.15):
    mount = (1.5, 0.0, 1.6)
    return [
        mounted_camera(mount, 0.0, pitch, width, height, hfov_deg, "front"),
        mounted_camera(mount, np.radians(55), pitch, width, height, hfov_deg, "front_left"),
        mounted_camera(mount, np.radians(-55), pitch, width, height, hfov_deg, "front_right"),
    ]


def project_points(points, cam):
    """Project ``N x 3`` ego-frame points. Returns ``(uv, visible)``.

    A point is visible when its depth exceeds ``MIN_DEPTH`` and it lands in
    ``[0, W) x [0, H)``. ``uv`` of invisible points is undefined (NaN when behind).
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    X = P @ cam.rotation.T + cam.translation
    z = X[:, 2]
    front = z > MIN_DEPTH
    safe = np.where(front, z, 1.0)
    u = cam.fx * X[:, 0] / safe + cam.cx
    v = cam.fy * X[:, 1] / safe + cam.cy
    uv = np.stack([u, v], axis=-1)
    uv[~front] = np.nan
    visible = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return uv, visible


def project(point3d, cam):
    """Pixel ``(u, v)`` of a single ego-frame point, or None when not visible."""
    uv, visible = project_points(np.asarray(point3d, dtype=float)[None], cam)
    return tuple(uv[0]) if visible[0] else None


def lift_waypoints(waypoints, heights):
    """Every waypoint at every height: ``N x 2`` -> ``N*len(heights) x 3`` (waypoint-major)."""
    if len(heights) == 0:
        raise ContractError("heights must be non-empty")
    w = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    h = np.asarray(heights, dtype=float)
    xy = np.repeat(w, len(h), axis=0)
    z = np.tile(h, len(w))
    return np.column_stack([xy, z])


def ground_rays(cam):
    """Ego-frame ground intersection of each pixel's ray, ``H x W x 2``, and a hit mask."""
    vs, us = np.mgrid[0:cam.height, 0:cam.width].astype(float)
    dirs_cam = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], -1)
    Rt = cam.rotation.T
    dirs = dirs_cam @ Rt.T
    origin = -Rt @ cam.translation
    dz = dirs[..., 2]
    hit = dz < -1e-9
    s = np.where(hit, -origin[2] / np.where(hit, dz, -1.0), 0.0)
    ground = origin[:2] + dirs[..., :2] * s[..., None]
    depth = s  # camera-frame z of the hit, since dirs_cam has unit z
    return ground, depth, hit
