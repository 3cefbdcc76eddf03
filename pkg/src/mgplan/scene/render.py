"""Toy camera features: ground-plane ray casting plus Gaussian smoothing.

Each pixel's ray is intersected with the ground. At the hit point we record
agent-footprint occupancy, obstacle occupancy, proximity to the nearest map
polyline and inverse depth. Every base channel is blurred at several widths,
so the decoder can sense objects before its sample points land on them.
Scale 1 averages 2x2 blocks of scale 0.
"""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from mgplan.geometry import point_polyline_distance, points_in_boxes
from mgplan.numerics.tensor import pad_feature_maps
from mgplan.scene.camera import ground_rays

BASE_CHANNELS = ("agent_occupancy", "obstacle_occupancy", "map_proximity", "inverse_depth")
SIGMAS = (0.0, 0.7, 1.2, 2.0, 3.0, 4.5, 6.5, 9.0)
N_CHANNELS = len(BASE_CHANNELS) * len(SIGMAS)


@dataclass
class FeatureGrid:
    """``maps[s]`` is a ``V x H_s x W_s x C`` array for scale ``s``."""

    maps: list
    cameras: list

    def __post_init__(self):
        self._padded = {}

    def padded(self, s):
        """Zero-bordered copy of scale ``s`` for repeated sampling."""
        if s not in self._padded:
            self._padded[s] = pad_feature_maps(self.maps[s])
        return self._padded[s]

    @property
    def n_views(self):
        return len(self.cameras)

    @property
    def channels(self):
        return self.maps[0].shape[-1]

    def view(self, v, s=0):
        return self.maps[s][v]


_RAY_CACHE = {}


def _rays(cam):
    key = (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
           cam.rotation.tobytes(), cam.translation.tobytes())
    if key not in _RAY_CACHE:
        _RAY_CACHE[key] = ground_rays(cam)
    return _RAY_CACHE[key]


def _pool2(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def base_channels(cam, agent_boxes, obstacles, map_polylines):
    """Unsmoothed ``H x W x 4`` channels for one camera, all geometry in the ego frame."""
    ground, depth, hit = _rays(cam)
    pts = ground[hit]
    out = np.zeros((cam.height, cam.width, len(BASE_CHANNELS)))
    occ = np.zeros((4, len(pts)))
    if len(agent_boxes):
        occ[0] = points_in_boxes(pts, agent_boxes)
    if len(obstacles):
        occ[1] = points_in_boxes(pts, obstacles)
    if map_polylines:
        occ[2] = np.exp(-point_polyline_distance(pts, map_polylines))
    occ[3] = 1.0 / np.maximum(depth[hit], 1.0)
    out[hit] = occ.T
    return out


def render_frame(frame, cameras, n_scales=2):
    per_scale = [[] for _ in range(n_scales)]
    for cam in cameras:
        base = base_channels(cam, frame.agent_boxes, frame.obstacles, frame.map_polylines)
        chans = []
        for c in range(base.shape[-1]):
            for sigma in SIGMAS:
                img = base[..., c]
                chans.append(gaussian_filter(img, sigma, mode="constant") if sigma > 0 else img)
        feat = np.stack(chans, -1)
        for s in range(n_scales):
            per_scale[s].append(feat)
            feat = _pool2(feat)
    return FeatureGrid([np.stack(v) for v in per_scale], list(cameras))


def render_features(scn, t, pose=None, frame=None):
    """Features for scenario ``scn`` at time ``t`` as seen from ``pose`` (default: expert pose)."""
    from mgplan.scene.world import make_frame

    if frame is None:
        frame = make_frame(scn, t, pose=pose)
    return render_frame(frame, scn.cameras)
