"""Planar rigid transforms, oriented boxes and polyline distances."""
import numpy as np


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def world_to_ego(points, pose):
    """Express world ``... x 2`` points in the frame of ``pose = (x, y, yaw)``."""
    x, y, yaw = pose
    c, s = np.cos(yaw), np.sin(yaw)
    d = np.asarray(points, dtype=float) - (x, y)
    return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)


def ego_to_world(points, pose):
    x, y, yaw = pose
    c, s = np.cos(yaw), np.sin(yaw)
    p = np.asarray(points, dtype=float)
    return np.stack([c * p[..., 0] - s * p[..., 1] + x, s * p[..., 0] + c * p[..., 1] + y], axis=-1)


def relative_pose(pose, ref):
    """``pose`` expressed in the frame of ``ref``."""
    xy = world_to_ego(np.asarray(pose[:2], dtype=float), ref)
    return np.array([xy[0], xy[1], float(wrap_angle(pose[2] - ref[2]))])


def box_corners(box):
    """Corners of ``(x, y, length, width, heading)`` boxes, ``... x 4 x 2``."""
    b = np.asarray(box, dtype=float)
    x, y, l, w, h = (b[..., i] for i in range(5))
    c, s = np.cos(h), np.sin(h)
    dx = np.stack([l, l, -l, -l], -1) / 2
    dy = np.stack([w, -w, -w, w], -1) / 2
    cx = x[..., None] + c[..., None] * dx - s[..., None] * dy
    cy = y[..., None] + s[..., None] * dx + c[..., None] * dy
    return np.stack([cx, cy], -1)


def boxes_overlap(a, b, margin=0.0):
    """Separating-axis test for two oriented boxes, each inflated by ``margin`` per side."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    a[2:4] += 2 * margin
    b[2:4] += 2 * margin
    ca, cb = box_corners(a), box_corners(b)
    for h in (a[4], b[4]):
        for axis in ((np.cos(h), np.sin(h)), (-np.sin(h), np.cos(h))):
            pa, pb = ca @ axis, cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def points_in_boxes(points, boxes):
    """Boolean ``N`` mask: point lies inside any of the ``M x 5`` boxes."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    inside = np.zeros(len(pts), dtype=bool)
    for x, y, l, w, h in np.asarray(boxes, dtype=float).reshape(-1, 5):
        d = pts - (x, y)
        c, s = np.cos(h), np.sin(h)
        lon = d[:, 0] * c + d[:, 1] * s
        lat = -d[:, 0] * s + d[:, 1] * c
        inside |= (np.abs(lon) <= l / 2) & (np.abs(lat) <= w / 2)
    return inside


def point_polyline_distance(points, polylines):
    """Distance from each point to the nearest segment of any polyline."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    segs = [np.stack([pl[:-1], pl[1:]], 1) for pl in polylines if len(pl) >= 2]
    if not segs:
        return np.full(len(pts), np.inf)
    segs = np.concatenate(segs)
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    ap = pts[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(-1) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((pts[:, None] - closest) ** 2).sum(-1)).min(axis=1)


def project_to_polyline(point, vertices, cumulative):
    """Arc length and signed lateral offset (left positive) of ``point`` on a polyline."""
    p = np.asarray(point, dtype=float)
    a, b = vertices[:-1], vertices[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    d2 = ((p - closest) ** 2).sum(-1)
    k = int(np.argmin(d2))
    seg_len = np.sqrt(denom[k])
    s = cumulative[k] + t[k] * seg_len
    cross = ab[k, 0] * (p[1] - a[k, 1]) - ab[k, 1] * (p[0] - a[k, 0])
    return float(s), float(np.sign(cross) * np.sqrt(d2[k]))
