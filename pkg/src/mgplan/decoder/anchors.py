"""Initial anchors: a BEV grid of boxes, and k-means centroids of map pieces
and of expert futures (one cluster set per driving command)."""
import numpy as np
from scipy.cluster.vq import kmeans2

PLAN_DT = 0.1
PLAN_STEPS = 30


def agent_grid(n, x_range=(4.0, 36.0), y_range=(-8.0, 8.0)):
    """``n`` boxes laid on a near-square grid over the region ahead of the ego."""
    ny = max(1, int(np.floor(np.sqrt(n / 2.0))))
    nx = int(np.ceil(n / ny))
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny) if ny > 1 else np.zeros(1)
    grid = np.array([(x, y) for x in xs for y in ys])[:n]
    return np.column_stack([grid, np.full(n, 4.5), np.full(n, 2.0), np.zeros(n)])


def _kmeans(data, k, seed):
    data = np.asarray(data, dtype=float)
    if len(data) == 0:
        return None
    if len(data) <= k:
        reps = np.resize(np.arange(len(data)), k)
        return data[reps].copy()
    centroids, _ = kmeans2(data, k, minit="++", seed=np.random.default_rng(seed))
    return centroids


def default_map_anchors(n, n_points):
    """Straight lane-like lines at spread lateral offsets, used when no data is given."""
    ys = np.linspace(-7.0, 7.0, n)
    xs = np.linspace(0.0, 20.0, n_points)
    return np.stack([np.stack([xs, np.full(n_points, y)], -1) for y in ys])


def map_anchors(pieces, n, n_points, seed=0):
    pieces = np.asarray(pieces, dtype=float).reshape(-1, n_points * 2)
    c = _kmeans(pieces, n, seed)
    return default_map_anchors(n, n_points) if c is None else c.reshape(n, n_points, 2)


def default_plan_anchors(n_modalities, steps=PLAN_STEPS, dt=PLAN_DT):
    """Fans of constant-curvature paths at a few speeds."""
    t = np.arange(1, steps + 1) * dt
    out = []
    speeds = (0.0, 2.0, 5.0)
    curv = np.linspace(-0.08, 0.08, max(1, int(np.ceil(n_modalities / len(speeds)))))
    for k in range(n_modalities):
        v = speeds[k % len(speeds)]
        c = curv[k // len(speeds) % len(curv)]
        s = v * t
        if abs(c) < 1e-9:
            out.append(np.stack([s, 0 * s], -1))
        else:
            out.append(np.stack([np.sin(c * s) / c, (1 - np.cos(c * s)) / c], -1))
    return np.stack(out)


def plan_anchors(futures_by_command, n_commands, n_modalities, seed=0):
    """``n_commands x N_mod x PLAN_STEPS x 2`` cluster centers of 10 Hz expert futures.

    Commands without data fall back to clusters over all commands, or to a
    fan of constant-curvature paths when there is no data at all.
    """
    everything = [f for fs in futures_by_command.values() for f in fs]
    pooled = _kmeans(np.asarray(everything).reshape(len(everything), -1), n_modalities, seed) \
        if everything else None
    if pooled is None:
        pooled = default_plan_anchors(n_modalities).reshape(n_modalities, -1)
    out = []
    for c in range(n_commands):
        fs = futures_by_command.get(c, [])
        centers = _kmeans(np.asarray(fs).reshape(len(fs), -1), n_modalities, seed + c) if fs else None
        out.append((pooled if centers is None else centers).reshape(n_modalities, PLAN_STEPS, 2))
    return np.stack(out)


def fine_future(frame, steps=PLAN_STEPS, dt=PLAN_DT):
    """Expert future positions at ``dt, 2dt, ...`` in the ego frame, held at the last point."""
    fut = frame.future
    t = np.arange(1, steps + 1) * dt
    return np.stack([np.interp(t, fut.timestamps, fut.points[:, 0]),
                     np.interp(t, fut.timestamps, fut.points[:, 1])], -1)
