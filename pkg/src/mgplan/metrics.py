"""Open-loop displacement error and closed-loop episode summaries."""
import numpy as np

OPEN_LOOP_POINTS = 4
COLLISION_PENALTY = 0.5


def open_loop_l2(pred, gt, padded=None, n=OPEN_LOOP_POINTS):
    """Mean Euclidean error over the first ``n`` waypoints (2 Hz: 0.5 s to 2.0 s).

    Padded GT waypoints are excluded; returns None when none are left.
    """
    pred = np.asarray(pred, dtype=float)[:n]
    gt = np.asarray(gt, dtype=float)[:n]
    keep = np.ones(len(gt), bool) if padded is None else ~np.asarray(padded, bool)[:n]
    if not keep.any():
        return None
    return float(np.linalg.norm(pred[keep] - gt[keep], axis=-1).mean())


def temporal_2hz(plan, modality, n=OPEN_LOOP_POINTS):
    """Modality's waypoints at 0.5 s steps: the 2 Hz set, else interpolated from the densest temporal set."""
    layout = plan.layout
    if "temporal@2Hz" in layout.ids:
        return plan.waypoints_np("temporal@2Hz")[modality][:n]
    specs = [s for s in layout.specs if s.kind == "temporal"]
    spec = max(specs, key=lambda s: s.frequency_hz)
    w = plan.waypoints_np(spec.id)[modality]
    t = np.arange(0, len(w) + 1) / spec.frequency_hz
    w = np.vstack([[0.0, 0.0], w])
    q = np.arange(1, n + 1) * 0.5
    return np.stack([np.interp(q, t, w[:, 0]), np.interp(q, t, w[:, 1])], -1)


def aggregate_metrics(results):
    """Success rate, timeout rate and a simplified driving score over episodes.

    The driving score of one episode is its route completion times 0.5 per collision.
    """
    if not results:
        raise ValueError("no episode results to aggregate")
    n = len(results)
    status = [r.status for r in results]
    ds = [r.completion * COLLISION_PENALTY ** r.collisions for r in results]
    return {
        "episodes": n,
        "success_rate": 100.0 * status.count("success") / n,
        "timeout_rate": 100.0 * status.count("timeout") / n,
        "collision_rate": 100.0 * status.count("collision") / n,
        "off_route_rate": 100.0 * status.count("off_route") / n,
        "driving_score": 100.0 * float(np.mean(ds)),
        "timeouts": status.count("timeout"),
        "successes": status.count("success"),
    }
