"""Bird's-eye SVG overlays of a planned frame.

Colors follow one convention everywhere: spatial waypoints skyblue,
driving-style waypoints red, temporal waypoints orange, ground truth black.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from mgplan.geometry import box_corners  # noqa: E402

COLORS = {"spatial": "skyblue", "driving_style": "red", "temporal": "orange", "gt": "black"}
LABELS = {"spatial": "spatial waypoints", "driving_style": "driving-style waypoints",
          "temporal": "temporal waypoints", "gt": "ground truth"}


def plot_frame(frame, plan, path, modality=None, title=None):
    """Draw map, agents, obstacles, the GT future and every granularity of one modality."""
    i = int(np.argmax(plan.modality_scores.data)) if modality is None else modality
    fig, ax = plt.subplots(figsize=(6, 6))
    for line in frame.map_polylines:
        line = np.asarray(line)
        ax.plot(line[:, 1], line[:, 0], color="0.8", lw=1, zorder=1)
    for boxes, color, label in ((frame.agent_boxes, "0.45", "agents"), (frame.obstacles, "0.2", "obstacles")):
        for k, b in enumerate(np.asarray(boxes).reshape(-1, 5)):
            c = np.vstack([box_corners(b), box_corners(b)[:1]])
            ax.fill(c[:, 1], c[:, 0], color=color, alpha=0.5, zorder=2, label=label if k == 0 else None)
    ego = np.vstack([box_corners([0, 0, 4.5, 2.0, 0.0]), box_corners([0, 0, 4.5, 2.0, 0.0])[:1]])
    ax.plot(ego[:, 1], ego[:, 0], color="green", lw=1.5, label="ego", zorder=3)
    if frame.future is not None:
        ax.plot(frame.future.points[:, 1], frame.future.points[:, 0], color=COLORS["gt"], lw=1.2,
                label=LABELS["gt"], zorder=4)
    seen = set()
    style_bin = None
    if plan.style_scores is not None:
        style_bin = int(np.argmax(plan.style_scores.data[i]))
    for spec, w in zip(plan.layout.specs, plan.waypoints):
        if spec.kind == "driving_style" and style_bin is not None and spec.speed_bin != style_bin:
            continue
        pts = w.data[i]
        marker = {"spatial": "o", "driving_style": "^", "temporal": "s"}[spec.kind]
        ax.scatter(pts[:, 1], pts[:, 0], s=14, marker=marker, color=COLORS[spec.kind], zorder=5,
                   label=LABELS[spec.kind] if spec.kind not in seen else None)
        seen.add(spec.kind)
    ax.set_xlabel("lateral (m, left positive)")
    ax.set_ylabel("longitudinal (m)")
    ax.set_aspect("equal")
    ax.set_xlim(20, -20)
    ax.set_ylim(-10, 40)
    ax.legend(loc="lower left", fontsize=7)
    if title:
        ax.set_title(title, fontsize=8)
    # keep text as text so legends stay searchable in the SVG
    with plt.rc_context({"svg.fonttype": "none"}):
        fig.savefig(path, format="svg")
    plt.close(fig)
    return path
