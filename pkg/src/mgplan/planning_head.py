"""Multi-granularity planning queries and the heads that decode them.

Planning queries are laid out modality-major: query ``i * N_g + j`` belongs
to modality ``i`` and granularity ``j``.
"""
from dataclasses import dataclass, field

import numpy as np

from mgplan.errors import LayoutError
from mgplan.numerics import tensor as T
from mgplan.numerics.nn import MLP, Module
from mgplan.numerics.tensor import Parameter, Tensor
from mgplan.trajectory import GranularitySpec, SpeedBins, fit_path

COMMANDS = ("left", "straight", "right", "lane_change_left", "lane_change_right", "stop")


@dataclass(frozen=True)
class GranularityLayout:
    """Which waypoint granularities exist and how they are trained.

    ``fusion`` sums each modality's granularity queries before regression;
    ``align_matching`` broadcasts the reference group's winner-takes-all match
    to every other group instead of matching groups independently.
    """

    temporal_hz: tuple = (2.0, 5.0)
    spatial_m: tuple = (2.0, 5.0)
    n_styles: int = 3
    modalities: int = 6
    fusion: bool = True
    align_matching: bool = True
    horizon_s: float = 3.0
    spatial_extent_m: float = 20.0
    speed_bins: tuple = (0.0, 0.4, 3.0, 10.0)

    def __post_init__(self):
        if self.modalities < 1:
            raise LayoutError("need at least one modality")
        if self.n_styles and not self.temporal_hz:
            raise LayoutError("driving-style waypoints need at least one temporal frequency")
        if self.n_styles not in (0, len(self.speed_bins) - 1):
            raise LayoutError(f"n_styles={self.n_styles} does not match {len(self.speed_bins) - 1} speed bins")
        if self.n_granularities < 1:
            raise LayoutError("layout has no granularities")

    @classmethod
    def default(cls, modalities=6):
        return cls(modalities=modalities)

    @classmethod
    def full_scale(cls):
        """Full-size layout with 48 modalities (480 planning queries)."""
        return cls(modalities=48)

    @classmethod
    def preset(cls, row, modalities=6):
        """Rows 1-7 of the granularity ablation: 1 is temporal-2Hz only, 7 is the full layout."""
        rows = {
            1: dict(temporal_hz=(2.0,), spatial_m=(), n_styles=0, fusion=False, align_matching=False),
            2: dict(temporal_hz=(2.0,), spatial_m=(5.0,), n_styles=0, fusion=False, align_matching=False),
            3: dict(temporal_hz=(2.0,), spatial_m=(5.0,), n_styles=0, fusion=True, align_matching=False),
            4: dict(temporal_hz=(2.0,), spatial_m=(5.0,), n_styles=0, fusion=True, align_matching=True),
            5: dict(temporal_hz=(5.0,), spatial_m=(2.0,), n_styles=0, fusion=True, align_matching=True),
            6: dict(temporal_hz=(2.0, 5.0), spatial_m=(2.0, 5.0), n_styles=0),
            7: dict(),
        }
        if row not in rows:
            raise LayoutError(f"no ablation preset {row}")
        return cls(modalities=modalities, **rows[row])

    @property
    def n_t(self):
        return len(self.temporal_hz)

    @property
    def n_s(self):
        return len(self.spatial_m)

    @property
    def n_d(self):
        return self.n_styles

    @property
    def n_granularities(self):
        return self.n_t + self.n_s + self.n_d * self.n_t

    @property
    def n_queries(self):
        return self.modalities * self.n_granularities

    @property
    def bins(self):
        return SpeedBins(tuple(self.speed_bins))

    def temporal_horizon(self, hz):
        return int(round(self.horizon_s * hz))

    def spatial_horizon(self, interval):
        return max(1, int(round(self.spatial_extent_m / interval)))

    @property
    def specs(self):
        out = [GranularitySpec("temporal", self.temporal_horizon(f), frequency_hz=f) for f in self.temporal_hz]
        out += [GranularitySpec("spatial", self.spatial_horizon(s), interval_m=s) for s in self.spatial_m]
        for b in range(self.n_d):
            out += [GranularitySpec("driving_style", self.temporal_horizon(f), frequency_hz=f, speed_bin=b)
                    for f in self.temporal_hz]
        return out

    @property
    def ids(self):
        return [s.id for s in self.specs]

    def index(self, gid):
        return self.ids.index(gid)

    @property
    def reference_id(self):
        """Granularity used for align-matching: temporal 2 Hz when present."""
        ids = self.ids
        if "temporal@2Hz" in ids:
            return "temporal@2Hz"
        temporal = [s.id for s in self.specs if s.kind == "temporal"]
        return temporal[0] if temporal else ids[0]

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def granularity_anchors(trajectory, layout, dt):
    """Resample one fine-grained anchor trajectory (``K x 2``, step ``dt``, starting
    one step after the ego) into every granularity of ``layout``.

    Style anchors follow the anchor's path at the style bin's representative speed.
    """
    fine = np.vstack([[0.0, 0.0], np.asarray(trajectory, dtype=float)])
    t_fine = np.arange(len(fine)) * dt
    try:
        path = fit_path(fine)
    except Exception:
        path = None
    out = []
    for spec in layout.specs:
        if spec.kind == "temporal":
            t = np.arange(1, spec.horizon + 1) / spec.frequency_hz
            pts = np.stack([np.interp(t, t_fine, fine[:, 0]), np.interp(t, t_fine, fine[:, 1])], -1)
        elif spec.kind == "spatial":
            s = spec.interval_m * np.arange(1, spec.horizon + 1)
            pts = path(s) if path is not None else np.zeros((spec.horizon, 2))
            if path is not None and path.length < s[-1]:
                # extend straight past the end so sparse anchors keep their spacing
                end = fine[-1]
                heading = fine[-1] - fine[max(0, len(fine) - 3)]
                n = np.linalg.norm(heading)
                heading = heading / n if n > 1e-9 else np.array([1.0, 0.0])
                extra = s > path.length
                pts[extra] = end + np.outer(s[extra] - path.length, heading)
        else:
            v = layout.bins.representative_speed(spec.speed_bin)
            s = v * np.arange(1, spec.horizon + 1) / spec.frequency_hz
            if path is None:
                pts = np.outer(s, [1.0, 0.0])
            else:
                pts = path(s)
        out.append(pts)
    return out


class PlanningHead(Module):
    def __init__(self, layout, dim, rng, n_commands=len(COMMANDS), activation="relu", speed_input=True):
        self.layout = layout
        self.dim = dim
        self.n_commands = n_commands
        self.activation = activation
        self.speed_input = speed_input
        self.modality_embed = Parameter(rng.normal(0, 1.0, size=(layout.modalities, dim)))
        self.granularity_embed = Parameter(rng.normal(0, 1.0, size=(layout.n_granularities, dim)))
        self.cond_mlp = MLP([2 + int(speed_input) + n_commands, dim, dim], rng, activation)
        self.reg_heads = [MLP([dim, dim, spec.horizon * 2], rng, activation) for spec in layout.specs]
        self.cls_m = MLP([dim, dim, 1], rng, activation)
        self.cls_d = MLP([dim, dim, layout.n_d], rng, activation) if layout.n_d else None

    def conditioning(self, target_point, command, speed=0.0):
        onehot = np.zeros(self.n_commands)
        onehot[command] = 1.0
        # target point in tens of meters and speed in units of 5 m/s keep the inputs O(1)
        parts = [np.asarray(target_point, dtype=float) / 10.0]
        if self.speed_input:
            parts.append([speed / 5.0])
        cond = np.concatenate(parts + [onehot])
        return self.cond_mlp(Tensor(cond[None]))

    def build_queries(self, target_point, command, speed=0.0):
        """``N_p x C`` planning queries: modality + granularity embedding + conditioning."""
        L = self.layout
        feats = (T.reshape(self.modality_embed, (L.modalities, 1, self.dim))
                 + T.reshape(self.granularity_embed, (1, L.n_granularities, self.dim)))
        feats = T.reshape(feats, (L.n_queries, self.dim))
        return feats + self.conditioning(target_point, command, speed)

    def fuse(self, feats):
        return fuse(feats, self.layout.modalities, self.layout.n_granularities)

    def regress(self, fused, anchors):
        """Waypoints ``W[i][j]`` as a list over granularities of ``N_m x T_j x 2`` tensors.

        ``fused`` is ``N_m x C`` when fusion is on, else ``N_m x N_g x C`` per-query features.
        ``anchors`` lists ``N_m x T_j x 2`` arrays or tensors per granularity.
        """
        out = []
        L = self.layout
        for j, (spec, head) in enumerate(zip(L.specs, self.reg_heads)):
            x = fused if fused.ndim == 2 else fused[:, j]
            delta = T.reshape(head(x), (L.modalities, spec.horizon, 2))
            out.append(delta + anchors[j])
        return out

    def score_modality(self, fused):
        x = fused if fused.ndim == 2 else fused.mean(axis=1)
        return T.reshape(self.cls_m(x), (self.layout.modalities,))

    def score_style(self, fused):
        if self.cls_d is None:
            return None
        x = fused if fused.ndim == 2 else fused.mean(axis=1)
        return self.cls_d(x)

    def __call__(self, feats, anchors, style_enabled=True):
        L = self.layout
        if L.fusion:
            fused = self.fuse(feats)
        else:
            fused = T.reshape(feats, (L.modalities, L.n_granularities, self.dim))
        return PlanningOutput(
            waypoints=self.regress(fused, anchors),
            modality_scores=self.score_modality(fused),
            style_scores=self.score_style(fused) if style_enabled else None,
            layout=L,
            fused=fused,
        )


def fuse(feats, modalities, n_granularities):
    """Sum each modality's granularity queries: ``N_m*N_g x C -> N_m x C``."""
    if feats.shape[0] != modalities * n_granularities:
        raise LayoutError(
            f"{feats.shape[0]} planning queries cannot be grouped as {modalities} x {n_granularities}")
    return T.reshape(feats, (modalities, n_granularities, feats.shape[-1])).sum(axis=1)


@dataclass
class PlanningOutput:
    waypoints: list
    modality_scores: Tensor
    style_scores: Tensor
    layout: GranularityLayout
    fused: Tensor = None
    extras: dict = field(default_factory=dict)

    def waypoints_np(self, gid):
        return self.waypoints[self.layout.index(gid)].data

    def to_rows(self):
        """CSV rows ``(modality, granularity_id, index, x, y)``."""
        rows = []
        for j, gid in enumerate(self.layout.ids):
            w = self.waypoints[j].data
            for i in range(w.shape[0]):
                for k in range(w.shape[1]):
                    rows.append((i, gid, k, float(w[i, k, 0]), float(w[i, k, 1])))
        return rows

    def scores_dict(self):
        d = {"modality_scores": self.modality_scores.data.tolist()}
        if self.style_scores is not None:
            d["style_scores"] = self.style_scores.data.tolist()
        return d
