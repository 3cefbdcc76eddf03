"""The full planner: task queries, a stack of decoder layers and the task heads."""
from dataclasses import asdict, dataclass, field

import numpy as np

from mgplan.decoder.anchors import PLAN_DT, agent_grid, default_map_anchors, default_plan_anchors
from mgplan.decoder.layer import DecoderLayer
from mgplan.decoder.queries import QuerySet
from mgplan.numerics import tensor as T
from mgplan.numerics.nn import MLP, Linear, Module
from mgplan.numerics.tensor import Parameter, Tensor
from mgplan.planning_head import COMMANDS, GranularityLayout, PlanningHead, granularity_anchors
from mgplan.scene.render import N_CHANNELS


@dataclass
class ModelConfig:
    dim: int = 32
    layers: int = 3
    n_agents: int = 8
    n_map: int = 6
    map_points: int = 6
    heights: tuple = (0.0, 0.5, 1.0)
    n_points: int = 4
    n_scales: int = 2
    plan_ref_points: int = 4
    motion_steps: int = 6
    activation: str = "relu"
    speed_input: bool = True
    k_agent: int = 5
    k_map: int = 0
    layout: GranularityLayout = field(default_factory=GranularityLayout)

    @property
    def k_planning(self):
        return self.layout.n_queries

    def to_dict(self):
        d = asdict(self)
        d["layout"] = self.layout.to_dict()
        d["heights"] = list(self.heights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["layout"] = GranularityLayout.from_dict(d.get("layout", {}))
        d["heights"] = tuple(d.get("heights", (0.0, 0.5, 1.0)))
        return cls(**d)


@dataclass
class ModelOutput:
    queries: QuerySet
    plan: object
    det_logits: Tensor
    motion: Tensor
    map_logits: Tensor
    ego_status: Tensor
    layer_queries: list = field(default_factory=list)

    @property
    def boxes(self):
        return self.queries.agent_anchor

    @property
    def polylines(self):
        return self.queries.map_anchor

    def memory_payload(self):
        """Detached features, anchor centers and ranking scores for the memory bank."""
        q = self.queries
        n_g = q.n_granularities
        return (
            {"agent": q.agent_feat.data, "map": q.map_feat.data, "planning": q.plan_feat.data},
            q.centers(),
            {"agent": self.det_logits.data.reshape(-1), "map": self.map_logits.data.reshape(-1),
             "planning": np.repeat(self.plan.modality_scores.data, n_g)},
        )


class Planner(Module):
    def __init__(self, cfg, rng, map_anchor_init=None, plan_anchor_init=None):
        self.cfg = cfg
        L = cfg.layout
        C = cfg.dim
        self.agent_embed = Parameter(rng.normal(0, 1.0, size=(cfg.n_agents, C)))
        self.map_embed = Parameter(rng.normal(0, 1.0, size=(cfg.n_map, C)))
        self.pos_embed = {t: Linear(2, C, rng) for t in ("agent", "map", "planning")}
        horizons = [s.horizon for s in L.specs]
        self.layers = [DecoderLayer(C, N_CHANNELS, rng, horizons, cfg.map_points, cfg.heights,
                                    cfg.activation, cfg.n_scales, cfg.n_points, cfg.plan_ref_points)
                       for _ in range(cfg.layers)]
        self.det_cls = MLP([C, C, 1], rng, cfg.activation)
        self.motion_head = MLP([C, C, cfg.motion_steps * 2], rng, cfg.activation)
        self.map_cls = MLP([C, C, 1], rng, cfg.activation)
        self.ego_head = MLP([C, C, 2], rng, cfg.activation)
        self.planning = PlanningHead(L, C, rng, len(COMMANDS), cfg.activation, cfg.speed_input)
        self.set_anchors(map_anchor_init, plan_anchor_init)

    def set_anchors(self, map_anchor_init=None, plan_anchor_init=None):
        cfg = self.cfg
        self.agent_anchor_init = agent_grid(cfg.n_agents)
        self.map_anchor_init = (default_map_anchors(cfg.n_map, cfg.map_points) if map_anchor_init is None
                                else np.asarray(map_anchor_init, dtype=float))
        if plan_anchor_init is None:
            plan_anchor_init = np.stack([default_plan_anchors(cfg.layout.modalities)] * len(COMMANDS))
        self.plan_anchor_init = np.asarray(plan_anchor_init, dtype=float)
        self._plan_cache = {}

    def buffers(self):
        return {"agent_anchor_init": self.agent_anchor_init, "map_anchor_init": self.map_anchor_init,
                "plan_anchor_init": self.plan_anchor_init}

    def load_buffers(self, b):
        self.set_anchors(b["map_anchor_init"], b["plan_anchor_init"])
        self.agent_anchor_init = np.asarray(b["agent_anchor_init"], dtype=float)

    def plan_anchors(self, command):
        """Per-granularity ``N_mod x T_j x 2`` anchors for ``command``."""
        if command not in self._plan_cache:
            per_mod = [granularity_anchors(traj, self.cfg.layout, PLAN_DT) for traj in self.plan_anchor_init[command]]
            self._plan_cache[command] = [np.stack([m[j] for m in per_mod]) for j in range(len(per_mod[0]))]
        return self._plan_cache[command]

    def initial_queries(self, target_point, command, speed):
        return QuerySet(
            agent_feat=self.agent_embed * 1.0,
            agent_anchor=Tensor(self.agent_anchor_init),
            map_feat=self.map_embed * 1.0,
            map_anchor=Tensor(self.map_anchor_init),
            plan_feat=self.planning.build_queries(target_point, command, speed),
            plan_anchor=[Tensor(a) for a in self.plan_anchors(command)],
        )

    def __call__(self, grid, target_point, command, speed=0.0, memory=None, style_enabled=True,
                 tau_override=None, keep_layers=False):
        qs = self.initial_queries(target_point, command, speed)
        history = []
        for layer in self.layers:
            qs = layer(qs, grid, memory or {}, self.pos_embed, tau_override)
            if keep_layers:
                history.append(qs)
        plan = self.planning(qs.plan_feat, qs.plan_anchor, style_enabled)
        fused = plan.fused if plan.fused.ndim == 2 else plan.fused.mean(axis=1)
        return ModelOutput(
            queries=qs,
            plan=plan,
            det_logits=T.reshape(self.det_cls(qs.agent_feat), (self.cfg.n_agents,)),
            motion=T.reshape(self.motion_head(qs.agent_feat), (self.cfg.n_agents, self.cfg.motion_steps, 2)),
            map_logits=T.reshape(self.map_cls(qs.map_feat), (self.cfg.n_map,)),
            ego_status=T.reshape(self.ego_head(T.mean(fused, axis=0, keepdims=True)), (2,)),
            layer_queries=history,
        )
