"""One decoder layer: temporal, collaborative and deformable interaction,
feed-forward blocks and anchor refinement, for all three tasks at once."""
import numpy as np

from mgplan.decoder.attention import AttentionBlock, FeedForward
from mgplan.decoder.deformable import DeformableBlock
from mgplan.decoder.distances import build_distances
from mgplan.decoder.queries import agent_refs, map_refs, planning_refs, pooling_matrix
from mgplan.numerics import tensor as T
from mgplan.numerics.nn import Linear, Module
from mgplan.numerics.tensor import Tensor

AGENT_DELTA_SCALE = np.array([2.0, 2.0, 0.5, 0.5, 0.3])
MAP_DELTA_SCALE = 2.0
PLAN_DELTA_SCALE = 1.0


class DecoderLayer(Module):
    def __init__(self, dim, feat_dim, rng, horizons, map_points, heights, activation="relu",
                 n_scales=2, n_points=4, plan_ref_points=4):
        self.dim = dim
        self.heights = tuple(heights)
        self.plan_ref_points = plan_ref_points
        # temporal: agent, map, planning against their own memory; planning against perception memory
        self.temporal = {t: AttentionBlock(dim, rng, activation=activation)
                         for t in ("agent", "map", "planning", "planning_perception")}
        self.collab = {t: AttentionBlock(dim, rng, geometric=True, activation=activation)
                       for t in ("agent", "map", "planning", "unified")}
        self.deform = {t: DeformableBlock(dim, feat_dim, rng, n_scales, n_points)
                       for t in ("agent", "map", "planning")}
        self.ffn = {t: FeedForward(dim, rng, activation) for t in ("agent", "map", "planning")}
        self.refine_agent = Linear(dim, 5, rng, zero=True)
        self.refine_map = Linear(dim, map_points * 2, rng, zero=True)
        self.refine_plan = [Linear(dim, h * 2, rng, zero=True) for h in horizons]

    # --- temporal ---------------------------------------------------------------

    def temporal_interaction(self, qs, memory, pos, pos_embed):
        """Cross-attend current queries (query side) to stored ones (key/value side)."""
        if not memory:
            return qs

        def mem(tasks):
            feats = [memory[t].features for t in tasks if t in memory]
            if not feats:
                return None, None
            cen = np.concatenate([memory[t].centers for t in tasks if t in memory])
            pk = T.concat([pos_embed[t](Tensor(memory[t].centers / 20.0)) for t in tasks if t in memory])
            return Tensor(np.concatenate(feats)), (pk, cen)

        out = {}
        for task, feat in (("agent", qs.agent_feat), ("map", qs.map_feat), ("planning", qs.plan_feat)):
            m, extra = mem((task,))
            if m is not None:
                feat = self.temporal[task](feat, m, pos_q=pos[task], pos_k=extra[0])
            out[task] = feat
        m, extra = mem(("agent", "map"))
        if m is not None:
            out["planning"] = self.temporal["planning_perception"](
                out["planning"], m, pos_q=pos["planning"], pos_k=extra[0])
        return qs.replace(agent_feat=out["agent"], map_feat=out["map"], plan_feat=out["planning"])

    # --- collaborative ----------------------------------------------------------

    def collaborative_interaction(self, qs, pos, tau_override=None):
        c = qs.centers()
        d = build_distances(c["agent"], qs.map_anchor.data, len(c["planning"]))
        a = self.collab["agent"](qs.agent_feat, pos_q=pos["agent"], dist=d["agent-agent"].values,
                                 tau_override=tau_override)
        m = self.collab["map"](qs.map_feat, pos_q=pos["map"], dist=d["map-map"].values,
                               tau_override=tau_override)
        p = self.collab["planning"](qs.plan_feat, pos_q=pos["planning"], dist=d["planning-row"].values,
                                    tau_override=tau_override)
        allf = T.concat([a, m, p])
        allpos = T.concat([pos["agent"], pos["map"], pos["planning"]])
        u = self.collab["unified"](allf, pos_q=allpos, dist=d["unified"].values, tau_override=tau_override)
        na, nm = a.shape[0], m.shape[0]
        return qs.replace(agent_feat=u[:na], map_feat=u[na:na + nm], plan_feat=u[na + nm:])

    # --- deformable -------------------------------------------------------------

    def deformable_interaction(self, qs, grid):
        pts, owner = agent_refs(qs.agent_anchor.data, self.heights)
        a = self.deform["agent"](qs.agent_feat, grid, pts, owner, pooling_matrix(owner, qs.agent_feat.shape[0]))
        pts, owner = map_refs(qs.map_anchor.data)
        m = self.deform["map"](qs.map_feat, grid, pts, owner, pooling_matrix(owner, qs.map_feat.shape[0]))
        pts, owner = planning_refs([x.data for x in qs.plan_anchor], self.heights, self.plan_ref_points)
        p = self.deform["planning"](qs.plan_feat, grid, pts, owner, pooling_matrix(owner, qs.plan_feat.shape[0]))
        return qs.replace(agent_feat=a, map_feat=m, plan_feat=p)

    # --- refinement ---------------------------------------------------------------

    def refine_anchors(self, qs):
        """Add bounded deltas to every anchor so later layers look at refined geometry."""
        agent = qs.agent_anchor + T.tanh(self.refine_agent(qs.agent_feat)) * AGENT_DELTA_SCALE
        n, p, _ = qs.map_anchor.shape
        mp = qs.map_anchor + T.reshape(T.tanh(self.refine_map(qs.map_feat)), (n, p, 2)) * MAP_DELTA_SCALE
        n_g = qs.n_granularities
        n_mod = qs.n_modalities
        plan = []
        for j, (anchor, head) in enumerate(zip(qs.plan_anchor, self.refine_plan)):
            f = T.getitem(qs.plan_feat, np.arange(n_mod) * n_g + j)
            delta = T.reshape(T.tanh(head(f)), anchor.shape) * PLAN_DELTA_SCALE
            plan.append(anchor + delta)
        return qs.replace(agent_anchor=agent, map_anchor=mp, plan_anchor=plan)

    def __call__(self, qs, grid, memory, pos_embed, tau_override=None):
        pos = positions(qs, pos_embed)
        qs = self.temporal_interaction(qs, memory, pos, pos_embed)
        qs = self.collaborative_interaction(qs, pos, tau_override)
        qs = self.deformable_interaction(qs, grid)
        qs = qs.replace(agent_feat=self.ffn["agent"](qs.agent_feat), map_feat=self.ffn["map"](qs.map_feat),
                        plan_feat=self.ffn["planning"](qs.plan_feat))
        return self.refine_anchors(qs)


def positions(qs, pos_embed):
    c = qs.centers()
    return {t: pos_embed[t](Tensor(c[t] / 20.0)) for t in ("agent", "map", "planning")}
