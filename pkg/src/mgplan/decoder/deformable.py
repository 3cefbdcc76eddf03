"""Deformable feature aggregation around projected anchor points.

Every reference point is projected into every camera. Around each visible
projection the query's MLP places ``K`` sample points per scale, and the
bilinear samples are combined with softmax weights shared by all views.
Contributions are summed over views, so a point seen by two cameras
collects from both.
"""
import numpy as np

from mgplan.numerics import tensor as T
from mgplan.numerics.nn import LayerNorm, Linear, Module
from mgplan.numerics.tensor import Tensor
from mgplan.scene.camera import project_points

OFFSET_SCALE_PX = 8.0


def scale_coords(uv, s):
    """Pixel coordinates at scale 0 expressed on the grid of scale ``s`` (each halving)."""
    f = 2.0 ** s
    return (uv + 0.5) / f - 0.5


def visible_pairs(ref_points, cameras):
    """``(view, reference)`` index pairs with a visible projection, and their scale-0 pixels."""
    views, refs, uvs = [], [], []
    for v, cam in enumerate(cameras):
        uv, visible = project_points(ref_points, cam)
        idx = np.flatnonzero(visible)
        views.append(np.full(len(idx), v))
        refs.append(idx)
        uvs.append(uv[idx])
    return np.concatenate(views), np.concatenate(refs), np.concatenate(uvs).reshape(-1, 2)


def deformable_aggregate(grid, ref_points, offsets, weights):
    """``R x C_feat`` sum over views of weighted bilinear samples.

    ``ref_points`` is an ``R x 3`` ego-frame array (treated as constant),
    ``offsets`` an ``R x S x K x 2`` pixel-offset tensor and ``weights`` an
    ``R x S x K`` tensor. References invisible in a view add nothing from it.
    """
    ref_points = np.asarray(ref_points, dtype=float).reshape(-1, 3)
    R = len(ref_points)
    views, refs, uv = visible_pairs(ref_points, grid.cameras)
    if len(refs) == 0:
        return Tensor(np.zeros((R, grid.channels)))
    acc = None
    for s in range(offsets.shape[1]):
        pts = T.getitem(offsets, (refs, s)) + Tensor(scale_coords(uv, s)[:, None, :])
        samples = T.bilinear_sample(grid.maps[s], pts, views[:, None], padded=grid.padded(s))
        w = T.getitem(weights, (refs, s))
        part = T.tsum(samples * T.reshape(w, w.shape + (1,)), axis=1)
        acc = part if acc is None else acc + part
    return T.segment_sum(acc, refs, R)


class DeformableBlock(Module):
    """Residual update ``x + W_out mean_refs(aggregate)`` for one task's queries."""

    def __init__(self, dim, feat_dim, rng, n_scales=2, n_points=4):
        self.n_scales = n_scales
        self.n_points = n_points
        self.norm = LayerNorm(dim)
        self.ref_embed = Linear(3, dim, rng)
        n = n_scales * n_points
        self.sampler = Linear(dim, n * 3, rng, zero=True)
        # start with the sample points on a small ring around each projection
        ang = 2 * np.pi * np.arange(n_points) / n_points
        ring = np.arctanh(2.0 / OFFSET_SCALE_PX) * np.stack([np.cos(ang), np.sin(ang)], -1)
        bias = np.zeros((n_scales, n_points, 3))
        bias[..., :2] = ring
        self.sampler.bias.data = bias.reshape(-1)
        self.out = Linear(feat_dim, dim, rng)

    def sample_params(self, x, owner, ref_points):
        """Offsets ``R x S x K x 2`` and softmax weights ``R x S x K`` for each reference."""
        R = len(owner)
        h = T.getitem(self.norm(x), owner) + self.ref_embed(Tensor(ref_points / np.array([20.0, 20.0, 1.0])))
        o = T.reshape(self.sampler(h), (R, self.n_scales, self.n_points, 3))
        offsets = T.tanh(o[..., :2]) * OFFSET_SCALE_PX
        logits = T.reshape(o[..., 2], (R, self.n_scales * self.n_points))
        weights = T.reshape(T.softmax_last(logits), (R, self.n_scales, self.n_points))
        return offsets, weights

    def __call__(self, x, grid, ref_points, owner, pooling):
        """``pooling`` is a constant ``Q x R`` matrix averaging each query's references."""
        offsets, weights = self.sample_params(x, owner, ref_points)
        agg = deformable_aggregate(grid, ref_points, offsets, weights)
        return x + self.out(T.matmul(Tensor(pooling), agg))
