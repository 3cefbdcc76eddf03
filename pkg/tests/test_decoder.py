import time

import numpy as np
import pytest

from mgplan.decoder import (
    AttentionBlock,
    DecoderLayer,
    DeformableBlock,
    MemoryBank,
    build_distances,
    deformable_aggregate,
    geometric_attention,
    scaled_dot_attention,
    topk_indices,
)
from mgplan.decoder.attention import attention_weights
from mgplan.errors import ConfigError, DimensionError, StateError
from mgplan.model import ModelConfig, Planner
from mgplan.numerics import tensor as T
from mgplan.numerics.gradcheck import numeric_grad, rel_error
from mgplan.numerics.tensor import Tape, Tensor
from mgplan.planning_head import GranularityLayout
from mgplan.scene.camera import default_rig, project_points
from mgplan.scene.families import make_scenario
from mgplan.scene.render import FeatureGrid, render_features


@pytest.fixture(scope="module")
def grid():
    return render_features(make_scenario("overtake", 0), 2.0)


def toy_model(layers=1, activation="relu", seed=0):
    cfg = ModelConfig(dim=16, layers=layers, n_agents=8, n_map=4, k_agent=3, activation=activation,
                      layout=GranularityLayout(modalities=3))
    return Planner(cfg, np.random.default_rng(seed))


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape))


class TestDistances:
    def test_agent_pair(self):
        d = build_distances(np.array([[0.0, 0.0], [3.0, 4.0]]), np.zeros((0, 2, 2)), 0)
        assert d["agent-agent"].values[0, 1] == 5.0

    def test_polyline_min_over_vertices(self):
        d = build_distances(np.array([[0.0, 0.0]]), np.array([[[10.0, 0.0], [1.0, 1.0]]]), 0)
        assert d["agent-map"].values[0, 0] == pytest.approx(np.sqrt(2.0), abs=1e-15)

    def test_symmetry_and_planning_rows(self):
        rng = np.random.default_rng(0)
        d = build_distances(rng.normal(size=(5, 2)) * 10, rng.normal(size=(3, 4, 2)) * 10, 6)
        aa = d["agent-agent"].values
        assert np.array_equal(aa, aa.T)
        u = d["unified"].values
        assert u.shape == (14, 14)
        assert np.all(u[8:] == 0) and np.all(u[:, 8:] == 0)
        assert np.all(u >= 0)


class TestGeometricAttention:
    def test_zero_tau_is_plain_attention(self):
        rng = np.random.default_rng(1)
        q, k, v = rand(rng, 4, 8), rand(rng, 5, 8), rand(rng, 5, 8)
        dist = np.abs(rng.normal(size=(4, 5))) * 30
        assert np.array_equal(geometric_attention(q, k, v, dist, 0.0).data, scaled_dot_attention(q, k, v).data)

    def test_near_key_wins_ties(self):
        q = Tensor(np.ones((1, 4)))
        k = Tensor(np.ones((2, 4)))
        w = attention_weights(q, k, np.array([[0.0, 100.0]]), np.array([[0.01]]))
        assert w[0, 0] > w[0, 1]

    def test_row_constant_shift_leaves_weights(self):
        rng = np.random.default_rng(2)
        q, k = rand(rng, 3, 8), rand(rng, 6, 8)
        dist = np.abs(rng.normal(size=(3, 6)))
        tau = np.abs(rng.normal(size=(3, 1)))
        shifted = dist + rng.uniform(0, 50, size=(3, 1))
        a, b = attention_weights(q, k, dist, tau), attention_weights(q, k, shifted, tau)
        assert np.array_equal(a.argmax(-1), b.argmax(-1))
        np.testing.assert_allclose(a, b, rtol=1e-10)

    def test_zero_distance_rows_ignore_other_rows(self):
        rng = np.random.default_rng(3)
        q, k, v = rand(rng, 6, 8), rand(rng, 6, 8), rand(rng, 6, 8)
        tau = Tensor(np.abs(rng.normal(size=(6, 1))))
        dist = np.abs(rng.normal(size=(6, 6))) * 10
        dist[4:] = 0.0  # planning rows
        other = dist.copy()
        other[:4] = np.abs(rng.normal(size=(4, 6))) * 100
        a = geometric_attention(q, k, v, dist, tau).data[4:]
        b = geometric_attention(q, k, v, other, tau).data[4:]
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(4)
        with pytest.raises(DimensionError):
            geometric_attention(rand(rng, 3, 4), rand(rng, 5, 4), rand(rng, 5, 4), np.zeros((3, 4)), 1.0)

    def test_rows_sum_to_one_for_single_queries(self):
        rng = np.random.default_rng(5)
        w = attention_weights(rand(rng, 3, 4), rand(rng, 3, 4), np.abs(rng.normal(size=(3, 3))), np.ones((3, 1)))
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-15)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        block = AttentionBlock(8, rng, geometric=True)
        x, pos = rand(rng, 5, 8), rand(rng, 5, 8)
        pts = rng.normal(size=(5, 2)) * 5
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        perm = rng.permutation(5)
        a = block(x, pos_q=pos, dist=dist).data
        b = block(Tensor(x.data[perm]), pos_q=Tensor(pos.data[perm]), dist=dist[perm][:, perm]).data
        np.testing.assert_allclose(a[perm], b, atol=1e-12)

    def test_tau_override_zero_matches_plain_block(self):
        rng = np.random.default_rng(7)
        block = AttentionBlock(8, rng, geometric=True)
        x = rand(rng, 4, 8)
        dist = np.abs(rng.normal(size=(4, 4)))
        assert np.array_equal(block(x, dist=dist, tau_override=0.0).data, block(x).data)

    def test_tau_is_nonnegative(self):
        rng = np.random.default_rng(8)
        block = AttentionBlock(8, rng, geometric=True)
        assert np.all(block.tau(rand(rng, 50, 8) * 10).data >= 0)


def front_point():
    return np.array([[12.0, 1.0, 0.5]])


class TestDeformable:
    def test_one_hot_weight_matches_bilinear(self, grid):
        pts = front_point()
        S, K = 2, 4
        offsets = Tensor(np.zeros((1, S, K, 2)))
        w = np.zeros((1, S, K))
        w[0, 0, 0] = 1.0
        got = deformable_aggregate(grid, pts, offsets, Tensor(w)).data[0]
        expected = np.zeros(grid.channels)
        for v, cam in enumerate(grid.cameras):
            uv, vis = project_points(pts, cam)
            if vis[0]:
                expected += T.bilinear_sample(grid.maps[0][v], Tensor(uv)).data[0]
        assert np.abs(expected).sum() > 0
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)

    def test_duplicated_camera_doubles(self, grid):
        rng = np.random.default_rng(0)
        pts = front_point()
        offsets = Tensor(rng.normal(size=(1, 2, 4, 2)))
        weights = Tensor(np.full((1, 2, 4), 1 / 8))
        single = FeatureGrid([m[:1] for m in grid.maps], grid.cameras[:1])
        double = FeatureGrid([np.concatenate([m[:1], m[:1]]) for m in grid.maps], [grid.cameras[0]] * 2)
        a = deformable_aggregate(single, pts, offsets, weights).data
        b = deformable_aggregate(double, pts, offsets, weights).data
        assert np.abs(a).sum() > 0
        np.testing.assert_allclose(b, 2 * a, rtol=1e-13)

    def test_behind_all_cameras_is_zero(self, grid):
        rng = np.random.default_rng(1)
        pts = np.array([[-30.0, 0.0, 0.5], [-25.0, 3.0, 0.0]])
        agg = deformable_aggregate(grid, pts, Tensor(rng.normal(size=(2, 2, 4, 2))),
                                   Tensor(np.full((2, 2, 4), 0.125)))
        assert np.all(agg.data == 0)
        block = DeformableBlock(8, grid.channels, rng)
        x = rand(rng, 1, 8)
        owner = np.array([0, 0])
        out = block(x, grid, pts, owner, np.array([[0.5, 0.5]]))
        np.testing.assert_array_equal(out.data, x.data + block.out.bias.data)

    def test_gradient_through_offsets(self, grid):
        rng = np.random.default_rng(2)
        pts = np.array([[12.0, 1.0, 0.5], [20.0, -2.0, 0.0]])
        offsets = Tensor(rng.normal(size=(2, 2, 4, 2)) * 2, requires_grad=True)
        weights = Tensor(np.full((2, 2, 4), 0.125), requires_grad=True)
        proj = rng.normal(size=(grid.channels,))

        def f():
            return T.tsum(deformable_aggregate(grid, pts, offsets, weights) * Tensor(proj))

        with Tape() as tape:
            loss = f()
        tape.backward(loss, [offsets, weights])
        idx = rng.choice(offsets.size, 8, replace=False)
        assert rel_error(offsets.grad.reshape(-1)[idx], numeric_grad(f, offsets, idx, h=1e-5)) < 1e-3
        assert rel_error(weights.grad.reshape(-1), numeric_grad(f, weights)) < 1e-6


class TestMemory:
    def test_topk_examples(self):
        assert set(topk_indices([0.1, 0.9, 0.5], 2)) == {1, 2}
        assert list(topk_indices([0.5, 0.5], 1)) == [0]
        assert len(topk_indices([1.0, 2.0], 0)) == 0

    def test_topk_too_many(self):
        with pytest.raises(ConfigError):
            topk_indices([1.0, 2.0], 3)

    def test_store_counts_and_pointer(self):
        bank = MemoryBank(5, {"agent": 2, "map": 0, "planning": 3})
        rng = np.random.default_rng(0)
        feats = {t: rng.normal(size=(4, 8)) for t in ("agent", "map", "planning")}
        centers = {t: rng.normal(size=(4, 2)) for t in feats}
        scores = {t: rng.normal(size=4) for t in feats}
        bank.select(7)
        bank.store(np.zeros(3), feats, centers, scores)
        slot = bank.slots[2]
        assert {t: len(e.features) for t, e in slot.tasks.items()} == {"agent": 2, "map": 0, "planning": 3}
        assert bank.active_slot == 3

    def test_read_moves_centers_and_checks_width(self):
        bank = MemoryBank(1, {"agent": 1})
        bank.store(np.array([10.0, 0.0, 0.0]), {"agent": np.ones((1, 4))}, {"agent": np.array([[1.0, 2.0]])},
                   {"agent": np.array([1.0])})
        got = bank.read(np.array([11.0, 0.0, 0.0]), 4)
        np.testing.assert_allclose(got["agent"].centers, [[0.0, 2.0]], atol=1e-12)
        with pytest.raises(StateError):
            bank.read(np.zeros(3), 8)


class TestLayer:
    def test_empty_memory_passes_through(self, grid):
        model = toy_model()
        qs = model.initial_queries(np.array([20.0, 0.0]), 1, 3.0)
        layer = model.layers[0]
        from mgplan.decoder.layer import positions

        out = layer.temporal_interaction(qs, {}, positions(qs, model.pos_embed), model.pos_embed)
        assert out is qs

    def test_zero_map_memory_skips_map_attention(self, grid):
        model = toy_model()
        bank = MemoryBank(1, {"agent": 3, "map": 0, "planning": model.cfg.k_planning})
        out = model(grid, np.array([20.0, 0.0]), 1, 3.0)
        bank.store(np.zeros(3), *out.memory_payload())
        qs = model.initial_queries(np.array([20.0, 0.0]), 1, 3.0)
        from mgplan.decoder.layer import positions

        mem = bank.read(np.zeros(3), 16)
        assert "map" not in mem
        new = model.layers[0].temporal_interaction(qs, mem, positions(qs, model.pos_embed), model.pos_embed)
        assert new.map_feat is qs.map_feat
        assert not np.array_equal(new.agent_feat.data, qs.agent_feat.data)

    def test_memory_copy_is_finite_and_deterministic(self, grid):
        model = toy_model()
        runs = []
        for _ in range(2):
            bank = MemoryBank(1, {"agent": 3, "map": 0, "planning": model.cfg.k_planning})
            first = model(grid, np.array([20.0, 0.0]), 1, 3.0)
            bank.store(np.zeros(3), *first.memory_payload())
            runs.append(model(grid, np.array([20.0, 0.0]), 1, 3.0, bank.read(np.zeros(3), 16)))
        a, b = runs
        assert np.all(np.isfinite(a.queries.plan_feat.data))
        assert np.array_equal(a.queries.plan_feat.data, b.queries.plan_feat.data)

    def test_zero_refinement_keeps_anchors(self, grid):
        model = toy_model(layers=2)
        qs0 = model.initial_queries(np.array([20.0, 0.0]), 1, 3.0)
        out = model(grid, np.array([20.0, 0.0]), 1, 3.0, keep_layers=True)
        for qs in out.layer_queries:
            assert np.array_equal(qs.agent_anchor.data, qs0.agent_anchor.data)
            assert np.array_equal(qs.map_anchor.data, qs0.map_anchor.data)
            for a, b in zip(qs.plan_anchor, qs0.plan_anchor):
                assert np.array_equal(a.data, b.data)

    def test_refinement_is_bounded(self, grid):
        model = toy_model()
        layer = model.layers[0]
        for lin in [layer.refine_agent, layer.refine_map, *layer.refine_plan]:
            lin.weight.data[:] = 1e6
        qs0 = model.initial_queries(np.array([20.0, 0.0]), 1, 3.0)
        out = model(grid, np.array([20.0, 0.0]), 1, 3.0)
        assert np.all(np.abs(out.queries.agent_anchor.data - qs0.agent_anchor.data) <= [2, 2, 0.5, 0.5, 0.3])
        assert np.all(np.abs(out.queries.map_anchor.data - qs0.map_anchor.data) <= 2.0)

    def test_six_layers_refine_six_times(self, grid, monkeypatch):
        calls = []
        original = DecoderLayer.refine_anchors

        def counting(self, qs):
            calls.append(self)
            return original(self, qs)

        monkeypatch.setattr(DecoderLayer, "refine_anchors", counting)
        model = toy_model(layers=6)
        model(grid, np.array([20.0, 0.0]), 1, 3.0)
        assert len(calls) == 6 and len(set(map(id, calls))) == 6

    def test_forward_is_deterministic(self, grid):
        a = toy_model(seed=3)(grid, np.array([15.0, 2.0]), 3, 4.0)
        b = toy_model(seed=3)(grid, np.array([15.0, 2.0]), 3, 4.0)
        for x, y in zip(a.plan.waypoints, b.plan.waypoints):
            assert np.array_equal(x.data, y.data)


def decoder_gradient_errors(grid, per_param=2):
    """Relative error of analytic vs central-difference gradients for random entries of every
    decoder-layer parameter on the toy shapes (N_a=8, N_map=4, 3 modalities, 10 granularities,
    C=16), with a populated memory so the temporal blocks are exercised."""
    model = toy_model(layers=1, activation="gelu", seed=4)
    rng = np.random.default_rng(0)
    target, command, speed = np.array([18.0, 1.5]), 1, 3.0
    bank = MemoryBank(1, {"agent": 3, "map": 2, "planning": model.cfg.k_planning})
    bank.store(np.zeros(3), *model(grid, target, command, speed).memory_payload())
    memory = bank.read(np.array([0.5, 0.0, 0.0]), 16)
    probe = None

    def loss_fn():
        nonlocal probe
        out = model(grid, target, command, speed, memory)
        terms = [*out.plan.waypoints, out.plan.modality_scores, out.plan.style_scores, out.det_logits,
                 out.motion, out.map_logits, out.ego_status, out.queries.agent_anchor, out.queries.map_anchor]
        if probe is None:
            probe = [np.random.default_rng(i).normal(size=t.shape) for i, t in enumerate(terms)]
        total = None
        for t, w in zip(terms, probe):
            x = T.tsum(t * Tensor(w))
            total = x if total is None else total + x
        return total

    named = [(n, p) for n, p in model.named_parameters() if n.startswith("layers.")]
    params = [p for _, p in named]
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss, params)
    errors = []
    for name, p in named:
        idx = rng.choice(p.size, min(per_param, p.size), replace=False)
        num = numeric_grad(loss_fn, p, idx, h=1e-5)
        errors.append((rel_error(p.grad.reshape(-1)[idx], num, floor=1e-4), name))
    return errors


class TestGradients:
    def test_decoder_gradients_match_finite_differences(self, grid):
        start = time.time()
        errors = decoder_gradient_errors(grid)
        assert max(errors)[0] < 1e-3, sorted(errors)[-5:]
        assert time.time() - start < 60
