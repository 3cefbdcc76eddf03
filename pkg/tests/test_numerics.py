import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgplan.errors import ContractError, DimensionError, TrainingError
from mgplan.numerics import tensor as T
from mgplan.numerics import AdamW, MLP, Linear, Parameter, Tape, Tensor, adam_step, numeric_grad, rel_error
from mgplan.numerics.checkpoint import load_checkpoint, save_checkpoint
from mgplan.numerics.nn import LayerNorm


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def grad_of(fn, *params):
    with Tape() as tape:
        loss = fn()
        tape.backward(loss, params)
    return [p.grad.copy() for p in params]


def check_grad(fn, params, tol=1e-3):
    analytic = grad_of(fn, *params)
    for p, g in zip(params, analytic):
        num = numeric_grad(lambda: fn().item(), p)
        assert rel_error(g, num) < tol, p.name


class TestMatmul:
    def test_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)

    def test_small_product_against_loop(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        expected = loop_matmul(a, b)
        np.testing.assert_array_equal(expected, [[2.0], [4.0]])
        np.testing.assert_array_equal(T.matmul(Tensor(a), Tensor(b)).data, expected)

    def test_random_against_loop(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 5))
        np.testing.assert_allclose(T.matmul(Tensor(a), Tensor(b)).data, loop_matmul(a, b), atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_of_sum_is_b_transposed(self):
        rng = np.random.default_rng(1)
        a = Parameter(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 2)))
        (ga,) = grad_of(lambda: T.matmul(a, b).sum(), a)
        np.testing.assert_allclose(ga, np.broadcast_to(b.data.sum(1), (3, 4)))
        num = numeric_grad(lambda: (a.data @ b.data).sum(), a)
        assert rel_error(ga, num) < 1e-5


class TestSoftmax:
    def test_zero_row_uniform(self):
        np.testing.assert_allclose(T.softmax_last(Tensor(np.zeros(4))).data, [0.25] * 4)

    def test_large_logits_do_not_overflow(self):
        out = T.softmax_last(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_random_rows_and_gradient(self):
        rng = np.random.default_rng(2)
        x = Parameter(rng.normal(size=(3, 5)))
        w = Tensor(rng.normal(size=(3, 5)))
        out = T.softmax_last(x).data
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-9)
        check_grad(lambda: (T.softmax_last(x) * w).sum(), [x])

    def test_empty_raises(self):
        with pytest.raises(DimensionError):
            T.softmax_last(Tensor(np.zeros((2, 0))))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, row):
        out = T.softmax_last(Tensor(row)).data
        assert abs(out.sum() - 1.0) <= 1e-9
        assert np.all((out >= 0) & (out <= 1))


class TestMLP:
    def test_zero_weights_zero_output(self):
        rng = np.random.default_rng(0)
        m = MLP([4, 8, 3], rng)
        for p in m.parameters():
            p.data[:] = 0
        np.testing.assert_array_equal(m(Tensor(rng.normal(size=(5, 4)))).data, 0.0)

    def test_identity_layer_passthrough(self):
        m = MLP([3, 3], np.random.default_rng(0))
        m.layers[0].weight.data[:] = np.eye(3)
        m.layers[0].bias.data[:] = 0
        x = np.array([[1.0, -2.0, 3.0]])
        np.testing.assert_array_equal(m(Tensor(x)).data, x)

    def test_width_mismatch(self):
        m = MLP([3, 4, 2], np.random.default_rng(0))
        with pytest.raises(DimensionError):
            m(Tensor(np.zeros((1, 5))))

    @pytest.mark.parametrize("activation", ["relu", "gelu", "tanh"])
    def test_two_layer_gradient(self, activation):
        rng = np.random.default_rng(3)
        m = MLP([4, 6, 2], rng, activation=activation)
        x = Tensor(rng.normal(size=(5, 4)))
        w = Tensor(rng.normal(size=(5, 2)))
        fn = lambda: (m(x) * w).sum()
        analytic = grad_of(fn, *m.parameters())
        for p, g in zip(m.parameters(), analytic):
            assert rel_error(g, numeric_grad(lambda: fn().item(), p)) < 1e-4

    def test_init_bounds(self):
        lin = Linear(16, 4, np.random.default_rng(0))
        assert np.all(np.abs(lin.weight.data) <= 0.25)


class TestBilinear:
    def setup_method(self):
        self.fm = np.random.default_rng(0).normal(size=(5, 7, 3))

    def test_integer_point_exact(self):
        out = T.bilinear_sample(Tensor(self.fm), Tensor([[4.0, 2.0]])).data
        np.testing.assert_array_equal(out[0], self.fm[2, 4])

    def test_midpoint_of_equal_cells(self):
        fm = np.zeros((4, 4, 2))
        fm[1:3, 1:3] = [0.7, -1.3]
        out = T.bilinear_sample(Tensor(fm), Tensor([[1.5, 1.5]])).data
        np.testing.assert_allclose(out[0], [0.7, -1.3], atol=1e-15)

    @pytest.mark.parametrize("pt", [[-3.0, 2.0], [7.0, 1.0], [2.0, 5.0], [20.0, -9.0]])
    def test_outside_is_zero(self, pt):
        pts = Parameter([pt])
        (gp,) = grad_of(lambda: T.bilinear_sample(Tensor(self.fm), pts).sum(), pts)
        np.testing.assert_array_equal(T.bilinear_sample(Tensor(self.fm), Tensor([pt])).data, 0.0)
        np.testing.assert_array_equal(gp, 0.0)

    def test_gradients(self):
        rng = np.random.default_rng(5)
        fm = Parameter(self.fm.copy())
        pts = Parameter(rng.uniform([0.2, 0.2], [5.7, 3.7], size=(6, 2)))
        w = Tensor(rng.normal(size=(6, 3)))
        check_grad(lambda: (T.bilinear_sample(fm, pts) * w).sum(), [fm, pts], tol=1e-3)

    @given(st.floats(0.0, 5.9), st.floats(0.0, 3.9))
    @settings(max_examples=50, deadline=None)
    def test_continuous(self, u, v):
        fm = Tensor(self.fm)
        a = T.bilinear_sample(fm, Tensor([[u, v]])).data
        b = T.bilinear_sample(fm, Tensor([[u + 1e-7, v - 1e-7]])).data
        assert np.max(np.abs(a - b)) < 1e-5


class TestBackward:
    def test_sum_gradient_ones(self):
        w = Parameter([1.0, 2.0, 3.0])
        (g,) = grad_of(lambda: w.sum(), w)
        np.testing.assert_array_equal(g, [1, 1, 1])

    def test_zero_times_f(self):
        w = Parameter([1.0, -2.0])
        (g,) = grad_of(lambda: (T.exp(w) * 0.0).sum(), w)
        np.testing.assert_array_equal(g, [0.0, 0.0])

    def test_unreachable_gets_zero(self):
        w, u = Parameter([1.0]), Parameter([5.0])
        gw, gu = grad_of(lambda: (w * 3.0).sum(), w, u)
        np.testing.assert_array_equal(gu, [0.0])
        np.testing.assert_array_equal(gw, [3.0])

    def test_nonscalar_loss(self):
        w = Parameter([1.0, 2.0])
        with Tape() as tape:
            out = w * 2.0
            with pytest.raises(ContractError):
                tape.backward(out)

    def test_loss_off_tape(self):
        w = Parameter([1.0])
        loss = (w * 2.0).sum()
        with Tape() as tape:
            with pytest.raises(ContractError):
                tape.backward(loss)

    def test_tape_topological_and_single_pass(self):
        w = Parameter(np.ones(3))
        with Tape() as tape:
            a = w * 2.0
            b = a + w
            loss = (b * a).sum()
        seen = {}
        for i, node in enumerate(tape.nodes):
            for inp in node.inputs:
                if inp.tape_id is not None:
                    assert seen[inp.tape_id] < i
            seen[node.out.tape_id] = i
        tape.backward(loss)
        # d/dw (3w * 2w) = 12 w
        np.testing.assert_allclose(w.grad, 12.0)

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            m = MLP([4, 5, 1], rng)
            x = Tensor(rng.normal(size=(3, 4)))
            with Tape() as tape:
                loss = T.softmax_last(m(x).reshape(1, 3)).sum() + m(x).sum()
                tape.backward(loss)
            return loss.data.copy(), [p.grad.copy() for p in m.parameters()]
        l1, g1 = run()
        l2, g2 = run()
        assert l1.tobytes() == l2.tobytes()
        assert all(a.tobytes() == b.tobytes() for a, b in zip(g1, g2))


OPS = {
    "tanh": lambda x: T.tanh(x),
    "sigmoid": lambda x: T.sigmoid(x),
    "softplus": lambda x: T.softplus(x),
    "exp": lambda x: T.exp(x * 0.3),
    "log": lambda x: T.log(T.square(x) + 1.0),
    "sqrt": lambda x: T.sqrt(T.square(x) + 0.5),
    "smooth_l1": lambda x: T.smooth_l1(x * 3.0),
    "gelu": lambda x: T.gelu(x),
    "div": lambda x: T.div(x, T.square(x) + 2.0),
    "log_softmax": lambda x: T.log_softmax_last(x),
    "transpose": lambda x: T.transpose(x) @ x,
    "concat": lambda x: T.concat([x, x * 2.0], axis=1),
    "stack": lambda x: T.stack([x, T.tanh(x)], axis=0).sum(0),
    "getitem_fancy": lambda x: x[[0, 0, 2]] * x[[1, 2, 2]],
    "amin": lambda x: T.amin(x, axis=1),
    "mean": lambda x: x.mean(axis=0, keepdims=True) * x,
    "broadcast_add": lambda x: x + x[0:1],
    "batched_matmul": lambda x: T.matmul(x.reshape(3, 4, 1), x.reshape(3, 1, 4)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(abs(hash(name)) % 2 ** 32)
    x = Parameter(rng.normal(size=(3, 4)))
    op = OPS[name]
    w = Tensor(rng.normal(size=op(Tensor(x.data)).shape))
    check_grad(lambda: (op(x) * w).sum(), [x])


def test_layer_norm_gradient():
    rng = np.random.default_rng(4)
    ln = LayerNorm(5)
    ln.gain.data = rng.normal(size=5)
    ln.bias.data = rng.normal(size=5)
    x = Parameter(rng.normal(size=(4, 5)))
    w = Tensor(rng.normal(size=(4, 5)))
    check_grad(lambda: (ln(x) * w).sum(), [x, ln.gain, ln.bias])


class TestAdam:
    def test_zero_grad_no_wd_unchanged(self):
        p = Parameter([1.0, -2.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        for _ in range(5):
            p.grad = np.zeros(2)
            opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_descent_direction(self):
        p = Parameter([0.0, 0.0])
        opt = AdamW([p], lr=0.01, weight_decay=0.0)
        for _ in range(50):
            p.grad = np.array([2.0, -0.5])
            opt.step()
        assert p.data[0] < 0 < p.data[1]

    def test_closed_form_single_step(self):
        lr, b1, b2, eps, wd = 0.1, 0.9, 0.999, 1e-8, 0.01
        param = np.array([0.5])
        m = np.array([0.2])
        v = np.array([0.04])
        g = np.array([0.3])
        t = 3
        # hand evaluation
        p_dec = 0.5 * (1 - lr * wd)
        m_new = 0.9 * 0.2 + 0.1 * 0.3
        v_new = 0.999 * 0.04 + 0.001 * 0.09
        expected = p_dec - lr * (m_new / (1 - 0.9 ** 3)) / (np.sqrt(v_new / (1 - 0.999 ** 3)) + eps)
        adam_step(param, g, m, v, t, lr, b1, b2, eps, wd)
        assert param[0] == pytest.approx(expected, rel=1e-14)
        assert m[0] == pytest.approx(m_new) and v[0] == pytest.approx(v_new)

    def test_nan_gradient_names_parameter(self):
        p = Parameter([1.0], name="layer.weight")
        opt = AdamW([p])
        p.grad = np.array([np.nan])
        with pytest.raises(TrainingError, match="layer.weight"):
            opt.step()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.weight": rng.normal(size=(3, 4)), "b": rng.normal(size=7) * 1e-300}
    path = tmp_path / "ck.npz"
    save_checkpoint(path, tensors, config={"seed": 3}, meta={"layout": [1, 2]})
    loaded, config, meta = load_checkpoint(path)
    assert config == {"seed": 3} and meta == {"layout": [1, 2]}
    for k, v in tensors.items():
        assert loaded[k].shape == v.shape
        assert loaded[k].tobytes() == v.tobytes()
