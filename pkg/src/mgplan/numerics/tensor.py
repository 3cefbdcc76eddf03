"""Dense float64 tensors with a reverse-mode gradient tape.

Operations only record onto a tape while one is active (``with Tape() as tape``).
Outside a tape every op is a plain numpy computation, which is what inference uses.
"""
import threading

import numpy as np

from mgplan.errors import ContractError, DimensionError

_local = threading.local()


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Node:
    __slots__ = ("kind", "inputs", "out", "backward")

    def __init__(self, kind, inputs, out, backward):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tape:
    """Append-only record of differentiable operations.

    Nodes are appended as operations execute, so inputs always precede the
    node that consumes them and a reverse sweep is a valid topological order.
    A tape belongs to the thread that created it.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, kind, inputs, out, backward):
        out.requires_grad = True
        out.tape_id = (id(self), len(self.nodes))
        self.nodes.append(Node(kind, inputs, out, backward))

    def backward(self, loss, params=()):
        """Populate ``.grad`` on every tensor reachable from ``loss``.

        Tensors in ``params`` that the loss does not reach get a zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None or loss.tape_id[0] != id(self):
            raise ContractError("loss was not produced on this tape")
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=np.float64, copy=True)
                else:
                    inp.grad = inp.grad + gi


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.tape_id = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __len__(self):
        return self.data.shape[0]

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(kind, data, inputs, backward):
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(kind, inputs, out, backward)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, kind):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * out / bd, bd.shape)))


def matmul(a, b):
    """Matrix product; leading dims of 3-D+ operands broadcast like numpy."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), backward)


# --- shape manipulation -----------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _make("reshape", out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make("transpose", np.transpose(x.data, axes), (x,),
                 lambda g: (np.transpose(g, inv),))


def swapaxes(x, a1, a2):
    x = as_tensor(x)
    return _make("swapaxes", np.swapaxes(x.data, a1, a2), (x,),
                 lambda g: (np.swapaxes(g, a1, a2),))


def _is_fancy(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in idx)


def getitem(x, idx):
    x = as_tensor(x)
    src_shape = x.shape
    fancy = _is_fancy(idx)

    def backward(g):
        full = np.zeros(src_shape)
        if fancy:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return _make("getitem", x.data[idx], (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes} on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make("concat", out, tuple(tensors),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make("stack", out, tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# --- reductions ---------------------------------------------------------------

def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return _make("sum", x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def amin(x, axis):
    """Minimum along ``axis``; gradient goes to the first minimizing entry."""
    x = as_tensor(x)
    arg = np.expand_dims(np.argmin(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)
    src = x.shape

    def backward(g):
        full = np.zeros(src)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make("amin", out, (x,), backward)


# --- pointwise nonlinearities -----------------------------------------------

def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _make("relu", x.data * mask, (x,), lambda g: (g * mask,))


def gelu(x):
    """tanh approximation; smooth, used where kinks would spoil finite differences."""
    x = as_tensor(x)
    d = x.data
    c = np.sqrt(2.0 / np.pi)
    inner = c * (d + 0.044715 * d ** 3)
    t = np.tanh(inner)
    out = 0.5 * d * (1.0 + t)

    def backward(g):
        dinner = c * (1.0 + 3 * 0.044715 * d ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * d * (1.0 - t ** 2) * dinner),)

    return _make("gelu", out, (x,), backward)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out ** 2),))


def sigmoid(x):
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x):
    x = as_tensor(x)
    d = x.data
    out = np.logaddexp(0.0, d)
    sig = 0.5 * (1.0 + np.tanh(0.5 * d))
    return _make("softplus", out, (x,), lambda g: (g * sig,))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def log(x):
    x = as_tensor(x)
    d = x.data
    return _make("log", np.log(d), (x,), lambda g: (g / d,))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x):
    x = as_tensor(x)
    d = x.data
    return _make("square", d * d, (x,), lambda g: (2.0 * g * d,))


def absolute(x):
    x = as_tensor(x)
    d = x.data
    return _make("abs", np.abs(d), (x,), lambda g: (g * np.sign(d),))


ACTIVATIONS = {"relu": relu, "gelu": gelu, "tanh": tanh}


# --- normalizing ops ----------------------------------------------------------

def softmax_last(x):
    """Softmax over the last axis, stabilized by subtracting the row max."""
    x = as_tensor(x)
    if x.size == 0 or x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_last: empty tensor of shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax", out, (x,), backward)


def log_softmax_last(x):
    x = as_tensor(x)
    if x.size == 0 or x.ndim == 0:
        raise DimensionError(f"log_softmax_last: empty tensor of shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make("log_softmax", out, (x,),
                 lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = d.shape[-1]

    def backward(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return _make("layer_norm", out, (x, gain, bias), backward)


def smooth_l1(x, beta=1.0):
    """Elementwise Huber-style penalty: 0.5 x^2 / beta inside |x| < beta, |x| - beta/2 outside."""
    x = as_tensor(x)
    d = x.data
    a = np.abs(d)
    inside = a < beta
    out = np.where(inside, 0.5 * d * d / beta, a - 0.5 * beta)
    return _make("smooth_l1", out, (x,),
                 lambda g: (g * np.where(inside, d / beta, np.sign(d)),))


# --- sampling -------------------------------------------------------------------

def pad_feature_maps(fm):
    """Zero border of two cells around ``V x H x W x C`` maps, as ``bilinear_sample`` expects."""
    V, H, W, C = fm.shape
    padded = np.zeros((V, H + 4, W + 4, C))
    padded[:, 2:H + 2, 2:W + 2] = fm
    return padded


def bilinear_sample(feature_map, points, views=None, padded=None):
    """Sample an ``H x W x C`` map at continuous pixel points ``(u, v)``.

    ``u`` indexes columns and ``v`` rows; integer coordinates hit cell centers
    exactly. Cells outside the map read as zero, so a point more than one cell
    outside ``[0, W) x [0, H)`` samples a zero vector and gets zero gradient.

    With a ``V x H x W x C`` stack, ``views`` gives the map index of each point.
    ``padded`` may carry a cached ``pad_feature_maps`` of a constant stack.
    """
    feature_map, points = as_tensor(feature_map), as_tensor(points)
    fm = feature_map.data
    stacked = fm.ndim == 4
    if fm.ndim not in (3, 4) or points.shape[-1] != 2 or stacked != (views is not None):
        raise DimensionError(
            f"bilinear_sample: expected HxWxC map (or VxHxWxC with views) and Px2 points, "
            f"got {fm.shape} and {points.shape}")
    if not stacked:
        fm = fm[None]
    V, H, W, C = fm.shape
    pts = points.data.reshape(-1, 2)
    n = len(pts)
    if stacked:
        views = np.broadcast_to(np.asarray(views, dtype=np.int64), points.shape[:-1]).reshape(-1)
    else:
        views = np.zeros(n, dtype=np.int64)
    u, v = pts[:, 0], pts[:, 1]
    # a two-cell zero border lets every corner index be clipped instead of masked
    u0 = np.clip(np.floor(u), -2, W).astype(np.int64)
    v0 = np.clip(np.floor(v), -2, H).astype(np.int64)
    fu = np.clip(u - u0, 0.0, 1.0)
    fv = np.clip(v - v0, 0.0, 1.0)
    Wp, Hp = W + 4, H + 4
    if padded is None or feature_map.requires_grad:
        padded = pad_feature_maps(fm)
    flat = padded.reshape(-1, C)
    base = (views * Hp + (v0 + 2)) * Wp + (u0 + 2)
    idx = (base, base + 1, base + Wp, base + Wp + 1)
    f00, f01, f10, f11 = (flat[i] for i in idx)
    a, b = (1 - fu)[:, None], fu[:, None]
    top = a * f00 + b * f01
    bot = a * f10 + b * f11
    out = top + fv[:, None] * (bot - top)
    out_shape = points.shape[:-1] + (C,)

    def backward(g):
        g2 = g.reshape(-1, C)
        gfm = None
        if feature_map.requires_grad:
            gpad = np.zeros_like(flat)
            w = ((1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv)
            for i, wi in zip(idx, w):
                np.add.at(gpad, i, g2 * wi[:, None])
            gfm = gpad.reshape(V, Hp, Wp, C)[:, 2:H + 2, 2:W + 2]
            if not stacked:
                gfm = gfm[0]
        du = (f01 - f00) * (1 - fv)[:, None] + (f11 - f10) * fv[:, None]
        dv = bot - top
        gp = np.stack([(g2 * du).sum(-1), (g2 * dv).sum(-1)], axis=-1)
        return gfm, gp.reshape(points.shape)

    return _make("bilinear_sample", out.reshape(out_shape), (feature_map, points), backward)


def segment_sum(x, segments, n):
    """Sum rows of ``x`` into ``n`` buckets: ``out[k] = sum(x[i] for segments[i] == k)``."""
    x = as_tensor(x)
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != x.shape[0]:
        raise DimensionError(f"segment_sum: {len(segments)} segment ids for {x.shape[0]} rows")
    out = np.zeros((n,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    return _make("segment_sum", out, (x,), lambda g: (g[segments],))
