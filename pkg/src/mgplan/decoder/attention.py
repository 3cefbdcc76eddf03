"""Single-head attention blocks, optionally penalized by anchor distance."""
import numpy as np

from mgplan.errors import DimensionError
from mgplan.numerics import tensor as T
from mgplan.numerics.nn import MLP, LayerNorm, Linear, Module
from mgplan.numerics.tensor import Tensor


def scaled_dot_attention(q, k, v):
    return T.matmul(T.softmax_last(T.matmul(q, k.T) * (1.0 / np.sqrt(q.shape[-1]))), v)


def geometric_attention(q, k, v, dist=None, tau=None):
    """``softmax(q k^T / sqrt(C) - tau * D) v``.

    ``tau`` is a per-row ``R x 1`` tensor (or scalar). ``tau=0`` or ``dist=None``
    skips the penalty entirely, which makes the result identical to plain
    scaled dot-product attention.
    """
    if dist is not None:
        dist = np.asarray(dist, dtype=float)
        if dist.shape != (q.shape[0], k.shape[0]):
            raise DimensionError(f"distance matrix {dist.shape} does not match {q.shape[0]} x {k.shape[0]}")
    logits = T.matmul(q, k.T) * (1.0 / np.sqrt(q.shape[-1]))
    if dist is not None and not (isinstance(tau, (int, float)) and tau == 0):
        logits = logits - tau * Tensor(dist)
    return T.matmul(T.softmax_last(logits), v)


def attention_weights(q, k, dist=None, tau=None):
    logits = q.data @ k.data.T / np.sqrt(q.shape[-1])
    if dist is not None and tau is not None:
        logits = logits - np.asarray(getattr(tau, "data", tau)) * dist
    z = np.exp(logits - logits.max(-1, keepdims=True))
    return z / z.sum(-1, keepdims=True)


class AttentionBlock(Module):
    """Pre-norm residual attention: ``x + W_o attn(LN(x) + pos_q, LN(mem) + pos_k, LN(mem))``.

    With ``geometric=True`` a small MLP maps each query row to a nonnegative
    distance coefficient through softplus.
    """

    def __init__(self, dim, rng, geometric=False, activation="relu"):
        self.dim = dim
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.wq = Linear(dim, dim, rng)
        self.wk = Linear(dim, dim, rng)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.tau_mlp = MLP([dim, dim // 2, 1], rng, activation) if geometric else None

    def tau(self, xq):
        return T.softplus(self.tau_mlp(xq))

    def __call__(self, x, mem=None, pos_q=None, pos_k=None, dist=None, tau_override=None):
        self_attn = mem is None
        xq = self.norm_q(x)
        xm = xq if self_attn else self.norm_kv(mem)
        if self_attn and pos_k is None:
            pos_k = pos_q
        q = self.wq(xq if pos_q is None else xq + pos_q)
        k = self.wk(xm if pos_k is None else xm + pos_k)
        v = self.wv(xm)
        tau = None
        if dist is not None:
            if tau_override is not None:
                tau = tau_override
            elif self.tau_mlp is not None:
                tau = self.tau(xq)
            else:
                dist = None
        return x + self.wo(geometric_attention(q, k, v, dist, tau))


class FeedForward(Module):
    def __init__(self, dim, rng, activation="relu", hidden=2):
        self.norm = LayerNorm(dim)
        self.mlp = MLP([dim, hidden * dim, dim], rng, activation)

    def __call__(self, x):
        return x + self.mlp(self.norm(x))
