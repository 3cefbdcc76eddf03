"""Parameter containers and the small layer set the decoder needs."""
import numpy as np

from mgplan.errors import DimensionError
from mgplan.numerics import tensor as T
from mgplan.numerics.tensor import Parameter


class Module:
    """Collects parameters from attributes, lists and dicts, in definition order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = np.zeros_like(p.data)

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        named = dict(self.named_parameters())
        missing = set(named) - set(state)
        unexpected = set(state) - set(named)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in named.items():
            if state[name].shape != p.data.shape:
                raise DimensionError(f"{name}: checkpoint shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)


def _walk(value, prefix):
    if isinstance(value, Parameter):
        value.name = prefix
        yield prefix, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix + ".")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield from _walk(v, f"{prefix}.{i}")
    elif isinstance(value, dict):
        for k, v in value.items():
            yield from _walk(v, f"{prefix}.{k}")


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, zero=False):
        self.d_in, self.d_out = d_in, d_out
        if zero:
            self.weight = Parameter(np.zeros((d_in, d_out)))
            self.bias = Parameter(np.zeros(d_out))
        else:
            self.weight = Parameter(uniform_init(rng, d_in, (d_in, d_out)))
            self.bias = Parameter(uniform_init(rng, d_in, (d_out,)))

    def __call__(self, x):
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        return T.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Affine layers with an activation between them; the last layer is affine only."""

    def __init__(self, widths, rng, activation="relu", zero_last=False):
        if len(widths) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.activation = activation
        self.layers = [Linear(a, b, rng, zero=zero_last and i == len(widths) - 2)
                       for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]

    def __call__(self, x):
        return mlp(x, self.layers, self.activation)


def mlp(x, layers, activation="relu"):
    act = T.ACTIVATIONS[activation]
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = act(x)
    return x


class LayerNorm(Module):
    def __init__(self, dim):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x):
        return T.layer_norm(x, self.gain, self.bias)
