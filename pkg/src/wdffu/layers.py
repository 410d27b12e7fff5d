"""Parameter containers and the small trainable layers built on tensor ops.

Modules discover parameters by walking their attributes in definition
order, so parameter names and RNG consumption are deterministic for a
fixed construction sequence.
"""
import math

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


class Module:
    """Base container; any Tensor attribute with requires_grad is a parameter."""

    def named_params(self, prefix=""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_params(prefix + name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{name}.{i}.")

    def params(self):
        return [t for _, t in self.named_params()]

    def load_state(self, state):
        """Replace parameter buffers from a name -> ndarray mapping."""
        names = dict(self.named_params())
        missing = set(names) - set(state)
        extra = set(state) - set(names)
        if missing or extra:
            raise ContractError(
                f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, tensor in names.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.data.shape:
                raise DimensionError(
                    f"shape mismatch for '{name}': {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()

    def state(self):
        return {name: t.data.copy() for name, t in self.named_params()}


def count_params(module):
    return sum(t.data.size for t in module.params())


def kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=0, groups=1, bias=True):
        if cin % groups or cout % groups:
            raise DimensionError("conv channels must divide the group count")
        self.stride = stride
        self.pad = pad
        self.groups = groups
        fan_in = (cin // groups) * k * k
        self.weight = Tensor(kaiming_uniform(rng, (cout, cin // groups, k, k), fan_in),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias,
                        stride=self.stride, pad=self.pad, groups=self.groups)

    __call__ = forward


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True):
        self.weight = Tensor(kaiming_uniform(rng, (dout, din), din), requires_grad=True)
        self.bias = Tensor(np.zeros(dout), requires_grad=True) if bias else None

    def forward(self, x):
        return T.linear(x, self.weight, self.bias)

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)

    __call__ = forward


def channel_layer_norm(x, ln):
    """LayerNorm over the channel axis of an N x C x H x W map."""
    y = T.permute(x, (0, 2, 3, 1))
    y = ln(y)
    return T.permute(y, (0, 3, 1, 2))
