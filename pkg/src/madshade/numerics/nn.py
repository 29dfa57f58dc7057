"""Small module system: parameter containers and the layers both nets need."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Base class collecting :class:`Tensor` parameters from attributes."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(sum(p.data.size for p in self.parameters()))

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


class Linear(Module):
    """Fully connected layer, initialised like ``torch.nn.Linear``."""

    def __init__(self, n_in, n_out, bias=True, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, (n_in, n_out)))
        self.bias = _param(rng.uniform(-bound, bound, n_out)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Square convolution on NHWC tensors with He-normal init."""

    def __init__(self, c_in, c_out, k=3, bias=False, padding="reflect", rng=None):
        rng = np.random.default_rng() if rng is None else rng
        std = np.sqrt(2.0 / (k * k * c_in))
        self.weight = _param(rng.normal(0.0, std, (k, k, c_in, c_out)))
        self.bias = _param(np.zeros(c_out)) if bias else None
        self.padding = padding

    def forward(self, x):
        y = F.conv2d(x, self.weight, padding=self.padding)
        return y if self.bias is None else y + self.bias
