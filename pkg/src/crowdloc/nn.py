"""Layers over the tensor kernel.

A deliberately small module system: layers register parameters and
buffers by attribute assignment, names follow attribute paths with dots,
and a state dict is just {dotted name: ndarray}. Buffers (running batch
statistics) live in the state dict but receive no gradients.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import truncnorm

from . import tensor as T
from .tensor import ConvSpec, Tensor

__all__ = [
    "Module",
    "ModuleList",
    "Linear",
    "LayerNorm",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "trunc_normal_",
]


def trunc_normal_(param, rng, std=0.02, bound=2.0):
    """Fill with a normal truncated to +/- ``bound`` standard deviations."""
    flat = truncnorm.rvs(
        -bound, bound, scale=std, size=param.data.size, random_state=rng
    )
    param.data = flat.astype(np.float32).reshape(param.data.shape)
    return param


class Module:
    """Base class: parameter/buffer registration and mode switching."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = np.asarray(array, dtype=np.float32)
        object.__setattr__(self, name, self._buffers[name])

    # -- traversal -----------------------------------------------------

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- state ----------------------------------------------------------

    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing, loaded = [], set()
        for name, p in own.items():
            if name not in state:
                missing.append(name)
                continue
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(
                    f"{name}: shape {arr.shape} does not match {p.data.shape}"
                )
            p.data = arr.copy()
            loaded.add(name)
        for name, buf in self.named_buffers():
            if name in state:
                arr = np.asarray(state[name], dtype=np.float32)
                if arr.shape != buf.shape:
                    raise ValueError(
                        f"{name}: shape {arr.shape} does not match {buf.shape}"
                    )
                buf[...] = arr
                loaded.add(name)
            else:
                missing.append(name)
        if missing:
            raise ValueError(f"state dict missing entries: {missing}")
        extra = set(state) - loaded
        if extra:
            raise ValueError(f"state dict has unknown entries: {sorted(extra)}")

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    """Sequence of submodules addressed by integer index in names."""

    def __init__(self, mods=()):
        super().__init__()
        self._list = []
        for m in mods:
            self.append(m)

    def append(self, mod):
        self._children[str(len(self._list))] = mod
        self._list.append(mod)

    def __iter__(self):
        return iter(self._list)

    def __len__(self):
        return len(self._list)

    def __getitem__(self, i):
        return self._list[i]


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = Tensor(
            np.zeros((in_features, out_features), dtype=np.float32),
            requires_grad=True,
        )
        trunc_normal_(self.weight, rng)
        self.bias = (
            Tensor(np.zeros(out_features, dtype=np.float32), requires_grad=True)
            if bias
            else None
        )

    def forward(self, x):
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(dim, dtype=np.float32), requires_grad=True)

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))

    def forward(self, x):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 padding=0, dilation=1, bias=True):
        super().__init__()
        pair = lambda v: (v, v) if isinstance(v, int) else tuple(v)
        self.spec = ConvSpec(
            kernel=pair(kernel),
            stride=pair(stride),
            padding=pair(padding),
            dilation=pair(dilation),
            in_channels=in_channels,
            out_channels=out_channels,
        )
        kh, kw = self.spec.kernel
        fan_in = in_channels * kh * kw
        w = rng.standard_normal((out_channels, in_channels, kh, kw))
        self.weight = Tensor(
            (w * np.sqrt(2.0 / fan_in)).astype(np.float32), requires_grad=True
        )
        self.bias = (
            Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)
            if bias
            else None
        )

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.spec)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel, stride, rng, bias=True):
        super().__init__()
        self.stride = stride
        fan_in = in_channels * kernel * kernel
        w = rng.standard_normal((in_channels, out_channels, kernel, kernel))
        self.weight = Tensor(
            (w * np.sqrt(2.0 / fan_in)).astype(np.float32), requires_grad=True
        )
        self.bias = (
            Tensor(np.zeros(out_channels, dtype=np.float32), requires_grad=True)
            if bias
            else None
        )

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride)
