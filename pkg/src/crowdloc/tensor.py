"""Minimal differentiable tensor kernel.

Single-precision numpy arrays wrapped with just enough reverse-mode
autodiff for a windowed-attention segmentation network: matmul, conv2d,
transposed conv, softmax, layer/batch norm, the usual activations, and a
handful of shape ops. Nothing here aspires to be a general autodiff
system; every op exists because the pipeline's forward/backward needs it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ConvSpec",
    "no_grad",
    "set_check_finite",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "softmax",
    "layer_norm",
    "batch_norm",
    "relu",
    "gelu",
    "sigmoid",
    "activation",
    "reshape",
    "transpose",
    "pad",
    "crop",
    "concat",
    "roll2d",
    "index",
    "resize_nearest",
    "mean",
    "tsum",
    "save_tensor",
    "load_tensor",
    "save_tensor_table",
    "load_tensor_table",
]

# Sigmoid outputs are clamped one ulp-ish inside (0, 1) so downstream
# threshold code never sees an exact 0 or 1.
_SIG_LO = np.float32(6e-8)
_SIG_HI = np.float32(1.0) - np.float32(6e-8)

_grad_enabled = True
_check_finite = False


class no_grad:
    """Context manager disabling graph construction (eval-time forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_check_finite(flag):
    """Enable the checked mode that raises on any non-finite op output."""
    global _check_finite
    _check_finite = bool(flag)


def _as_f32(data):
    arr = np.asarray(data, dtype=np.float32)
    return arr


class Tensor:
    """N-d float32 array with an optional gradient.

    ``grad`` is a plain ndarray of the same shape, populated by
    ``backward`` on every reachable leaf with ``requires_grad=True``.
    Values are immutable by convention once the tensor has entered a
    graph; only ``grad`` accumulates.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_f32(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- constructors -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False):
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False):
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad)

    # -- bookkeeping ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float32, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def backward(self):
        """Reverse-mode accumulation from this scalar into all leaves.

        Gradients of a tensor reached along several paths sum. Traversal
        order is fixed by graph construction order, so repeated runs on
        the same graph produce bit-identical gradients.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _wrap(data, parents, backward):
    """Build an op output, attaching the graph only where it matters."""
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by tensor op")
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.astype(np.float32, copy=False)


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic ---------------------------------------------


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _wrap(out_data, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _wrap(out_data, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _wrap(out_data, (a, b), backward)


# -- linear algebra ------------------------------------------------------


def matmul(a, b):
    """Matrix product with stacked (batched) leading dimensions."""
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects tensors of rank >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _wrap(out_data, (a, b), backward)


# -- convolution ---------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of a 2-d cross-correlation.

    Effective kernel span per axis is ``dilation * (kernel - 1) + 1``;
    the output size formula below must come out >= 1 on both axes.
    """

    kernel: tuple[int, int]
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if min(self.kernel) < 1:
            raise ValueError(f"kernel must be positive, got {self.kernel}")
        if min(self.stride) < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if min(self.padding) < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")
        if min(self.dilation) < 1:
            raise ValueError(f"dilation must be positive, got {self.dilation}")

    def out_size(self, h, w):
        oh = (h + 2 * self.padding[0] - self.dilation[0] * (self.kernel[0] - 1) - 1) // self.stride[0] + 1
        ow = (w + 2 * self.padding[1] - self.dilation[1] * (self.kernel[1] - 1) - 1) // self.stride[1] + 1
        return oh, ow

    def span(self):
        return (
            self.dilation[0] * (self.kernel[0] - 1) + 1,
            self.dilation[1] * (self.kernel[1] - 1) + 1,
        )


def conv2d(x, w, b, spec):
    """Cross-correlation of NCHW input with OIHW weights.

    Dilation/stride/zero-padding per ``spec``; differentiable w.r.t.
    input, weights and bias. The tap loop keeps each kernel position a
    single strided slice plus one GEMM-sized contraction.
    """
    x, w = _coerce(x), _coerce(w)
    b = _coerce(b) if b is not None else None
    n, c, h, wdt = x.data.shape
    o, ci, kh, kw = w.data.shape
    if (kh, kw) != tuple(spec.kernel):
        raise ValueError(f"weight kernel {kh}x{kw} != spec kernel {spec.kernel}")
    if c != ci or c != spec.in_channels or o != spec.out_channels:
        raise ValueError(
            f"channel mismatch: input {c}, weight ({o},{ci}), spec "
            f"({spec.out_channels},{spec.in_channels})"
        )
    oh, ow = spec.out_size(h, wdt)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv output would be {oh}x{ow} for input {h}x{wdt}")

    ph, pw = spec.padding
    sh, sw = spec.stride
    dh, dw = spec.dilation
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out_data = np.zeros((n, o, oh, ow), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i * dh : i * dh + sh * oh : sh, j * dw : j * dw + sw * ow : sw]
            out_data += np.einsum("ncyx,oc->noyx", xs, w.data[:, :, i, j], optimize=True)
    if b is not None:
        out_data += b.data.reshape(1, o, 1, 1)

    def backward(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                sl = (
                    slice(None),
                    slice(None),
                    slice(i * dh, i * dh + sh * oh, sh),
                    slice(j * dw, j * dw + sw * ow, sw),
                )
                if w.requires_grad:
                    gw[:, :, i, j] = np.einsum(
                        "noyx,ncyx->oc", g, xp[sl], optimize=True
                    )
                if x.requires_grad:
                    gxp[sl] += np.einsum(
                        "noyx,oc->ncyx", g, w.data[:, :, i, j], optimize=True
                    )
        if x.requires_grad:
            gx = gxp[:, :, ph : ph + h, pw : pw + wdt] if (ph or pw) else gxp
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w, b) if b is not None else (x, w)
    return _wrap(out_data, parents, backward)


def conv_transpose2d(x, w, b, stride):
    """Stride-s spatial upsampling, the adjoint of a stride-s conv2d.

    Weights are IOHW. Padding is derived as (k - s) / 2 so the output is
    exactly s*H x s*W; a kernel/stride pair for which that is not a
    non-negative integer is rejected.
    """
    x, w = _coerce(x), _coerce(w)
    b = _coerce(b) if b is not None else None
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be >= 1, got {(sh, sw)}")
    n, c, h, wdt = x.data.shape
    ci, o, kh, kw = w.data.shape
    if c != ci:
        raise ValueError(f"input channels {c} != weight in-channels {ci}")
    if (kh - sh) % 2 or (kw - sw) % 2 or kh < sh or kw < sw:
        raise ValueError(
            f"kernel {(kh, kw)} incompatible with stride {(sh, sw)}: "
            "need k >= s and k - s even"
        )
    ph, pw = (kh - sh) // 2, (kw - sw) // 2
    hf, wf = (h - 1) * sh + kh, (wdt - 1) * sw + kw
    full = np.zeros((n, o, hf, wf), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + sh * h : sh, j : j + sw * wdt : sw] += np.einsum(
                "niyx,io->noyx", x.data, w.data[:, :, i, j], optimize=True
            )
    out_data = full[:, :, ph : ph + sh * h, pw : pw + sw * wdt]
    if b is not None:
        out_data = out_data + b.data.reshape(1, o, 1, 1)
    else:
        out_data = np.ascontiguousarray(out_data)

    def backward(g):
        gfull = np.zeros((n, o, hf, wf), dtype=np.float32)
        gfull[:, :, ph : ph + sh * h, pw : pw + sw * wdt] = g
        if x.requires_grad:
            gx = np.zeros_like(x.data)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
        for i in range(kh):
            for j in range(kw):
                gs = gfull[:, :, i : i + sh * h : sh, j : j + sw * wdt : sw]
                if x.requires_grad:
                    gx += np.einsum(
                        "noyx,io->niyx", gs, w.data[:, :, i, j], optimize=True
                    )
                if w.requires_grad:
                    gw[:, :, i, j] = np.einsum(
                        "niyx,noyx->io", x.data, gs, optimize=True
                    )
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w, b) if b is not None else (x, w)
    return _wrap(out_data, parents, backward)


# -- normalization and attention utilities -------------------------------


def softmax(x, axis=-1):
    """Max-shifted softmax along ``axis``; rows sum to one."""
    x = _coerce(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            x._accumulate(s * (g - inner))

    return _wrap(s, (x,), backward)


def layer_norm(z, gamma, beta, eps=1e-5):
    """Normalize the last axis per sample, then apply the affine pair."""
    z, gamma, beta = _coerce(z), _coerce(gamma), _coerce(beta)
    nfeat = z.data.shape[-1]
    if gamma.data.shape != (nfeat,) or beta.data.shape != (nfeat,):
        raise ValueError("gamma/beta must match the normalized axis size")
    mu = z.data.mean(axis=-1, keepdims=True)
    var = z.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (z.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, nfeat).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, nfeat).sum(axis=0))
        if z.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            z._accumulate(((dxhat - m1 - xhat * m2) * inv).astype(np.float32))

    return _wrap(out_data, (z, gamma, beta), backward)


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization of an NCHW tensor.

    Train mode normalizes by batch statistics and folds them into the
    running arrays in place (biased variance normalizes, unbiased feeds
    the running estimate); eval mode reads the running arrays and leaves
    them untouched.
    """
    x, gamma, beta = _coerce(x), _coerce(gamma), _coerce(beta)
    n, c, h, w = x.data.shape
    m = n * h * w
    if m == 0:
        raise ValueError("batch_norm on an empty batch")
    axes = (0, 2, 3)
    # statistics and normalization run in float64; cancellation in the
    # centering step is otherwise loud enough to fail finite differences
    x64 = x.data.astype(np.float64)
    if training:
        mu = x64.mean(axis=axes)
        var = x64.var(axis=axes)
        denom = max(m - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * (var * (m / denom)).astype(running_var.dtype)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x64 - mu.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out_data = (
        xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)
    ).astype(np.float32)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes).astype(np.float32))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes).astype(np.float32))
        if x.requires_grad:
            dxhat = g.astype(np.float64) * gamma.data.reshape(1, c, 1, 1)
            if training:
                s1 = dxhat.sum(axis=axes).reshape(1, c, 1, 1)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(1, c, 1, 1)
                gx = (dxhat - s1 / m - xhat * s2 / m) * inv.reshape(1, c, 1, 1)
            else:
                gx = dxhat * inv.reshape(1, c, 1, 1)
            x._accumulate(gx.astype(np.float32))

    return _wrap(out_data, (x, gamma, beta), backward)


# -- activations ---------------------------------------------------------


def relu(x):
    x = _coerce(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))

    return _wrap(out_data, (x,), backward)


def sigmoid(x):
    x = _coerce(x)
    with np.errstate(over="ignore"):
        out_data = np.clip(
            1.0 / (1.0 + np.exp(-x.data, dtype=np.float32)), _SIG_LO, _SIG_HI
        )

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out_data * (1.0 - out_data))

    return _wrap(out_data, (x,), backward)


_INV_SQRT2 = np.float32(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = np.float32(1.0 / np.sqrt(2.0 * np.pi))


def gelu(x):
    """Exact Gaussian-CDF gelu (erf form, not the tanh approximation)."""
    x = _coerce(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out_data = (x.data * cdf).astype(np.float32)

    def backward(g):
        if x.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
            x._accumulate((g * (cdf + x.data * pdf)).astype(np.float32))

    return _wrap(out_data, (x,), backward)


def activation(kind, x):
    """Dispatch on kind in {'relu', 'gelu', 'sigmoid'}."""
    try:
        fn = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind: {kind!r}") from None
    return fn(x)


# -- shape ops -----------------------------------------------------------


def reshape(x, shape):
    x = _coerce(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return _wrap(out_data, (x,), backward)


def transpose(x, axes):
    x = _coerce(x)
    out_data = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.transpose(inv))

    return _wrap(out_data, (x,), backward)


def pad(x, widths):
    """Zero-pad; ``widths`` is a (before, after) pair per axis."""
    x = _coerce(x)
    out_data = np.pad(x.data, widths)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.data.shape))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[sl])

    return _wrap(out_data, (x,), backward)


def crop(x, slices):
    return index(x, tuple(slices))


def index(x, idx):
    """Basic int/slice indexing with scatter-style backward."""
    x = _coerce(x)
    out_data = np.ascontiguousarray(x.data[idx])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            gx[idx] += g
            x._accumulate(gx)

    return _wrap(out_data, (x,), backward)


def concat(parts, axis):
    """Join tensors along ``axis``; gradient splits back at the seams."""
    parts = [_coerce(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    starts = np.cumsum([0] + sizes)

    def backward(g):
        for p, s0, s1 in zip(parts, starts[:-1], starts[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(s0), int(s1))
                p._accumulate(g[tuple(sl)])

    return _wrap(out_data, tuple(parts), backward)


def roll2d(x, shifts, axes):
    """Cyclic shift along two axes (the shifted-window rearrangement)."""
    x = _coerce(x)
    out_data = np.roll(x.data, shifts, axis=axes)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.roll(g, (-shifts[0], -shifts[1]), axis=axes))

    return _wrap(out_data, (x,), backward)


def resize_nearest(x, size):
    """Nearest-neighbor resize of the last two axes of an NCHW tensor."""
    x = _coerce(x)
    n, c, h, w = x.data.shape
    oh, ow = size
    rows = (np.arange(oh) * h) // oh
    cols = (np.arange(ow) * w) // ow
    out_data = np.ascontiguousarray(x.data[:, :, rows[:, None], cols[None, :]])

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            flat_idx = (rows[:, None] * w + cols[None, :]).ravel()
            np.add.at(
                gx.reshape(n, c, h * w),
                (Ellipsis, flat_idx),
                g.reshape(n, c, oh * ow),
            )
            x._accumulate(gx)

    return _wrap(out_data, (x,), backward)


# -- reductions ----------------------------------------------------------


def tsum(x, axis=None):
    x = _coerce(x)
    out_data = x.data.sum(axis=axis, dtype=np.float32)

    def backward(g):
        if x.requires_grad:
            if axis is None:
                x._accumulate(np.broadcast_to(g, x.data.shape))
            else:
                x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    return _wrap(np.asarray(out_data, dtype=np.float32), (x,), backward)


def mean(x):
    x = _coerce(x)
    n = x.data.size
    out_data = np.asarray(x.data.mean(dtype=np.float32), dtype=np.float32)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g / n, x.data.shape).astype(np.float32))

    return _wrap(out_data, (x,), backward)


# -- serialization -------------------------------------------------------

_MAGIC = b"DCST"
_TABLE_MAGIC = b"DCSTCKPT"


def _tensor_bytes(arr):
    arr = np.asarray(arr, dtype="<f4")
    header = _MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def _read_tensor(fh):
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad tensor magic: {magic!r}")
    (rank,) = struct.unpack("<I", fh.read(4))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4").astype(np.float32)
    return data.reshape(dims)


def save_tensor(path, arr):
    """Write one array in the little-endian tensor file format."""
    if isinstance(arr, Tensor):
        arr = arr.data
    with open(path, "wb") as fh:
        fh.write(_tensor_bytes(arr))


def load_tensor(path):
    with open(path, "rb") as fh:
        return _read_tensor(fh)


def save_tensor_table(path, table):
    """Write a named-tensor table (dotted path -> array), e.g. a checkpoint."""
    with open(path, "wb") as fh:
        fh.write(_TABLE_MAGIC)
        fh.write(struct.pack("<I", len(table)))
        for name, arr in table.items():
            if isinstance(arr, Tensor):
                arr = arr.data
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(_tensor_bytes(arr))


def load_tensor_table(path):
    table = {}
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _TABLE_MAGIC:
            raise ValueError(f"bad table magic: {magic!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (nlen,) = struct.unpack("<I", fh.read(4))
            name = fh.read(nlen).decode("utf-8")
            table[name] = _read_tensor(fh)
    return table
