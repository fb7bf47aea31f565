"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a TapeNode linking its output to its
inputs; backward() linearizes the nodes reachable from a scalar loss into
reverse topological order and visits each exactly once. Gradients accumulate
additively across backward calls until explicitly reset.
"""

from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, DomainError, UsageError

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager that suppresses tape recording on this thread."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.enabled = False

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class TapeNode:
    """One recorded operation: the tensors it consumed and how to push a
    gradient from its output back to them."""

    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _scalar_error(t):
    raise UsageError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward):
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in inputs):
        out.requires_grad = True
        out._node = TapeNode(inputs, out, backward)
    return out


def _unbroadcast(g, shape):
    # Reduce a broadcast gradient back to the operand's shape.
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, bwd_a, bwd_b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError:
        raise DimensionError(f"operands not broadcastable: {a.shape} vs {b.shape}") from None

    def backward(g):
        ga = _unbroadcast(bwd_a(g, a.data, b.data), a.shape) if a.requires_grad else None
        gb = _unbroadcast(bwd_b(g, a.data, b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b):
    """Batched matrix product; batch extents must match exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    data = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), backward)


def softmax_lastdim(x):
    """Row-stabilized softmax over the final axis."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise DimensionError(f"softmax needs a non-empty last axis, got {x.shape}")
    if not np.isfinite(x.data).all():
        raise DomainError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), backward)


def frobenius_norm(x):
    """sqrt of the sum of squares; the gradient at the all-zero tensor is zero."""
    x = as_tensor(x)
    n = float(np.sqrt(np.sum(x.data * x.data)))

    def backward(g):
        if n == 0.0:
            return (np.zeros_like(x.data),)
        return (g * (x.data / n),)

    return _make(np.asarray(n), (x,), backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then apply affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} do not match last extent {d}")
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be > 0, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = gain.data * xhat + bias.data

    def backward(g):
        gxh = g * gain.data
        gx = None
        if x.requires_grad:
            gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                        - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gain.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if bias.requires_grad else None
        return gx, gg, gb

    return _make(y, (x, gain, bias), backward)


def conv3d_causal(x, kernel, bias, stride):
    """3D convolution over [C, T, H, W]: temporal padding on the past side only,
    spatial padding symmetric (odd spatial kernels required)."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if x.ndim != 4 or kernel.ndim != 5:
        raise DimensionError(f"conv3d expects x[C,T,H,W], kernel[Co,Ci,kt,kh,kw]; "
                             f"got {x.shape} and {kernel.shape}")
    st, sh, sw = stride
    if st <= 0 or sh <= 0 or sw <= 0:
        raise ConfigError(f"conv3d stride components must be positive, got {stride}")
    c_out, c_in, kt, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise DimensionError(f"conv3d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv3d bias shape {bias.shape} != ({c_out},)")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv3d spatial kernel extents must be odd, got {(kh, kw)}")
    pt, ph, pw = kt - 1, (kh - 1) // 2, (kw - 1) // 2
    T, H, W = x.shape[1:]
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise DimensionError(f"conv3d kernel {kernel.shape} exceeds padded input {x.shape}")
    y = kernels.conv3d_forward(x.data, kernel.data, bias.data, st, sh, sw, pt, ph, pw)

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = (kernels.conv3d_grad_input(g, kernel.data, st, sh, sw, pt, ph, pw, T, H, W)
              if x.requires_grad else None)
        gk = (kernels.conv3d_grad_weight(g, x.data, st, sh, sw, pt, ph, pw, kt, kh, kw)
              if kernel.requires_grad else None)
        gb = g.sum(axis=(1, 2, 3)) if bias.requires_grad else None
        return gx, gk, gb

    return _make(y, (x, kernel, bias), backward)


def sigmoid(x):
    x = as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def silu(x):
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(x.data * s, (x,), lambda g: (g * s * (1.0 + x.data * (1.0 - s)),))


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _make(data, (x,), backward)


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    s = tsum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / count)


def reshape(x, shape):
    x = as_tensor(x)
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (np.ascontiguousarray(g).reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def getitem(x, key):
    """Basic (slice/int/tuple) indexing with scatter-style gradient."""
    x = as_tensor(x)
    data = x.data[key]

    def backward(g):
        gx = np.zeros(x.shape)
        gx[key] = g
        return (gx,)

    return _make(data, (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def upsample_repeat(x, factors):
    """Nearest-neighbour upsampling of [C, T, H, W] by integer (fT, fH, fW)."""
    x = as_tensor(x)
    ft, fh, fw = factors
    if ft < 1 or fh < 1 or fw < 1:
        raise ConfigError(f"upsample factors must be >= 1, got {factors}")
    data = x.data.repeat(ft, axis=1).repeat(fh, axis=2).repeat(fw, axis=3)
    C, T, H, W = x.shape

    def backward(g):
        return (g.reshape(C, T, ft, H, fh, W, fw).sum(axis=(2, 4, 6)),)

    return _make(data, (x,), backward)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.inputs:
            if p._node is not None:
                stack.append((p._node, False))
    return order


def backward(loss):
    """Propagate d(loss)/d(tensor) into .grad for every requires_grad tensor
    reachable from the scalar loss."""
    if loss.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    flowing = {id(loss): np.ones_like(loss.data)}
    holders = {id(loss): loss}
    if loss._node is not None:
        for node in reversed(_toposort(loss._node)):
            g = flowing.get(id(node.output))
            if g is None:
                continue
            for parent, pg in zip(node.inputs, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pg
                else:
                    flowing[pid] = pg
                    holders[pid] = parent
    for tid, t in holders.items():
        if t.requires_grad:
            g = np.asarray(flowing[tid], dtype=np.float64).reshape(t.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g


def grad_check(f, x, h=1e-5):
    """Worst relative error between the tape gradient of f at x and central
    finite differences with step h. Denominator max(|analytic|, |numeric|, 1e-8)."""
    if h <= 0:
        raise ConfigError(f"grad_check step must be > 0, got {h}")
    xt = Tensor(np.array(x.data if isinstance(x, Tensor) else x, copy=True), requires_grad=True)
    y = f(xt)
    if y.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued f, got shape {y.shape}")
    backward(y)
    analytic = xt.grad.reshape(-1).copy()
    base = xt.data.reshape(-1)
    numeric = np.empty_like(analytic)
    with no_grad():
        for i in range(base.size):
            orig = base[i]
            base[i] = orig + h
            hi = f(xt).item()
            base[i] = orig - h
            lo = f(xt).item()
            base[i] = orig
            numeric[i] = (hi - lo) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
