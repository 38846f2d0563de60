"""Dense tensors with reverse-mode automatic differentiation.

A deliberately small engine: it provides exactly the primitives the iris
matcher needs (2-D convolution with zero or horizontal-wrap padding, channel
l2-normalization, batch normalization, ELU/ReLU, dropout, sigmoid, global
average pooling, binary cross-entropy) plus the elementwise arithmetic used
to glue them together.

Data lives in numpy arrays, float64 by default (float32 is accepted as an
opt-in inference dtype).  Each operation records its inputs and a backward
closure; ``Tensor.backward`` replays the recorded operations in reverse
topological order and accumulates gradients into every tensor that requires
them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


_FLOAT_DTYPES = (np.float64, np.float32)

# elements per im2col block; keeps convolution workspaces < ~128 MB of f64
_COL_BUDGET = 1 << 24

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (pure inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None):
    if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES and dtype is None:
        return data
    return np.asarray(data, dtype=dtype or np.float64)


class Tensor:
    """N-dimensional real array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._consumed = False

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{flag})"

    # -- backward ---------------------------------------------------------

    def backward(self):
        """Populate ``grad`` on every tracked tensor reachable from this scalar.

        The recorded operations are replayed in reverse topological order.
        A graph can be consumed only once; repeated calls raise.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad (detached graph)")
        if self._consumed:
            raise RuntimeError("backward() already called on this graph")

        # iterative DFS: ordered tape of operations, leaves first
        tape = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                tape.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            fn = node._backward_fn
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            # drop the context so the graph cannot be replayed and can be GC'd
            node._backward_fn = None
            node._parents = ()
            node._consumed = True
        self._consumed = True

    # -- arithmetic sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor) or isinstance(other, np.ndarray):
            raise TypeError("tensor division is only supported by scalars")
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


def _wrap(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise / reduction ops -------------------------------------------


def add(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float64)) if not isinstance(a, Tensor) else a
    b = _wrap(b, a.dtype)
    data = a.data + b.data

    def backward(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b):
    a = _wrap(a, getattr(b, "dtype", np.float64)) if not isinstance(a, Tensor) else a
    b = _wrap(b, a.dtype)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _make(data, (a, b), backward)


def power(a, exponent):
    exponent = float(exponent)
    data = a.data ** exponent
    ad = a.data

    def backward(g):
        return (g * exponent * ad ** (exponent - 1.0),)

    return _make(data, (a,), backward)


def tsum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 or g.shape != shape else g,)
        gg = g
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            for ax in sorted(ax % len(shape) for ax in axes):
                gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def log(a):
    data = np.log(a.data)
    ad = a.data

    def backward(g):
        return (g / ad,)

    return _make(data, (a,), backward)


def exp(a):
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _make(data, (a,), backward)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the input was inside."""
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * inside,)

    return _make(data, (a,), backward)


def reshape(a, shape):
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(old),)

    return _make(data, (a,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat() of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        splits = np.cumsum(sizes[:-1])
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(tensors), backward)


def index_select(a, indices, axis=0):
    """Gather rows along ``axis``; backward scatter-adds duplicate indices."""
    idx = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape, dtype=g.dtype)
        if axis == 0:
            np.add.at(ga, idx, g)
        else:
            ga_m = np.moveaxis(ga, axis, 0)
            np.add.at(ga_m, idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return _make(data, (a,), backward)


# -- activations ------------------------------------------------------------


def sigmoid(a):
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), backward)


def elu(a, alpha=1.0):
    x = a.data
    neg = x <= 0
    data = np.where(neg, alpha * np.expm1(np.minimum(x, 0.0)), x)

    def backward(g):
        return (g * np.where(neg, data + alpha, 1.0),)

    return _make(data, (a,), backward)


def relu(a):
    pos = a.data > 0
    data = np.where(pos, a.data, 0.0)

    def backward(g):
        return (g * pos,)

    return _make(data, (a,), backward)


def dropout(a, rate, training, rng=None):
    """Inverted dropout: kept activations are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng (determinism contract)")
    keep = rng.random(a.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    data = a.data * keep * scale

    def backward(g):
        return (g * keep * scale,)

    return _make(data, (a,), backward)


# -- normalization ------------------------------------------------------------


def channel_l2_normalize(a, eps=1e-12):
    """Normalize each pixel's channel vector to unit l2 norm.

    Pixels whose norm falls below ``eps`` map to the zero vector and receive
    zero gradient (the normalization is undefined at the origin).
    """
    x = a.data
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    live = norm >= eps
    safe = np.where(live, norm, 1.0)
    data = np.where(live, x / safe, 0.0)

    def backward(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        return (np.where(live, (g - data * dot) / safe, 0.0),)

    return _make(data, (a,), backward)


def batch_norm(a, gamma, beta, running_mean=None, running_var=None,
               training=True, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization for (B, C, H, W) or (B, C) tensors.

    Train mode normalizes with batch statistics and, when running buffers are
    supplied, updates them in place (unbiased variance, exponential moving
    average).  Eval mode normalizes with the running buffers.
    """
    x = a.data
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm expects (B,C) or (B,C,H,W), got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    cshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    gam = gamma.data.reshape(cshape)

    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        if running_mean is not None and running_var is not None:
            n = x.size // x.shape[1]
            unbiased = var.reshape(-1) * (n / max(n - 1, 1))
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * unbiased
    else:
        if running_mean is None or running_var is None:
            raise ValueError("batch_norm in eval mode needs running statistics")
        mean = running_mean.reshape(cshape)
        var = running_var.reshape(cshape)

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    data = gam * xhat + beta.data.reshape(cshape)
    count = x.size // x.shape[1]

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        if training:
            gx = gam * inv * (
                g
                - gbeta.reshape(cshape) / count
                - xhat * ggamma.reshape(cshape) / count
            )
        else:
            gx = g * gam * inv
        return (gx, ggamma, gbeta)

    return _make(data, (a, gamma, beta), backward)


# -- padding and convolution ---------------------------------------------------


def pad2d(a, pad_top, pad_bottom, pad_left, pad_right, mode="zero"):
    """Pad the two trailing axes of a (B, C, H, W) tensor.

    mode "zero" pads everywhere with zeros.  mode "wrap" pads rows with zeros
    and columns circularly (the angular axis of a polar image): the left pad
    copies the rightmost columns and vice versa.
    """
    x = a.data
    if x.ndim != 4:
        raise ShapeError(f"pad2d expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    if mode not in ("zero", "wrap"):
        raise ValueError(f"unknown pad mode {mode!r}")
    if mode == "wrap" and (pad_left > W or pad_right > W):
        raise ShapeError(f"wrap pad of {max(pad_left, pad_right)} columns exceeds image width {W}")

    data = np.zeros((B, C, H + pad_top + pad_bottom, W + pad_left + pad_right), dtype=x.dtype)
    data[:, :, pad_top:pad_top + H, pad_left:pad_left + W] = x
    if mode == "wrap":
        if pad_left:
            data[:, :, pad_top:pad_top + H, :pad_left] = x[:, :, :, W - pad_left:]
        if pad_right:
            data[:, :, pad_top:pad_top + H, pad_left + W:] = x[:, :, :, :pad_right]

    def backward(g):
        core = g[:, :, pad_top:pad_top + H, pad_left:pad_left + W]
        if mode == "zero":
            return (core.copy(),)
        gx = core.copy()
        if pad_left:
            gx[:, :, :, W - pad_left:] += g[:, :, pad_top:pad_top + H, :pad_left]
        if pad_right:
            gx[:, :, :, :pad_right] += g[:, :, pad_top:pad_top + H, pad_left + W:]
        return (gx,)

    return _make(data, (a,), backward)


def _im2col(x, kh, kw, sh, sw, oh, ow):
    B, C, H, W = x.shape
    s0, s1, s2, s3 = x.strides
    view = as_strided(x, (B, oh, ow, C, kh, kw), (s0, s2 * sh, s3 * sw, s1, s2, s3))
    return view.reshape(B * oh * ow, C * kh * kw)


def _conv_out_size(H, W, kh, kw, sh, sw):
    if kh > H or kw > W:
        raise ShapeError(f"kernel {kh}x{kw} larger than (padded) input {H}x{W}")
    return (H - kh) // sh + 1, (W - kw) // sw + 1


def _conv_batch_step(oh, ow, c, kh, kw):
    per_sample = oh * ow * c * kh * kw
    return max(1, _COL_BUDGET // max(per_sample, 1))


def _conv_forward(x, w, b, sh, sw):
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = w.shape
    oh, ow = _conv_out_size(H, W, kh, kw, sh, sw)
    wmat = w.reshape(Cout, -1)
    out = np.empty((B, Cout, oh, ow), dtype=x.dtype)
    step = _conv_batch_step(oh, ow, C, kh, kw)
    for b0 in range(0, B, step):
        xb = x[b0:b0 + step]
        cols = _im2col(xb, kh, kw, sh, sw, oh, ow)
        y = cols @ wmat.T
        if b is not None:
            y += b
        out[b0:b0 + step] = y.reshape(xb.shape[0], oh, ow, Cout).transpose(0, 3, 1, 2)
    return out


def _conv_backward(g, x, w, has_bias, sh, sw):
    B, C, H, W = x.shape
    Cout, Cin, kh, kw = w.shape
    oh, ow = g.shape[2], g.shape[3]
    wmat = w.reshape(Cout, -1)
    gw = np.zeros_like(wmat)
    gx = np.zeros_like(x)
    gb = g.sum(axis=(0, 2, 3)) if has_bias else None
    step = _conv_batch_step(oh, ow, C, kh, kw)
    for b0 in range(0, B, step):
        xb = x[b0:b0 + step]
        n = xb.shape[0]
        cols = _im2col(xb, kh, kw, sh, sw, oh, ow)
        g2 = g[b0:b0 + n].transpose(0, 2, 3, 1).reshape(n * oh * ow, Cout)
        gw += g2.T @ cols
        gcols = (g2 @ wmat).reshape(n, oh, ow, C, kh, kw)
        gxb = gx[b0:b0 + n]
        for i in range(kh):
            for j in range(kw):
                gxb[:, :, i:i + sh * oh:sh, j:j + sw * ow:sw] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return gx, gw.reshape(w.shape), gb


def conv2d(a, weight, bias=None, stride=1, padding="none"):
    """2-D cross-correlation with optional same-size zero or wrap padding.

    padding: "none" (valid), "zero" (same-size, floor(k/2) zeros each side),
    "wrap" (same-size; columns continue circularly, rows pad with zeros), an
    int, or an (ph, pw) pair of explicit zero-pad amounts.  Kernel extents
    must be odd so "half the width" is well defined.
    """
    sh, sw = (stride, stride) if isinstance(stride, int) else tuple(stride)
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be positive, got ({sh}, {sw})")
    if a.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d expects (B,Cin,H,W) input and (Cout,Cin,kh,kw) weight, "
            f"got {a.data.shape} and {weight.data.shape}")
    Cout, Cin, kh, kw = weight.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    if a.data.shape[1] != Cin:
        raise ShapeError(f"input has {a.data.shape[1]} channels but weight expects {Cin}")
    if bias is not None and bias.data.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.data.shape} does not match {Cout} output channels")

    if padding == "none":
        padded = a
    elif padding == "zero":
        padded = pad2d(a, kh // 2, kh // 2, kw // 2, kw // 2, mode="zero")
    elif padding == "wrap":
        padded = pad2d(a, kh // 2, kh // 2, kw // 2, kw // 2, mode="wrap")
    elif isinstance(padding, int):
        padded = pad2d(a, padding, padding, padding, padding, mode="zero")
    elif isinstance(padding, tuple) and len(padding) == 2:
        ph, pw = padding
        padded = pad2d(a, ph, ph, pw, pw, mode="zero")
    else:
        raise ValueError(f"unknown padding spec {padding!r}")

    x = padded.data
    data = _conv_forward(x, weight.data, bias.data if bias is not None else None, sh, sw)
    parents = (padded, weight) if bias is None else (padded, weight, bias)

    def backward(g):
        gx, gw, gb = _conv_backward(g, x, weight.data, bias is not None, sh, sw)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _make(data, parents, backward)


# -- pooling and loss --------------------------------------------------------


def global_avg_pool(a):
    """Mean over the spatial axes: (B, C, H, W) -> (B, C)."""
    x = a.data
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    data = x.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),)

    return _make(data, (a,), backward)


BCE_EPS = 1e-7


def bce_loss(p, y):
    """Mean binary cross-entropy of probabilities ``p`` against labels ``y``.

    ``p`` is clamped to [BCE_EPS, 1 - BCE_EPS] before the logs; the clamp
    blocks gradient where it is active.
    """
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=p.data.dtype)
    if yd.shape != p.data.shape:
        raise ShapeError(f"probability shape {p.data.shape} != label shape {yd.shape}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)
    n = pc.size
    data = np.asarray(-(yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc)).sum() / n, dtype=p.data.dtype)

    def backward(g):
        return (g * inside * (pc - yd) / (pc * (1.0 - pc) * n),)

    return _make(data, (p,), backward)
