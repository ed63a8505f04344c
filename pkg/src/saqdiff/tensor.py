"""Dense tensors with tape-based reverse-mode automatic differentiation.

Every differentiable operation appends one record to the active
:class:`ComputationTape`. :func:`backward` replays the tape in strict
reverse order and accumulates gradients into leaf tensors. The tape is
thread-local, so separate workers never share one.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "ComputationTape", "ShapeError", "DomainError", "UsageError",
    "get_tape", "no_grad", "backward", "elementwise", "add", "sub", "mul",
    "div", "neg", "square", "relu", "silu", "exp", "log", "sqrt", "tanh",
    "scale", "clip", "matmul", "conv2d", "sum", "mean", "max", "softmax",
    "log_softmax", "reshape", "transpose", "concat", "getitem", "gather",
    "upsample2x", "avgpool2d", "layer_norm", "group_norm", "attention",
    "stop_gradient", "straight_through", "embedding", "l2_normalize",
    "reductions_and_shape", "normalize_layer",
]

NEG_INF = -1e9


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class ComputationTape:
    """Ordered record of executed operations."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.enabled = True

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, fn):
        self.records.append((out, inputs, fn))

    def clear(self):
        self.records.clear()

    def backward(self, loss: "Tensor"):
        if loss.data.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        if loss._leaf:
            _accumulate(loss, grads.pop(id(loss)))
            return
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            if out.retains_grad:
                _accumulate(out, g)
            for t, gi in zip(inputs, fn(g)):
                if gi is None or not t.requires_grad:
                    continue
                if t._leaf:
                    _accumulate(t, gi)
                    continue
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi


def _accumulate(t, g):
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.data.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


_local = threading.local()


def get_tape() -> ComputationTape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = ComputationTape()
    return tape


@contextlib.contextmanager
def no_grad():
    tape = get_tape()
    prev, tape.enabled = tape.enabled, False
    try:
        yield
    finally:
        tape.enabled = prev


def backward(loss: "Tensor"):
    get_tape().backward(loss)


def _as_array(data, dtype=None):
    if isinstance(data, np.generic):
        data = np.asarray(data)
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float32)
    return np.asarray(data, dtype=dtype or np.float32)


class Tensor:
    """An n-dimensional real array that can take part in differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "retains_grad", "_leaf", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=""):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.retains_grad = False
        self._leaf = True
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def retain_grad(self):
        self.retains_grad = True
        return self

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

    def backward(self):
        backward(self)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _t(x, like=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or np.float32))


def _make(data, inputs: Sequence[Tensor], fn) -> Tensor:
    out = Tensor(data)
    tape = get_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        tape.record(out, tuple(inputs), fn)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bshape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = _t(a, getattr(b, "data", None)), _t(b, getattr(a, "data", None))
    _bshape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _t(a, getattr(b, "data", None)), _t(b, getattr(a, "data", None))
    _bshape(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _t(a, getattr(b, "data", None)), _t(b, getattr(a, "data", None))
    _bshape(a, b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (
        _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
        _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def div(a, b):
    a, b = _t(a, getattr(b, "data", None)), _t(b, getattr(a, "data", None))
    _bshape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (
        _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
        _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None))


def neg(a):
    return _make(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float):
    c = a.data.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def square(a):
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2 * g * ad,))


def relu(a):
    mask = a.data > 0
    return _make(np.maximum(a.data, a.dtype.type(0)), (a,), lambda g: (g * mask,))


def _sigmoid(x):
    half = x.dtype.type(0.5)
    return half * (1 + np.tanh(half * x))


def silu(a):
    s = _sigmoid(a.data)
    x = a.data
    return _make(x * s, (a,), lambda g: (g * (s * (1 + x * (1 - s))),))


def tanh(a):
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1 - y * y),))


def exp(a):
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def log(a):
    if np.any(a.data < 0):
        raise DomainError("log of negative input")
    x = a.data
    with np.errstate(divide="ignore"):
        y = np.log(x)
    return _make(y, (a,), lambda g: (g / x,))


def sqrt(a):
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative input")
    y = np.sqrt(a.data)
    return _make(y, (a,), lambda g: (g / (2 * y),))


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the input was inside the range."""
    x = a.data
    mask = (x >= lo) & (x <= hi)
    return _make(np.clip(x, lo, hi), (a,), lambda g: (g * mask,))


_UNARY = {"relu": relu, "silu": silu, "exp": exp, "log": log, "sqrt": sqrt,
          "neg": neg, "square": square, "tanh": tanh}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b=None):
    if kind == "scale-by-constant":
        return scale(_t(a), float(b))
    if kind in _BINARY:
        if b is None:
            raise UsageError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](_t(a))
    raise UsageError(f"unknown elementwise op {kind!r}")


# --- contractions -------------------------------------------------------------

def matmul(a, b):
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(ad @ bd, (a, b), fn)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """2-D cross-correlation of ``x`` [B,C,H,W] with ``w`` [O,C,kh,kw]."""
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    p, s = padding, stride
    if kh > H + 2 * p or kw > W + 2 * p:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * p}x{W + 2 * p}")
    if s == 1 and C >= 8:
        out, fn = _conv_shifted(x, w, bias, p)
    else:
        out, fn = _conv_im2col(x, w, bias, s, p)
    return _make(out, (x, w) if bias is None else (x, w, bias), fn)


def _conv_shifted(x, w, bias, p):
    # Stride-1 conv as a sum of kh*kw matmuls over row-shifted views of the
    # flattened padded input. Outputs are computed on the whole padded grid
    # and the valid corner is sliced out afterwards.
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Hp, Wp = H + 2 * p, W + 2 * p
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    n = B * Hp * Wp
    tail = (kh - 1) * Wp + kw - 1
    flat = np.zeros((n + tail, C), dtype=x.dtype)
    flat[:n].reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W] = x.data.transpose(0, 2, 3, 1)
    wk = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0))  # [kh,kw,C,O]
    shifts = [(i, j, i * Wp + j) for i in range(kh) for j in range(kw)]
    full = flat[:n] @ wk[0, 0]
    for i, j, d in shifts[1:]:
        full += flat[d:d + n] @ wk[i, j]
    out = full.reshape(B, Hp, Wp, O)[:, :Ho, :Wo]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def fn(g):
        gfull = np.zeros((B, Hp, Wp, O), dtype=g.dtype)
        gfull[:, :Ho, :Wo] = g.transpose(0, 2, 3, 1)
        gfull = gfull.reshape(n, O)
        gw = gx = None
        if w.requires_grad:
            gk = np.empty((kh, kw, C, O), dtype=g.dtype)
            for i, j, d in shifts:
                gk[i, j] = flat[d:d + n].T @ gfull
            gw = gk.transpose(3, 2, 0, 1)
        if x.requires_grad:
            gflat = np.zeros_like(flat)
            for i, j, d in shifts:
                gflat[d:d + n] += gfull @ wk[i, j].T
            gx = gflat[:n].reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W].transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum((0, 2, 3)) if bias.requires_grad else None,)
        return grads

    return out, fn


def _conv_im2col(x, w, bias, s, p):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho, Wo = (H + 2 * p - kh) // s + 1, (W + 2 * p - kw) // s + 1
    dt = x.dtype
    # im2col in channels-last layout: cols[b,y,x,i,j,c]
    xh = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=dt)
    xh[:, p:p + H, p:p + W, :] = x.data.transpose(0, 2, 3, 1)
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=dt)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xh[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :]
    cols = cols.reshape(B * Ho * Wo, kh * kw * C)
    wm = w.data.transpose(0, 2, 3, 1).reshape(O, -1)
    out = cols @ wm.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))

    def fn(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = None
        if w.requires_grad:
            gw = (cols.T @ gm).T.reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gc = (gm @ wm).reshape(B, Ho, Wo, kh, kw, C)
            gxh = np.zeros_like(xh)
            for i in range(kh):
                for j in range(kw):
                    gxh[:, i:i + s * (Ho - 1) + 1:s, j:j + s * (Wo - 1) + 1:s, :] += gc[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxh[:, p:p + H, p:p + W, :].transpose(0, 3, 1, 2))
        grads = (gx, gw)
        if bias is not None:
            grads += (gm.sum(0) if bias.requires_grad else None,)
        return grads

    return out, fn


# --- reductions and shape -------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(out)


def sum(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), fn)


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    shape, dt = x.shape, x.dtype

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / dt.type(n), shape),)

    return _make(x.data.mean(axis=axes, keepdims=keepdims), (x,), fn)


def max(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    m = x.data.max(axis=axes, keepdims=True)
    mask = (x.data == m)
    mask = mask / mask.sum(axis=axes, keepdims=True)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((g * mask).astype(x.dtype),)

    return _make(m if keepdims else m.squeeze(axes), (x,), fn)


def softmax(x, axis=-1):
    _norm_axes(axis, x.ndim)
    e = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    _norm_axes(axis, x.ndim)
    sh = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(sh).sum(axis=axis, keepdims=True))
    y = sh - lse

    def fn(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _make(y, (x,), fn)


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    src = x.shape
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(xs, axis=0):
    xs = [_t(t) for t in xs]
    nd = xs[0].ndim
    ax = _norm_axes(axis, nd)[0]
    for t in xs[1:]:
        if t.ndim != nd or any(t.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"ragged concat along axis {axis}: {[t.shape for t in xs]}")
    sizes = np.cumsum([t.shape[ax] for t in xs])[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=ax), xs,
                 lambda g: tuple(np.split(g, sizes, axis=ax)))


def _has_fancy(idx):
    idx = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in idx)


def getitem(x, idx):
    """Slicing and integer-array indexing."""
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    try:
        out = x.data[idx]
    except IndexError as e:
        raise ShapeError(str(e)) from None
    fancy = _has_fancy(idx)

    def fn(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] += g
        return (gx,)

    return _make(np.array(out, copy=True) if fancy else out, (x,), fn)


def gather(x, index, axis=-1):
    """``np.take_along_axis`` with a scatter-add backward."""
    index = np.asarray(index, dtype=np.int64)
    ax = _norm_axes(axis, x.ndim)[0]
    out = np.take_along_axis(x.data, index, axis=ax)

    def fn(g):
        gx = np.zeros_like(x.data)
        grid = list(np.indices(index.shape, sparse=True))
        grid[ax] = index
        np.add.at(gx, tuple(grid), g)
        return (gx,)

    return _make(out, (x,), fn)


def embedding(weight, ids):
    return getitem(weight, np.asarray(ids, dtype=np.int64))


def upsample2x(x):
    """Nearest-neighbour x2 upsampling of the last two axes."""
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def fn(g):
        s = g.shape
        return (g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2).sum(axis=(-3, -1)),)

    return _make(out, (x,), fn)


def avgpool2d(x, k=2):
    *lead, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"avgpool2d({k}) needs extents divisible by {k}, got {H}x{W}")
    out = x.data.reshape(*lead, H // k, k, W // k, k).mean(axis=(-3, -1))

    def fn(g):
        g = g / x.dtype.type(k * k)
        return (g.repeat(k, axis=-2).repeat(k, axis=-1),)

    return _make(out, (x,), fn)


_REDUCE_SHAPE = {
    "sum": sum, "mean": mean, "max": max, "softmax": softmax, "reshape": reshape,
    "transpose": transpose, "concat": concat, "slice": getitem,
    "nearest-upsample": upsample2x, "avgpool2d": avgpool2d,
}


def reductions_and_shape(kind: str, x, *params, **kw):
    if kind not in _REDUCE_SHAPE:
        raise UsageError(f"unknown reduction/shape op {kind!r}")
    return _REDUCE_SHAPE[kind](x, *params, **kw)


# --- normalization ----------------------------------------------------------------

def _standardize(x, axes, eps):
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    return xc * inv, inv


def _standardize_grad(g, xhat, inv, axes):
    return inv * (g - g.mean(axis=axes, keepdims=True)
                  - xhat * (g * xhat).mean(axis=axes, keepdims=True))


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    xhat, inv = _standardize(x.data, -1, eps)
    y = _make(xhat, (x,), lambda g: (_standardize_grad(g, xhat, inv, -1),))
    if weight is not None:
        y = y * weight
    if bias is not None:
        y = y + bias
    return y


def group_norm(x, groups, weight=None, bias=None, eps=1e-5):
    B, C = x.shape[:2]
    if C % groups:
        raise ShapeError(f"{C} channels not divisible into {groups} groups")
    xs = x.data.reshape(B, groups, -1)
    xhat, inv = _standardize(xs, -1, eps)

    def fn(g):
        return (_standardize_grad(g.reshape(B, groups, -1), xhat, inv, -1).reshape(x.shape),)

    y = _make(xhat.reshape(x.shape), (x,), fn)
    bshape = (1, C) + (1,) * (x.ndim - 2)
    if weight is not None:
        y = y * reshape(weight, bshape)
    if bias is not None:
        y = y + reshape(bias, bshape)
    return y


def normalize_layer(x, kind, weight=None, bias=None, groups=1, eps=1e-5):
    if kind == "layernorm":
        return layer_norm(x, weight, bias, eps)
    if kind == "groupnorm":
        return group_norm(x, groups, weight, bias, eps)
    raise UsageError(f"unknown normalization {kind!r}")


def l2_normalize(x, axis=-1, eps=1e-12):
    norm = sqrt(sum(square(x), axis=axis, keepdims=True) + eps)
    return x / norm


# --- attention ------------------------------------------------------------------------

def attention(q, k, v, heads, mask=None, return_weights=False):
    """Multi-head scaled dot-product attention without projections.

    ``q`` is [B,Tq,d]; ``k`` and ``v`` are [B,Tkv,d]. ``mask`` is a boolean
    [B,Tkv] array, True where a key may be attended. Heads are concatenated
    back into [B,Tq,d]; the caller applies the output projection.
    """
    B, Tq, d = q.shape
    Tk = k.shape[1]
    if d % heads:
        raise ValueError(f"width {d} not divisible by {heads} heads")
    if k.shape != v.shape or k.shape[0] != B or k.shape[2] != d:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    dh = d // heads
    qh = transpose(reshape(q, (B, Tq, heads, dh)), (0, 2, 1, 3))
    kh = transpose(reshape(k, (B, Tk, heads, dh)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (B, Tk, heads, dh)), (0, 2, 1, 3))
    logits = scale(matmul(qh, kh), 1.0 / np.sqrt(dh))
    if mask is not None:
        bias = np.where(np.asarray(mask, dtype=bool), 0.0, NEG_INF).astype(q.dtype)
        logits = logits + Tensor(bias[:, None, None, :])
    w = softmax(logits, axis=-1)
    out = reshape(transpose(matmul(w, vh), (0, 2, 1, 3)), (B, Tq, d))
    return (out, w) if return_weights else out


# --- gradient routing ------------------------------------------------------------------

def stop_gradient(x):
    return Tensor(x.data)


def straight_through(x, x_q):
    """Forward value of ``x_q``; backward routes the gradient to ``x`` unchanged."""
    if x.shape != x_q.shape:
        raise ShapeError(f"straight_through shape mismatch: {x.shape} vs {x_q.shape}")
    return _make(x_q.data.copy(), (x, x_q), lambda g: (g, None))
