"""Layers, parameter containers and the AdamW optimizer."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Parameter container. Tensors assigned as attributes are state; the
    ones with ``requires_grad`` are trainable parameters."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_tensors(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_tensors(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_tensors(f"{name}.{i}.")
                    elif isinstance(item, Tensor):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        return ((n, t) for n, t in self.named_tensors(prefix) if t.requires_grad)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self, prefix=""):
        return {n: t.data for n, t in self.named_tensors(prefix)}

    def load_state_dict(self, state, prefix="", strict=True):
        own = dict(self.named_tensors(prefix))
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing tensors in state: {missing[:5]}")
        for name, t in own.items():
            if name not in state:
                continue
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise T.ShapeError(f"{name}: expected {t.shape}, got {arr.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def num_parameters(self):
        return int(np.sum([p.size for p in self.parameters()]))


def _uniform(rng, shape, bound):
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(np.float32), requires_grad=True)


def _zeros(shape):
    return Tensor(np.zeros(shape, np.float32), requires_grad=True)


def _ones(shape):
    return Tensor(np.ones(shape, np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True, zero_init=False):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _zeros((n_in, n_out)) if zero_init else _uniform(rng, (n_in, n_out), bound)
        self.bias = _zeros((n_out,)) if bias else None

    def forward(self, x):
        lead = x.shape[:-1]
        y = T.matmul(T.reshape(x, (-1, x.shape[-1])), self.weight)
        if self.bias is not None:
            y = y + self.bias
        return T.reshape(y, lead + (self.weight.shape[1],))


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, padding=None, zero_init=False):
        padding = kernel // 2 if padding is None else padding
        shape = (c_out, c_in, kernel, kernel)
        self.weight = _zeros(shape) if zero_init else _uniform(rng, shape, 1.0 / np.sqrt(c_in * kernel * kernel))
        self.bias = _zeros((c_out,))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, groups, channels):
        if channels % groups:
            raise T.ShapeError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.weight = _ones((channels,))
        self.bias = _zeros((channels,))

    def forward(self, x):
        return T.group_norm(x, self.groups, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width):
        self.weight = _ones((width,))
        self.bias = _zeros((width,))

    def forward(self, x):
        return T.layer_norm(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, count, width, rng, std=0.02):
        self.weight = Tensor(rng.normal(0.0, std, size=(count, width)).astype(np.float32), requires_grad=True)

    def forward(self, ids):
        return T.embedding(self.weight, ids)


class MultiHeadAttention(Module):
    """Projected multi-head attention; ``context`` defaults to ``x`` (self-attention)."""

    def __init__(self, width, heads, rng, context_width=None):
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        cw = width if context_width is None else context_width
        self.heads = heads
        self.q = Linear(width, width, rng, bias=False)
        self.k = Linear(cw, width, rng, bias=False)
        self.v = Linear(cw, width, rng, bias=False)
        self.out = Linear(width, width, rng)

    def forward(self, x, context=None, mask=None, return_weights=False):
        ctx = x if context is None else context
        res = T.attention(self.q(x), self.k(ctx), self.v(ctx), self.heads, mask=mask,
                          return_weights=return_weights)
        if return_weights:
            return self.out(res[0]), res[1]
        return self.out(res)


class FeedForward(Module):
    def __init__(self, width, hidden, rng):
        self.fc1 = Linear(width, hidden, rng)
        self.fc2 = Linear(hidden, width, rng)

    def forward(self, x):
        return self.fc2(T.silu(self.fc1(x)))


class AdamW:
    """Adam with decoupled weight decay. Updates parameter arrays in place."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            if self.weight_decay:
                p.data *= np.float32(1 - self.lr * self.weight_decay)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def state_dict(self, prefix="opt."):
        out = {f"{prefix}step": np.array([self.step_count], np.float32)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}m.{i}"] = m
            out[f"{prefix}v.{i}"] = v
        return out
