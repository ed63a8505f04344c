"""Style-aware quantization: backbone features, codebook lookup, fusion and pooling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .rng import stream
from .synthglyph.render import ConfigError
from .tensor import Tensor

STYLE_DIM = 64
CODEBOOK_SIZE = 128
BETA = 0.25


@dataclass
class StyleFeatures:
    F: Tensor  # [B,h,w,d] continuous
    F_q: Tensor  # [B,h,w,d] quantized (straight-through)
    indices: np.ndarray  # [B,h,w]
    F_global: Tensor  # [B,d]
    F_seq: Tensor  # [B,h*w,d]
    E_sel: Tensor | None = None  # codebook rows at indices, differentiable w.r.t. E


class StyleBackbone(nn.Module):
    """Four conv blocks, [B,3,32,96] -> [B,4,12,64] channels-last."""

    def __init__(self, rng, width=16, dim=STYLE_DIM):
        self.convs = [
            nn.Conv2d(3, width, 3, rng),
            nn.Conv2d(width, dim, 3, rng, stride=2, padding=1),
            nn.Conv2d(dim, dim, 3, rng, stride=2, padding=1),
            nn.Conv2d(dim, dim, 3, rng, stride=2, padding=1),
        ]
        self.norms = [nn.GroupNorm(8, width), nn.GroupNorm(8, dim), nn.GroupNorm(8, dim),
                      nn.GroupNorm(8, dim)]

    def forward(self, images):
        if images.ndim != 4 or images.shape[1:] != (3, 32, 96):
            raise T.ShapeError(f"style image must be [B,3,32,96], got {list(images.shape)}")
        h = images
        last = len(self.convs) - 1
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            h = norm(conv(h))
            if i < last:  # the final block stays linear so features are signed
                h = T.silu(h)
        return T.transpose(h, (0, 2, 3, 1))


class StyleCodebook(nn.Module):
    def __init__(self, size=CODEBOOK_SIZE, dim=STYLE_DIM, rng=None):
        if size < 2:
            raise ConfigError(f"codebook needs at least 2 entries, got {size}")
        rng = stream(0, "codebook/init") if rng is None else rng
        self.E = Tensor(rng.normal(0.0, 1.0, (size, dim)).astype(np.float32), requires_grad=True)
        self.usage_counts = Tensor(np.zeros(size, np.float32))

    @property
    def size(self) -> int:
        return self.E.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def lookup(self, indices) -> Tensor:
        return T.embedding(self.E, np.asarray(indices))

    def init_from(self, features: np.ndarray, rng) -> None:
        """Overwrite E with distinct rows drawn from ``features`` [..., dim]."""
        f = np.asarray(features, np.float32).reshape(-1, self.dim)
        if len(f) < self.size:
            raise ConfigError(f"need at least {self.size} feature vectors, got {len(f)}")
        self.E.data[...] = f[rng.choice(len(f), size=self.size, replace=False)]

    def record(self, indices) -> None:
        self.usage_counts.data += np.bincount(np.ravel(indices), minlength=self.size).astype(np.float32)

    def reset_usage(self) -> None:
        self.usage_counts.data[:] = 0


def nearest_codes(F: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Index of the nearest codebook row per feature vector; ties go to the lowest index."""
    f = np.asarray(F, np.float64).reshape(-1, F.shape[-1])
    e = np.asarray(E, np.float64)
    ff, ee = (f * f).sum(1), (e * e).sum(1)
    d = ff[:, None] - 2.0 * (f @ e.T) + ee[None]
    best = d.argmin(1)
    # the expanded form can misorder near-ties; settle those with exact differences
    tol = 1e-9 * (ff + ee.max() + 1.0)
    close = d <= d[np.arange(len(d)), best][:, None] + tol[:, None]
    for r in np.flatnonzero(close.sum(1) > 1):
        cand = np.flatnonzero(close[r])
        exact = ((f[r] - e[cand]) ** 2).sum(-1)
        best[r] = cand[exact.argmin()]
    return best.reshape(F.shape[:-1])


def quantize(F: Tensor, codebook: StyleCodebook):
    """``(F_q, indices)``; F_q holds exact codebook rows, gradients pass to ``F``."""
    if F.shape[-1] != codebook.dim:
        raise ConfigError(f"feature dim {F.shape[-1]} does not match codebook dim {codebook.dim}")
    idx = nearest_codes(F.data, codebook.E.data)
    rows = codebook.E.data[idx]
    return T.straight_through(F, Tensor(rows)), idx


def saq_loss(F: Tensor, E_sel: Tensor, beta=BETA, reduction="mean") -> Tensor:
    """Codebook term ``|sg(F) - E_sel|^2`` plus ``beta`` times the commitment term.

    ``reduction='mean'`` averages over every position and dimension;
    ``'sum'`` sums over dimensions and averages over positions.
    """
    vq = T.square(T.stop_gradient(F) - E_sel)
    cmt = T.square(F - T.stop_gradient(E_sel))
    if reduction == "mean":
        return T.mean(vq) + T.scale(T.mean(cmt), beta)
    if reduction == "sum":
        n = float(np.prod(F.shape[:-1]))
        return T.scale(T.sum(vq) + T.scale(T.sum(cmt), beta), 1.0 / n)
    raise ValueError(f"unknown reduction {reduction!r}")


class AttentionPool(nn.Module):
    """Summary token plus one self-attention layer over fused tokens."""

    def __init__(self, rng, dim=STYLE_DIM, heads=4):
        width = 2 * dim
        self.summary = Tensor(rng.normal(0.0, 0.02, (1, 1, width)).astype(np.float32), requires_grad=True)
        self.norm = nn.LayerNorm(width)
        self.attn = nn.MultiHeadAttention(width, heads, rng)
        self.proj = nn.Linear(width, dim, rng)

    def forward(self, F, F_q, return_weights=False):
        if F.shape != F_q.shape:
            raise T.ShapeError(f"F {F.shape} and F_q {F_q.shape} differ")
        B, h, w, d = F.shape
        tokens = T.reshape(T.concat([F, F_q], axis=-1), (B, h * w, 2 * d))
        summary = T.mul(self.summary, Tensor(np.ones((B, 1, 1), np.float32)))
        x = T.concat([summary, tokens], axis=1)
        out = self.attn(self.norm(x), return_weights=return_weights)
        if return_weights:
            out, weights = out
        y = self.proj(x + out)
        g, seq = y[:, 0], y[:, 1:]
        return (g, seq, weights) if return_weights else (g, seq)


def attention_pool(pool: AttentionPool, F, F_q):
    return pool(F, F_q)


class StyleEncoder(nn.Module):
    """Reference image -> :class:`StyleFeatures`.

    With ``use_saq=False`` the quantized half of the fused tokens is zeros and
    no codebook lookup happens.
    """

    def __init__(self, seed=0, codebook_size=CODEBOOK_SIZE, dim=STYLE_DIM):
        rng = stream(seed, "style/init")
        self.backbone = StyleBackbone(rng, dim=dim)
        self.codebook = StyleCodebook(codebook_size, dim, rng)
        self.pool = AttentionPool(rng, dim)

    def forward(self, images, use_saq=True) -> StyleFeatures:
        F = self.backbone(images)
        if use_saq:
            F_q, idx = quantize(F, self.codebook)
            E_sel = self.codebook.lookup(idx)
        else:
            F_q, idx, E_sel = Tensor(np.zeros(F.shape, F.dtype)), None, None
        g, seq = self.pool(F, F_q)
        return StyleFeatures(F, F_q, idx, g, seq, E_sel)

    def init_codebook(self, images, rng) -> None:
        """Seed the codebook with backbone features of ``images`` so that the
        first lookups spread over many codes instead of one."""
        with T.no_grad():
            F = self.backbone(images if isinstance(images, Tensor) else Tensor(np.asarray(images, np.float32)))
        self.codebook.init_from(F.data, rng)


def codebook_stats(indices, size: int) -> tuple[float, float]:
    """Perplexity of the empirical code distribution and fraction of codes used."""
    flat = np.concatenate([np.ravel(i) for i in indices]) if isinstance(indices, list) else np.ravel(indices)
    if flat.size == 0:
        raise ValueError("no code indices given")
    counts = np.bincount(flat.astype(np.int64), minlength=size)
    p = counts[counts > 0] / flat.size
    return float(np.exp(-(p * np.log(p)).sum())), float((counts > 0).sum() / size)
