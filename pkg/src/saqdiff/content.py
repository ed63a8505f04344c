"""Character-level transformer encoder for word content."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .rng import stream
from .synthglyph.font import ALPHABET
from .synthglyph.render import MAX_LEN, check_text
from .tensor import Tensor

CONTENT_WIDTH = 128


@dataclass
class ContentEmbedding:
    features: Tensor  # [B, L, 128]
    mask: np.ndarray  # bool [B, L]


def tokenize(words) -> tuple[np.ndarray, np.ndarray]:
    """Alphabet indices [B,L] (padding 0) and validity mask, L = longest word."""
    if isinstance(words, str):
        raise TypeError("encode a list of words, not a bare string")
    words = [check_text(w) for w in words]
    if not words:
        raise ValueError("empty word list")
    L = max(len(w) for w in words)
    ids = np.zeros((len(words), L), np.int64)
    mask = np.zeros((len(words), L), bool)
    for b, w in enumerate(words):
        ids[b, :len(w)] = [ALPHABET.index(c) for c in w]
        mask[b, :len(w)] = True
    return ids, mask


class EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, width, heads, hidden, rng):
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiHeadAttention(width, heads, rng)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.FeedForward(width, hidden, rng)

    def forward(self, x, mask):
        x = x + self.attn(self.norm1(x), mask=mask)
        return x + self.ff(self.norm2(x))


class ContentEncoder(nn.Module):
    def __init__(self, seed=0, width=CONTENT_WIDTH, layers=3, heads=4, hidden=256):
        rng = stream(seed, "content/init")
        self.chars = nn.Embedding(len(ALPHABET), width, rng)
        self.positions = nn.Embedding(MAX_LEN, width, rng)
        self.layers = [EncoderLayer(width, heads, hidden, rng) for _ in range(layers)]
        self.norm = nn.LayerNorm(width)

    def forward(self, words) -> ContentEmbedding:
        ids, mask = tokenize(words)
        L = ids.shape[1]
        x = self.chars(ids) + self.positions(np.arange(L))
        for layer in self.layers:
            x = layer(x, mask)
        x = self.norm(x) * Tensor(mask[..., None].astype(np.float32))
        return ContentEmbedding(x, mask)


def encode_text(encoder: ContentEncoder, words) -> ContentEmbedding:
    return encoder(words)
