"""Writer styles and the stroke-font word rasterizer."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..rng import stream
from .font import ALPHABET, BASELINE, glyph

HEIGHT, WIDTH = 32, 96
MAX_LEN = 8
STROKE_WIDTHS = (1.0, 1.5, 2.0, 2.5)

_UNITS_TO_PX = 0.8
_BASELINE_Y = 22.0
_MARGIN = 3.0


class ContentError(ValueError):
    """Text outside the alphabet or of unsupported length."""


class ConfigError(ValueError):
    pass


def check_text(text: str) -> str:
    if not 1 <= len(text) <= MAX_LEN:
        raise ContentError(f"text length must be 1..{MAX_LEN}, got {len(text)} ({text!r})")
    for ch in text:
        if ch not in ALPHABET:
            raise ContentError(f"character {ch!r} is not in the alphabet a-z")
    return text


@dataclass(frozen=True)
class WriterStyle:
    writer_id: int
    slant: float
    stroke_width: float
    ink_rgb: tuple
    baseline_wobble: float
    letter_spacing: float
    bg_tint: tuple
    bg_noise: float

    def vector(self) -> np.ndarray:
        return np.array([self.slant, self.stroke_width, *self.ink_rgb, self.baseline_wobble,
                         self.letter_spacing, *self.bg_tint, self.bg_noise])

    def to_line(self) -> str:
        rgb = lambda c: ",".join(repr(float(v)) for v in c)
        return "\t".join([str(self.writer_id), repr(self.slant), repr(self.stroke_width),
                          rgb(self.ink_rgb), repr(self.baseline_wobble),
                          repr(self.letter_spacing), rgb(self.bg_tint), repr(self.bg_noise)])

    @classmethod
    def from_line(cls, line: str) -> "WriterStyle":
        f = line.rstrip("\n").split("\t")
        if len(f) != 8:
            raise ValueError(f"style record needs 8 fields, got {len(f)}")
        rgb = lambda s: tuple(float(v) for v in s.split(","))
        return cls(int(f[0]), float(f[1]), float(f[2]), rgb(f[3]), float(f[4]),
                   float(f[5]), rgb(f[6]), float(f[7]))


def sample_writer(writer_id: int, seed: int) -> WriterStyle:
    rng = stream(seed, f"writer/{writer_id}")
    # sign alternates with writer id so both leanings are equally common;
    # magnitude kept away from 0 so the sign is a visible factor
    sign = 1.0 if writer_id % 2 == 0 else -1.0
    slant = float(sign * rng.uniform(0.1, 0.45))
    width = float(rng.choice(STROKE_WIDTHS))
    ink = tuple(float(v) for v in rng.uniform(0.0, 0.7, 3))
    wobble = float(rng.uniform(0.0, 2.0))
    spacing = float(rng.uniform(1.0, 4.0))
    bg = tuple(float(v) for v in rng.uniform(0.85, 1.0, 3))
    noise = float(rng.uniform(0.0, 0.08))
    return WriterStyle(writer_id, slant, width, ink, wobble, spacing, bg, noise)


def make_writers(n: int, seed: int) -> list[WriterStyle]:
    """``n`` writer styles; writer ``k`` depends only on ``(seed, k)``."""
    if n < 2:
        raise ConfigError(f"need at least 2 writers, got {n}")
    writers = [sample_writer(k, seed) for k in range(n)]
    vecs = {tuple(w.vector()) for w in writers}
    if len(vecs) != n:
        raise ConfigError("sampled duplicate writer styles")
    return writers


def _layout(text: str, style: WriterStyle, rng) -> list[np.ndarray]:
    phase = rng.uniform(0.0, 2 * math.pi)
    freq = rng.uniform(0.6, 1.4)
    u = _UNITS_TO_PX
    strokes, pen = [], 0.0
    for k, ch in enumerate(text):
        left, right, char_strokes = glyph(ch)
        dy = style.baseline_wobble * math.sin(phase + freq * k)
        for s in char_strokes:
            x = pen + (s[:, 0] - left) * u
            y = _BASELINE_Y + (s[:, 1] - BASELINE) * u + dy
            strokes.append(np.stack([x, y], axis=1))
        pen += (right - left) * u + style.letter_spacing
    shear = math.tan(style.slant)
    for s in strokes:
        s[:, 0] += shear * (_BASELINE_Y - s[:, 1])
    pts = np.concatenate(strokes)
    half = style.stroke_width / 2
    lo, hi = pts[:, 0].min() - half, pts[:, 0].max() + half
    avail = WIDTH - 2 * _MARGIN
    if hi - lo > avail:
        f = avail / (hi - lo)
        for s in strokes:
            s[:, 0] = lo + (s[:, 0] - lo) * f
            s[:, 1] = _BASELINE_Y + (s[:, 1] - _BASELINE_Y) * f
        hi = lo + (hi - lo) * f
    shift = WIDTH / 2 - (lo + hi) / 2
    for s in strokes:
        s[:, 0] += shift
    return strokes


def rasterize(strokes, stroke_width: float) -> np.ndarray:
    """Antialiased ink coverage [H,W] from polyline distance."""
    segs = np.concatenate([np.concatenate([s[:-1], s[1:]], axis=1) for s in strokes if len(s) > 1])
    ys, xs = np.mgrid[0:HEIGHT, 0:WIDTH]
    px = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    a, b = segs[:, None, :2], segs[:, None, 2:]
    ab = b - a
    ap = px[None] - a
    denom = np.maximum((ab * ab).sum(-1), 1e-12)
    t = np.clip((ap * ab).sum(-1) / denom, 0.0, 1.0)
    d = np.linalg.norm(ap - t[..., None] * ab, axis=-1).min(axis=0)
    return np.clip(stroke_width / 2 + 0.5 - d, 0.0, 1.0).reshape(HEIGHT, WIDTH)


@dataclass
class GlyphSample:
    image: np.ndarray  # float32 [3, 32, 96] in [0, 1]
    text: str
    writer_id: int


def render(text: str, style: WriterStyle, jitter_seed: int) -> GlyphSample:
    check_text(text)
    rng = stream(jitter_seed, "render")
    alpha = rasterize(_layout(text, style, rng), style.stroke_width)
    ink = np.asarray(style.ink_rgb)[:, None, None]
    bg = np.asarray(style.bg_tint)[:, None, None]
    img = bg * (1 - alpha) + ink * alpha
    if style.bg_noise > 0:
        img = img + rng.normal(0.0, style.bg_noise, img.shape)
    return GlyphSample(np.clip(img, 0.0, 1.0).astype(np.float32), text, style.writer_id)
