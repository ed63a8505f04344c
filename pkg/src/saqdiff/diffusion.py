"""Noise schedule, conditional U-Net denoiser, guidance and the DDIM sampler."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from . import tensor as T
from .rng import as_generator, stream
from .synthglyph.render import MAX_LEN, ConfigError
from .tensor import Tensor, UsageError

T_STEPS = 1000
CTX_WIDTH = 128
GUIDANCE = 7.5
DROP_P = 0.2


class NoiseSchedule:
    """Linear beta schedule; coefficients kept in float64."""

    def __init__(self, steps=T_STEPS, beta_start=1e-4, beta_end=0.02):
        self.steps = steps
        self.betas = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
        self.alphas_cumprod = np.cumprod(1.0 - self.betas)

    def check_t(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.min() < 0 or t.max() >= self.steps):
            raise UsageError(f"timestep out of range [0, {self.steps}): {t.min()}..{t.max()}")
        return t

    def coefficients(self, t, ndim=4):
        """``sqrt(abar_t)`` and ``sqrt(1 - abar_t)`` shaped to broadcast over latents."""
        t = self.check_t(t)
        ab = self.alphas_cumprod[t].reshape(t.shape + (1,) * (ndim - t.ndim))
        return np.sqrt(ab), np.sqrt(1.0 - ab)


def q_sample(schedule: NoiseSchedule, z0, t, noise) -> np.ndarray:
    """Closed-form forward process ``sqrt(abar_t) z0 + sqrt(1 - abar_t) noise``."""
    z0 = np.asarray(z0)
    a, s = schedule.coefficients(np.broadcast_to(t, z0.shape[:1]), z0.ndim)
    return (a * z0 + s * np.asarray(noise)).astype(z0.dtype)


def predict_x0(schedule: NoiseSchedule, z_t, t, eps):
    """One-step clean-latent estimate; differentiable when ``eps`` is a Tensor."""
    a, s = schedule.coefficients(np.broadcast_to(t, np.shape(z_t)[:1]), np.ndim(z_t))
    if isinstance(eps, Tensor):
        zt = np.asarray(z_t.data if isinstance(z_t, Tensor) else z_t)
        return T.mul(T.sub(Tensor(zt), T.mul(eps, Tensor(s.astype(eps.dtype)))),
                     Tensor((1.0 / a).astype(eps.dtype)))
    return (np.asarray(z_t) - s * np.asarray(eps)) / a


def timestep_embedding(t, width=128, max_period=10000.0) -> np.ndarray:
    t = np.asarray(t, np.float64).reshape(-1)
    half = width // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=1).astype(np.float32)


# --- conditioning ------------------------------------------------------------------

@dataclass
class ConditioningContext:
    style_seq: Tensor  # [B,T_s,d_ctx]
    content: Tensor  # [B,L_max,d_ctx]
    content_mask: np.ndarray  # bool [B,L_max]
    null_style: np.ndarray = field(default=None)  # bool [B]
    null_content: np.ndarray = field(default=None)

    def __post_init__(self):
        B = self.style_seq.shape[0]
        if self.null_style is None:
            self.null_style = np.zeros(B, bool)
        if self.null_content is None:
            self.null_content = np.zeros(B, bool)

    @property
    def batch(self) -> int:
        return self.style_seq.shape[0]


def drop_conditioning(ctx: ConditioningContext, p=DROP_P, rng=None, independent=False):
    """Null-flag samples with probability ``p``; one coin covers both streams
    unless ``independent``."""
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"drop probability must be in [0,1], got {p}")
    rng = as_generator(rng, "cfg-drop")
    B = ctx.batch
    drop_s = rng.random(B) < p
    drop_c = rng.random(B) < p if independent else drop_s
    return replace(ctx, null_style=ctx.null_style | drop_s, null_content=ctx.null_content | drop_c)


def null_context(ctx: ConditioningContext) -> ConditioningContext:
    B = ctx.batch
    return replace(ctx, null_style=np.ones(B, bool), null_content=np.ones(B, bool))


def concat_contexts(a: ConditioningContext, b: ConditioningContext) -> ConditioningContext:
    return ConditioningContext(
        T.concat([a.style_seq, b.style_seq], 0), T.concat([a.content, b.content], 0),
        np.concatenate([a.content_mask, b.content_mask]),
        np.concatenate([a.null_style, b.null_style]), np.concatenate([a.null_content, b.null_content]))


class Conditioner(nn.Module):
    """Projects style and content streams to the context width and owns the
    learned null embeddings."""

    def __init__(self, rng, style_dim=64, style_tokens=48, content_dim=128, width=CTX_WIDTH):
        self.style_proj = nn.Linear(style_dim, width, rng)
        self.content_proj = nn.Linear(content_dim, width, rng)
        self.null_style = Tensor(rng.normal(0, 0.02, (1, style_tokens, width)).astype(np.float32),
                                 requires_grad=True)
        self.null_content = Tensor(rng.normal(0, 0.02, (1, MAX_LEN, width)).astype(np.float32),
                                   requires_grad=True)

    def build(self, style_seq: Tensor, content: Tensor, content_mask) -> ConditioningContext:
        B, L = content_mask.shape
        if L > MAX_LEN:
            raise T.ShapeError(f"content length {L} exceeds {MAX_LEN}")
        c = self.content_proj(content)
        if L < MAX_LEN:
            c = T.concat([c, Tensor(np.zeros((B, MAX_LEN - L, c.shape[-1]), np.float32))], axis=1)
        mask = np.zeros((B, MAX_LEN), bool)
        mask[:, :L] = content_mask
        return ConditioningContext(self.style_proj(style_seq), c, mask)

    def tokens(self, ctx: ConditioningContext):
        """Context tokens [B,T_s+L_max,d] and key mask with null streams substituted."""
        style = _select(ctx.null_style, self.null_style, ctx.style_seq)
        content = _select(ctx.null_content, self.null_content, ctx.content)
        mask = ctx.content_mask | ctx.null_content[:, None]
        key_mask = np.concatenate([np.ones((ctx.batch, style.shape[1]), bool), mask], axis=1)
        return T.concat([style, content], axis=1), key_mask


def _select(flags, null, value):
    if not flags.any():
        return value
    keep = Tensor((~flags).astype(np.float32)[:, None, None])
    use = Tensor(flags.astype(np.float32)[:, None, None])
    return value * keep + null * use


# --- U-Net ------------------------------------------------------------------------

class ResBlock(nn.Module):
    def __init__(self, c_in, c_out, temb, rng):
        self.norm1 = nn.GroupNorm(8, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, rng)
        self.temb = nn.Linear(temb, c_out, rng)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, rng, zero_init=True)
        self.skip = nn.Conv2d(c_in, c_out, 1, rng) if c_in != c_out else None

    def forward(self, x, emb):
        h = self.conv1(T.silu(self.norm1(x)))
        h = h + T.reshape(self.temb(emb), (x.shape[0], -1, 1, 1))
        h = self.conv2(T.silu(self.norm2(h)))
        return (x if self.skip is None else self.skip(x)) + h


class SpatialTransformer(nn.Module):
    """Self-attention, cross-attention to the context and a feed-forward,
    applied to the flattened feature map."""

    def __init__(self, channels, ctx_width, heads, rng):
        self.norm_in = nn.GroupNorm(8, channels)
        self.norm1 = nn.LayerNorm(channels)
        self.self_attn = nn.MultiHeadAttention(channels, heads, rng)
        self.norm2 = nn.LayerNorm(channels)
        self.cross_attn = nn.MultiHeadAttention(channels, heads, rng, context_width=ctx_width)
        self.norm3 = nn.LayerNorm(channels)
        self.ff = nn.FeedForward(channels, 2 * channels, rng)

    def forward(self, x, context, key_mask, return_weights=False):
        B, C, H, W = x.shape
        h = T.transpose(T.reshape(self.norm_in(x), (B, C, H * W)), (0, 2, 1))
        h = h + self.self_attn(self.norm1(h))
        cross = self.cross_attn(self.norm2(h), context=context, mask=key_mask,
                                return_weights=return_weights)
        weights = None
        if return_weights:
            cross, weights = cross
        h = h + cross
        h = h + self.ff(self.norm3(h))
        out = x + T.reshape(T.transpose(h, (0, 2, 1)), (B, C, H, W))
        return out, weights


@dataclass
class DenoiserOutput:
    eps_hat: Tensor
    attention_maps: list | None = None  # per cross-attention layer [B,heads,T_q,T_kv]


class UNet(nn.Module):
    """Two-level conditional noise predictor for [B,4,8,24] latents."""

    def __init__(self, seed=0, channels=4, widths=(64, 128), ctx_width=CTX_WIDTH, heads=4,
                 time_width=128):
        rng = stream(seed, "unet/init")
        w1, w2 = widths
        temb = 2 * time_width
        self.time_width = time_width
        self.ctx_width = ctx_width
        self.channels = channels
        self.time_mlp = [nn.Linear(time_width, temb, rng), nn.Linear(temb, temb, rng)]
        self.conv_in = nn.Conv2d(channels, w1, 3, rng)
        self.down_res = ResBlock(w1, w1, temb, rng)
        self.down_attn = SpatialTransformer(w1, ctx_width, heads, rng)
        self.downsample = nn.Conv2d(w1, w2, 3, rng, stride=2, padding=1)
        self.mid_res = ResBlock(w2, w2, temb, rng)
        self.mid_attn = SpatialTransformer(w2, ctx_width, heads, rng)
        self.upsample = nn.Conv2d(w2, w1, 3, rng)
        self.up_res = ResBlock(2 * w1, w1, temb, rng)
        self.up_attn = SpatialTransformer(w1, ctx_width, heads, rng)
        self.norm_out = nn.GroupNorm(8, w1)
        self.conv_out = nn.Conv2d(w1, channels, 3, rng, zero_init=True)

    def forward(self, z_t, t, context: Tensor, key_mask, return_attention=False) -> DenoiserOutput:
        if z_t.ndim != 4 or z_t.shape[1] != self.channels or z_t.shape[2] % 2 or z_t.shape[3] % 2:
            raise T.ShapeError(f"latent must be [B,{self.channels},H,W] with even H,W, got {list(z_t.shape)}")
        B = z_t.shape[0]
        if context.ndim != 3 or context.shape[0] != B or context.shape[2] != self.ctx_width:
            raise T.ShapeError(f"context must be [{B},T,{self.ctx_width}], got {list(context.shape)}")
        t = np.broadcast_to(np.asarray(t), (B,))
        emb = Tensor(timestep_embedding(t, self.time_width))
        emb = self.time_mlp[1](T.silu(self.time_mlp[0](emb)))
        maps = []
        h = self.conv_in(z_t)
        h = self.down_res(h, emb)
        h, m = self.down_attn(h, context, key_mask, return_attention)
        maps.append(m)
        skip = h
        h = self.mid_res(self.downsample(h), emb)
        h, m = self.mid_attn(h, context, key_mask, return_attention)
        maps.append(m)
        h = T.upsample2x(self.upsample(h))
        h = self.up_res(T.concat([h, skip], axis=1), emb)
        h, m = self.up_attn(h, context, key_mask, return_attention)
        maps.append(m)
        eps = self.conv_out(T.silu(self.norm_out(h)))
        return DenoiserOutput(eps, [x.data for x in maps] if return_attention else None)


class Denoiser(nn.Module):
    """U-Net plus conditioner: ``eps_theta(z_t, t, ctx)``."""

    def __init__(self, seed=0, style_dim=64, style_tokens=48, content_dim=128):
        self.unet = UNet(seed)
        self.conditioner = Conditioner(stream(seed, "conditioner/init"), style_dim, style_tokens,
                                       content_dim)

    def forward(self, z_t, t, ctx: ConditioningContext, return_attention=False) -> DenoiserOutput:
        tokens, key_mask = self.conditioner.tokens(ctx)
        z = z_t if isinstance(z_t, Tensor) else Tensor(np.asarray(z_t, np.float32))
        return self.unet(z, t, tokens, key_mask, return_attention)


def denoise(model: Denoiser, z_t, t, ctx, return_attention=False) -> DenoiserOutput:
    return model(z_t, t, ctx, return_attention)


@dataclass
class NoisedBatch:
    t: np.ndarray
    noise: np.ndarray
    z_t: np.ndarray


def draw_noise(schedule: NoiseSchedule, z0: np.ndarray, rng) -> NoisedBatch:
    """Uniform timesteps and standard-normal noise for one training batch."""
    rng = as_generator(rng, "diffusion-noise")
    t = rng.integers(0, schedule.steps, size=len(z0))
    noise = rng.standard_normal(z0.shape).astype(np.float32)
    return NoisedBatch(t, noise, q_sample(schedule, z0, t, noise))


def denoising_loss(eps_hat: Tensor, noise) -> Tensor:
    """Mean squared error between the predicted and the injected noise."""
    return T.mean(T.square(eps_hat - Tensor(np.asarray(noise, eps_hat.dtype))))


def cfg_combine(eps_cond, eps_uncond, s=GUIDANCE):
    """``eps_uncond + s (eps_cond - eps_uncond)``, evaluated so that s=0, s=1 and
    equal inputs reproduce an input exactly."""
    c, u = np.asarray(eps_cond), np.asarray(eps_uncond)
    if c.shape != u.shape:
        raise T.ShapeError(f"guidance inputs differ in shape: {c.shape} vs {u.shape}")
    d = c - u
    if s < 0.5:
        return u + np.asarray(s, c.dtype) * d
    return c - np.asarray(1.0 - s, c.dtype) * d


def ddim_timesteps(steps: int, total=T_STEPS) -> np.ndarray:
    if not 1 <= steps <= total:
        raise ConfigError(f"sampling steps must be in [1, {total}], got {steps}")
    return np.arange(steps, dtype=np.int64) * (total // steps)


def ddim_step(schedule, z_t, t, t_prev, eps, eta=0.0, rng=None):
    """Move ``z_t`` to ``t_prev`` (``-1`` means the clean end point)."""
    a_t = schedule.alphas_cumprod[t]
    a_prev = schedule.alphas_cumprod[t_prev] if t_prev >= 0 else 1.0
    x0 = (z_t - np.sqrt(1 - a_t) * eps) / np.sqrt(a_t)
    sigma = eta * np.sqrt((1 - a_prev) / (1 - a_t) * (1 - a_t / a_prev)) if eta else 0.0
    out = np.sqrt(a_prev) * x0 + np.sqrt(1 - a_prev - sigma ** 2) * eps
    if sigma:
        out = out + sigma * rng.standard_normal(z_t.shape)
    return out.astype(np.float32)


def ddim_sample(model: Denoiser, ctx: ConditioningContext, steps=50, scale=GUIDANCE, eta=0.0,
                rng=None, schedule=None, shape=(4, 8, 24), callback=None) -> np.ndarray:
    """Guided DDIM from pure noise. Conditional and unconditional passes share
    one batched network call per step."""
    schedule = schedule or NoiseSchedule()
    ts = ddim_timesteps(steps, schedule.steps)
    rng = as_generator(rng, "ddim")
    B = ctx.batch
    z = rng.standard_normal((B,) + tuple(shape)).astype(np.float32)
    both = concat_contexts(ctx, null_context(ctx))
    with T.no_grad():
        for k in range(len(ts) - 1, -1, -1):
            t = int(ts[k])
            out = model(np.concatenate([z, z]), np.full(2 * B, t), both,
                        return_attention=callback is not None)
            eps = cfg_combine(out.eps_hat.data[:B], out.eps_hat.data[B:], scale)
            if callback is not None:
                callback(t, out)
            z = ddim_step(schedule, z, t, int(ts[k - 1]) if k > 0 else -1, eps, eta, rng)
    return z
