"""Contrastive objectives over style vectors and latent patches, and the joint loss."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .autoencoder import TrainingError
from .rng import stream
from .synthglyph.render import ConfigError
from .tensor import Tensor

TAU = 0.1
ALPHA = 0.1
PCE_SCALES = (2, 4, 8)
PCE_DIM = 256
MAX_PATCHES = 256


def _check_tau(tau):
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")


def _info_nce(pos: Tensor, neg: Tensor, tau: float) -> Tensor:
    """Mean of ``-log(e^{pos/tau} / (e^{pos/tau} + sum e^{neg/tau}))``.

    ``pos`` is [...], ``neg`` is [..., M]. The shift by the per-row maximum is
    order independent, so permuting the negatives only reorders one sum.
    """
    shift = np.maximum(pos.data, neg.data.max(axis=-1)) / tau
    c = Tensor(shift.astype(pos.dtype))
    p = T.scale(pos, 1.0 / tau) - c
    n = T.scale(neg, 1.0 / tau) - T.reshape(c, c.shape + (1,))
    denom = T.exp(p) + T.sum(T.exp(n), axis=-1)
    return T.mean(T.log(denom) - p)


def sce_half(anchor, positive, negatives, tau=TAU) -> Tensor:
    """One direction of the style contrastive loss.

    ``anchor`` and ``positive`` are [P,d]; ``negatives`` is [P,M,d] and never
    receives gradient.
    """
    _check_tau(tau)
    a = T.l2_normalize(anchor)
    p = T.l2_normalize(positive)
    n = T.stop_gradient(T.l2_normalize(T.stop_gradient(negatives)))
    pos = T.sum(a * p, axis=-1)
    neg = T.sum(T.reshape(a, (a.shape[0], 1, a.shape[1])) * n, axis=-1)
    return _info_nce(pos, neg, tau)


def _others(group: np.ndarray) -> np.ndarray:
    P = len(group)
    idx = np.array([[k for k in range(P) if k != j] for j in range(P)], dtype=np.int64)
    return group[idx]  # [P, P-1, d]


def sce_loss(F_tar, F_ref, tau=TAU) -> Tensor:
    """Symmetric style contrastive loss over ``P`` (reference, target) pairs.

    Row ``j`` of both inputs comes from the same writer. For each anchor the
    negatives are the ``2P - 2`` images of the other pairs, anchor-side group
    first, so swapping the arguments only swaps the two halves.
    """
    if F_tar.shape != F_ref.shape or F_tar.ndim != 2:
        raise T.ShapeError(f"style batches must be matching [P,d], got {F_tar.shape}, {F_ref.shape}")
    if F_tar.shape[0] < 2:
        raise ConfigError("contrastive style loss needs at least 2 pairs for negatives")
    tar, ref = F_tar.data, F_ref.data
    neg_t = Tensor(np.concatenate([_others(tar), _others(ref)], axis=1))
    neg_r = Tensor(np.concatenate([_others(ref), _others(tar)], axis=1))
    h1 = sce_half(F_tar, F_ref, neg_t, tau)
    h2 = sce_half(F_ref, F_tar, neg_r, tau)
    return T.scale(h1, 0.5) + T.scale(h2, 0.5)


def sce_from_batch(F_global: Tensor, tau=TAU) -> Tensor:
    """SCE for a paired batch laid out as ``n/2`` references then ``n/2`` targets."""
    n = F_global.shape[0]
    return sce_loss(F_global[n // 2:], F_global[:n // 2], tau)


# --- latent patches --------------------------------------------------------------

class ProjectionHead(nn.Module):
    def __init__(self, n_in, rng, width=PCE_DIM):
        self.fc1 = nn.Linear(n_in, width, rng)
        self.fc2 = nn.Linear(width, width, rng)

    def forward(self, x):
        return T.l2_normalize(self.fc2(T.relu(self.fc1(x))))


class PatchHeads(nn.Module):
    """One projection head per patch scale."""

    def __init__(self, seed=0, channels=4, scales=PCE_SCALES, width=PCE_DIM):
        rng = stream(seed, "pce/init")
        self.scales = tuple(scales)
        self.heads = [ProjectionHead(s * s * channels, rng, width) for s in self.scales]

    def head(self, s) -> ProjectionHead:
        return self.heads[self.scales.index(s)]


@dataclass
class PatchSet:
    scale: int
    patches: Tensor  # [B, H_s, s*s*c]
    embeddings: Tensor  # [B, H_s, 256]

    @property
    def count(self) -> int:
        return self.patches.shape[1]


def grid_patches(latent: Tensor, s: int) -> Tensor | None:
    """Non-overlapping ``s``x``s`` tiles in row-major order, [B,H_s,c*s*s]."""
    latent = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, np.float32))
    B, c, h, w = latent.shape
    if s > min(h, w):
        return None
    gh, gw = h // s, w // s
    x = latent[:, :, :gh * s, :gw * s]
    x = T.reshape(x, (B, c, gh, s, gw, s))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    x = T.reshape(x, (B, gh * gw, c * s * s))
    return x[:, :MAX_PATCHES] if gh * gw > MAX_PATCHES else x


def extract_patches(latent, s: int, head: ProjectionHead) -> PatchSet | None:
    """Patches at scale ``s`` and their normalized embeddings; ``None`` with a
    warning when the latent is smaller than one patch."""
    patches = grid_patches(latent, s)
    if patches is None:
        warnings.warn(f"patch scale {s} exceeds latent size {tuple(np.shape(latent))[2:]}; skipped",
                      RuntimeWarning, stacklevel=2)
        return None
    return PatchSet(s, patches, head(patches))


def latent_pce_half(z: PatchSet, z_hat: PatchSet, tau=TAU) -> Tensor:
    """Patch ``p`` of ``z`` against all patches of ``z_hat`` from the same image;
    only the co-located patch carries gradient on the ``z_hat`` side."""
    _check_tau(tau)
    a, b = z.embeddings, z_hat.embeddings
    if a.shape != b.shape:
        raise T.ShapeError(f"patch sets differ: {a.shape} vs {b.shape}")
    B, H, _ = a.shape
    if H < 2:
        warnings.warn(f"scale {z.scale} has {H} patch per image; no negatives", RuntimeWarning,
                      stacklevel=2)
        return Tensor(np.zeros((), np.float32))
    pos = T.sum(a * b, axis=-1)  # [B,H]
    sims = T.matmul(a, T.transpose(T.stop_gradient(b), (0, 2, 1)))  # [B,H,H]
    rows, cols = np.nonzero(~np.eye(H, dtype=bool))
    neg = T.reshape(sims[:, rows, cols], (B, H, H - 1))
    return _info_nce(pos, neg, tau)


def latent_pce_loss(z0_true, z0_pred, heads: PatchHeads, tau=TAU) -> Tensor:
    """Bidirectional patch loss averaged over the applicable scales (1/(2S))."""
    halves = []
    for s in heads.scales:
        z = extract_patches(z0_true, s, heads.head(s))
        zh = extract_patches(z0_pred, s, heads.head(s))
        if z is None:
            continue
        if z.count < 2:
            warnings.warn(f"scale {s} has {z.count} patch per image; no negatives", RuntimeWarning,
                          stacklevel=2)
            continue
        halves.append(latent_pce_half(z, zh, tau) + latent_pce_half(zh, z, tau))
    if not halves:
        return Tensor(np.zeros((), np.float32))
    total = halves[0]
    for h in halves[1:]:
        total = total + h
    return T.scale(total, 1.0 / (2 * len(halves)))


# --- joint objective ---------------------------------------------------------------

def combined_loss(denoising: Tensor, pce=None, sce=None, saq=None, alpha=ALPHA):
    """``denoising + alpha * (pce + sce + saq)``; ``None`` terms are disabled.

    Returns ``(total, values)`` where ``values`` holds each raw term (NaN for
    disabled ones). With every auxiliary term disabled the total is the
    denoising tensor itself.
    """
    terms = {"L_den": denoising, "L_pce": pce, "L_sce": sce, "L_saq": saq}
    values = {}
    for name, term in terms.items():
        if term is None:
            values[name] = math.nan
            continue
        v = float(term.item() if isinstance(term, Tensor) else term)
        if not math.isfinite(v):
            raise TrainingError(f"loss term {name} is not finite ({v})")
        values[name] = v
    aux = [t for t in (pce, sce, saq) if t is not None]
    if not aux:
        total = denoising
    else:
        s = aux[0]
        for t in aux[1:]:
            s = s + t
        total = denoising + T.scale(s, alpha)
    values["L_total"] = float(total.item())
    return total, values
