"""Small convolutional autoencoder that defines the diffusion latent space.

Images [B,3,32,96] map to latents [B,4,8,24] (two stride-2 stages). Latents
are divided by the training-set latent standard deviation so diffusion sees
roughly unit-variance inputs; the scalar lives in the model state.
"""
from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .rng import stream
from .tensor import Tensor

LATENT_CHANNELS = 4
DOWNSAMPLE = 4


class TrainingError(RuntimeError):
    pass


class ConvAutoencoder(nn.Module):
    def __init__(self, seed=0, width=32):
        rng = stream(seed, "ae/init")
        w = width
        self.enc = [
            nn.Conv2d(3, w, 3, rng),
            nn.Conv2d(w, w, 3, rng, stride=2, padding=1),
            nn.Conv2d(w, w, 3, rng),
            nn.Conv2d(w, 2 * w, 3, rng, stride=2, padding=1),
            nn.Conv2d(2 * w, 2 * w, 3, rng),
        ]
        self.enc_out = nn.Conv2d(2 * w, LATENT_CHANNELS, 3, rng)
        self.dec_in = nn.Conv2d(LATENT_CHANNELS, 2 * w, 3, rng)
        self.dec_mid = nn.Conv2d(2 * w, 2 * w, 3, rng)
        self.dec_up1 = [nn.Conv2d(2 * w, w, 3, rng), nn.Conv2d(w, w, 3, rng)]
        self.dec_up2 = nn.Conv2d(w, w, 3, rng)
        self.dec_out = nn.Conv2d(w, 3, 3, rng)
        self.latent_std = Tensor(np.ones(1, np.float32))

    def encode_raw(self, x):
        _check_shape(x.shape, (3, 32, 96), "image")
        h = x
        for conv in self.enc:
            h = T.silu(conv(h))
        return self.enc_out(h)

    def decode_raw(self, z):
        _check_shape(z.shape, (LATENT_CHANNELS, 8, 24), "latent")
        h = T.silu(self.dec_in(z))
        h = T.silu(self.dec_mid(h))
        h = T.upsample2x(h)
        for conv in self.dec_up1:
            h = T.silu(conv(h))
        h = T.upsample2x(h)
        h = T.silu(self.dec_up2(h))
        return self.dec_out(h)

    def forward(self, x):
        return self.decode_raw(self.encode_raw(x))


def _check_shape(shape, tail, what):
    if len(shape) != 4 or tuple(shape[1:]) != tail:
        raise T.ShapeError(f"{what} must be [B,{','.join(map(str, tail))}], got {list(shape)}")


def ae_encode(model: ConvAutoencoder, images, batch_size=64) -> np.ndarray:
    """Normalized latents [B,4,8,24]; deterministic."""
    images = np.asarray(images, dtype=np.float32)
    _check_shape(images.shape, (3, 32, 96), "image")
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            z = model.encode_raw(Tensor(images[i:i + batch_size])).data
            out.append(z / model.latent_std.data[0])
    return np.concatenate(out).astype(np.float32)


def ae_decode(model: ConvAutoencoder, z, batch_size=64) -> np.ndarray:
    """Images [B,3,32,96] clamped to [0,1]."""
    z = np.asarray(z, dtype=np.float32)
    _check_shape(z.shape, (LATENT_CHANNELS, 8, 24), "latent")
    out = []
    with T.no_grad():
        for i in range(0, len(z), batch_size):
            x = model.decode_raw(Tensor(z[i:i + batch_size] * model.latent_std.data[0])).data
            out.append(np.clip(x, 0.0, 1.0))
    return np.concatenate(out).astype(np.float32)


def reconstruction_mse(model, images) -> float:
    rec = ae_decode(model, ae_encode(model, images))
    return float(np.mean((rec - np.asarray(images)) ** 2))


def ae_train(images, steps, seed, lr=1e-3, batch_size=16, width=32, log=None):
    """Fit an autoencoder on an image array with L2 reconstruction.

    Returns ``(model, losses)``. Raises :class:`TrainingError` on a
    non-finite loss.
    """
    images = np.asarray(images, dtype=np.float32)
    model = ConvAutoencoder(seed=seed, width=width)
    opt = nn.AdamW(model.parameters(), lr=lr)
    rng = stream(seed, "ae/batches")
    tape = T.get_tape()
    losses = []
    for step in range(steps):
        x = Tensor(images[rng.integers(0, len(images), batch_size)])
        tape.clear()
        rec = model(x)
        loss = T.mean(T.square(rec - x))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"autoencoder loss became {value} at step {step}")
        opt.zero_grad()
        T.backward(loss)
        opt.step()
        losses.append(value)
        if log is not None and (step % 100 == 0 or step == steps - 1):
            log(step, value)
    tape.clear()
    z = np.concatenate([ae_encode(model, images[i:i + 256]) for i in range(0, len(images), 256)])
    model.latent_std.data = np.array([max(float(z.std()), 1e-6)], np.float32)
    return model, np.array(losses)
