"""Style-capture and sample-quality metrics."""
from __future__ import annotations

import numpy as np
from scipy import linalg
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.metrics import silhouette_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from . import tensor as T
from .tensor import Tensor


def style_embeddings(style_encoder, images, use_saq=True, batch_size=64) -> np.ndarray:
    """``F_global`` for a stack of images, [n,64]."""
    images = np.asarray(images, np.float32)
    out = []
    with T.no_grad():
        for i in range(0, len(images), batch_size):
            out.append(style_encoder(Tensor(images[i:i + batch_size]), use_saq=use_saq).F_global.data)
    return np.concatenate(out)


def _cosine(x):
    u = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
    return u @ u.T


def nn_writer_accuracy(embeddings, writer_ids) -> float:
    """Leave-one-out 1-nearest-neighbour writer retrieval under cosine similarity."""
    emb = np.asarray(embeddings, np.float64)
    ids = np.asarray(writer_ids)
    if len(emb) < 2:
        raise ValueError("need at least two samples for retrieval")
    sim = _cosine(emb)
    np.fill_diagonal(sim, -np.inf)
    return float(np.mean(ids[sim.argmax(axis=1)] == ids))


def writer_silhouette(embeddings, writer_ids) -> float:
    ids = np.asarray(writer_ids)
    if len(set(ids.tolist())) < 2:
        return float("nan")
    return float(silhouette_score(np.asarray(embeddings, np.float64), ids, metric="cosine"))


def style_targets(styles, writer_ids) -> dict[str, np.ndarray]:
    ids = np.asarray(writer_ids)
    return {
        "slant": np.array([styles[int(w)].slant for w in ids]),
        "stroke_width": np.array([styles[int(w)].stroke_width for w in ids]),
        "ink": np.array([styles[int(w)].ink_rgb for w in ids]),
    }


def probe_errors(train_emb, train_targets, test_emb, test_targets, alpha=1.0) -> dict[str, float]:
    """Mean absolute error of ridge probes from style vectors to style parameters."""
    out = {}
    for key in ("slant", "stroke_width", "ink"):
        probe = make_pipeline(StandardScaler(), Ridge(alpha=alpha))
        probe.fit(train_emb, train_targets[key])
        out[f"{key}_mae"] = float(np.mean(np.abs(probe.predict(test_emb) - test_targets[key])))
    return out


def _sqrtm_psd(a):
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(x, y) -> float:
    """Frechet distance between Gaussians fitted to two sample sets (rows)."""
    x = np.asarray(x, np.float64).reshape(len(x), -1)
    y = np.asarray(y, np.float64).reshape(len(y), -1)
    mu1, mu2 = x.mean(0), y.mean(0)
    s1 = np.cov(x, rowvar=False) if len(x) > 1 else np.zeros((x.shape[1],) * 2)
    s2 = np.cov(y, rowvar=False) if len(y) > 1 else np.zeros((y.shape[1],) * 2)
    s1, s2 = np.atleast_2d(s1), np.atleast_2d(s2)
    # tr((s1 s2)^1/2) = tr((r s2 r)^1/2) with r = s1^1/2, which stays symmetric
    r = _sqrtm_psd(s1)
    cross = np.trace(_sqrtm_psd(r @ s2 @ r))
    d = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2 * cross)
    return max(d, 0.0)


def frechet_distance_scipy(x, y) -> float:
    """Reference evaluation of the same formula through ``scipy.linalg.sqrtm``."""
    x = np.asarray(x, np.float64).reshape(len(x), -1)
    y = np.asarray(y, np.float64).reshape(len(y), -1)
    s1, s2 = np.atleast_2d(np.cov(x, rowvar=False)), np.atleast_2d(np.cov(y, rowvar=False))
    covmean = linalg.sqrtm(s1 @ s2)
    covmean = covmean.real if np.iscomplexobj(covmean) else covmean
    return float(np.sum((x.mean(0) - y.mean(0)) ** 2) + np.trace(s1 + s2 - 2 * covmean))


def log_spectrum(images) -> np.ndarray:
    """Log power spectrum of the grayscale image, centred and flattened.

    A slanted stroke pattern rotates the spectrum's energy ridge, so the
    leaning direction reads off the spectrum independently of where the
    word sits in the frame.
    """
    imgs = np.asarray(images, np.float64)
    gray = imgs.mean(axis=1) if imgs.ndim == 4 else imgs
    gray = gray - gray.mean(axis=(-2, -1), keepdims=True)
    power = np.abs(np.fft.fftshift(np.fft.fft2(gray), axes=(-2, -1))) ** 2
    return np.log1p(power).reshape(len(gray), -1)


def fit_slant_sign_probe(images, slants, C=1.0):
    probe = make_pipeline(StandardScaler(), LogisticRegression(C=C, max_iter=2000))
    probe.fit(log_spectrum(images), np.sign(slants).astype(int))
    return probe


def spatial_entropy(maps) -> float:
    """Mean entropy of attention heatmaps normalized to distributions over positions."""
    m = np.asarray(maps, np.float64).reshape(len(maps), -1)
    p = m / np.maximum(m.sum(axis=1, keepdims=True), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    return float(h.mean())
