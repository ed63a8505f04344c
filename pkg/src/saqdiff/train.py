"""Generator model, joint training loop and checkpoint plumbing."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .autoencoder import ConvAutoencoder, TrainingError, ae_encode
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .content import ContentEncoder
from .diffusion import Denoiser, NoiseSchedule, drop_conditioning, draw_noise, denoising_loss, predict_x0
from .objectives import PatchHeads, combined_loss, latent_pce_loss, sce_from_batch
from .rng import Streams
from .saq import StyleEncoder, codebook_stats, saq_loss
from .synthglyph import DatasetManifest, load_batch
from .tensor import Tensor

LOG_COLUMNS = ("step", "L_total", "L_den", "L_pce", "L_sce", "L_saq", "perplexity")


class GeneratorModel(nn.Module):
    """Style encoder, content encoder, denoiser and patch heads, plus the
    frozen autoencoder that defines the latent space."""

    def __init__(self, seed=0, codebook_size=128, use_saq=True, ae: ConvAutoencoder | None = None):
        self.style = StyleEncoder(seed, codebook_size)
        self.content = ContentEncoder(seed)
        self.denoiser = Denoiser(seed)
        self.heads = PatchHeads(seed)
        self.ae = ae if ae is not None else ConvAutoencoder(seed)
        self.meta_use_saq = Tensor(np.array([float(use_saq)], np.float32))

    @property
    def use_saq(self) -> bool:
        return bool(self.meta_use_saq.data[0])

    def trainable(self):
        """Parameters updated by the generator optimizer (everything but the AE)."""
        return (self.style.parameters() + self.content.parameters() + self.denoiser.parameters()
                + self.heads.parameters())

    def context(self, ref_images, texts):
        """Conditioning context and style features for references and target texts."""
        feats = self.style(_tensor(ref_images), use_saq=self.use_saq)
        c = self.content(list(texts))
        return self.denoiser.conditioner.build(feats.F_seq, c.features, c.mask), feats


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))


def save_model(model: GeneratorModel, path) -> None:
    save_checkpoint(path, model.state_dict())


def load_model(path) -> GeneratorModel:
    state = load_checkpoint(path)
    try:
        K = state["style.codebook.E"].shape[0]
        use_saq = bool(state["meta_use_saq"][0])
    except KeyError as e:
        raise ValueError(f"{path}: not a generator checkpoint (missing {e})") from None
    model = GeneratorModel(0, K, use_saq)
    model.load_state_dict(state)
    return model


def load_autoencoder(path) -> ConvAutoencoder:
    ae = ConvAutoencoder(0)
    state = load_checkpoint(path)
    if any(k.startswith("ae.") for k in state):
        state = {k[3:]: v for k, v in state.items() if k.startswith("ae.")}
    ae.load_state_dict(state)
    return ae


@dataclass
class TrainResult:
    model: GeneratorModel
    log: list  # dicts keyed by LOG_COLUMNS
    streams: Streams

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.log], dtype=np.float64)


def train_step(model, opt, cfg: RunConfig, batch, z0, schedule, rngs):
    """One joint update; returns the logged values."""
    T.get_tape().clear()
    feats = model.style(Tensor(batch.images), use_saq=model.use_saq)
    partner = batch.partner()
    c = model.content(batch.texts)
    ctx = model.denoiser.conditioner.build(feats.F_seq[partner], c.features, c.mask)
    ctx = drop_conditioning(ctx, cfg.drop_p, rngs("cfg-drop"), cfg.independent_drop)
    nb = draw_noise(schedule, z0, rngs("diffusion-noise"))
    out = model.denoiser(nb.z_t, nb.t, ctx)
    l_den = denoising_loss(out.eps_hat, nb.noise)
    l_saq = saq_loss(feats.F, feats.E_sel, cfg.beta) if model.use_saq and cfg.use_saq else None
    l_sce = sce_from_batch(feats.F_global, cfg.tau) if cfg.use_sce else None
    l_pce = None
    if cfg.use_pce:
        x0 = predict_x0(schedule, nb.z_t, nb.t, out.eps_hat)
        l_pce = latent_pce_loss(Tensor(z0), x0, model.heads, cfg.tau)
    total, values = combined_loss(l_den, l_pce, l_sce, l_saq, cfg.alpha)
    opt.zero_grad()
    T.backward(total)
    opt.step()
    if feats.indices is not None:
        model.style.codebook.record(feats.indices)
        values["perplexity"] = codebook_stats(feats.indices, model.style.codebook.size)[0]
    else:
        values["perplexity"] = math.nan
    return values


def train(cfg: RunConfig, manifest: DatasetManifest | None = None, ae: ConvAutoencoder | None = None,
          log_path=None, progress=None) -> TrainResult:
    """Joint generator training with the autoencoder frozen."""
    manifest = manifest or DatasetManifest.read(cfg.data)
    ae = ae or load_autoencoder(cfg.ae)
    rngs = Streams(cfg.seed)
    model = GeneratorModel(cfg.seed, cfg.codebook_size, cfg.use_saq, ae)
    opt = nn.AdamW(model.trainable(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                   weight_decay=cfg.weight_decay)
    schedule = NoiseSchedule()
    train_rows = manifest.select("train")
    latents = dict(zip(train_rows, ae_encode(ae, manifest.images(train_rows))))
    out_dir = Path(cfg.out)
    writer = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    if model.use_saq:
        first = load_batch(manifest, rngs("codebook-init"), cfg.batch, "train", cfg.allow_writer_reuse)
        model.style.init_codebook(first.images, rngs("codebook-init"))
    log, last = [], None
    try:
        for step in range(cfg.steps):
            batch = load_batch(manifest, rngs("pairing"), cfg.batch, "train", cfg.allow_writer_reuse)
            z0 = np.stack([latents[int(r)] for r in batch.rows])
            try:
                values = train_step(model, opt, cfg, batch, z0, schedule, rngs)
            except TrainingError as e:
                raise TrainingError(f"step {step}: {e}; last finite terms {last}") from None
            values["step"] = step
            last = {k: values[k] for k in LOG_COLUMNS}
            log.append(last)
            if writer is not None:
                writer.writerow([step] + [f"{last[k]:.6g}" for k in LOG_COLUMNS[1:]])
            if progress is not None:
                progress(step, last)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                out_dir.mkdir(parents=True, exist_ok=True)
                save_model(model, out_dir / f"step{step + 1:06d}.ckpt")
    finally:
        if writer is not None:
            fh.close()
        T.get_tape().clear()
    return TrainResult(model, log, rngs)


def write_run_manifest(path, cfg: RunConfig, streams: Streams, manifest: DatasetManifest) -> None:
    lines = [f"config.seed={cfg.seed}", f"dataset.seed={manifest.seed}",
             f"dataset.lexicon_seed={manifest.lexicon_seed}", *streams.manifest(),
             f"init\tseed={cfg.seed}"]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
