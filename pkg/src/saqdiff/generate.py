"""Sampling, evaluation and cross-attention dumps for a trained generator."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .autoencoder import ae_decode, ae_encode
from .diffusion import (GUIDANCE, NoiseSchedule, cfg_combine, concat_contexts, ddim_sample, ddim_step,
                        ddim_timesteps, null_context)
from .metrics import (fit_slant_sign_probe, frechet_distance, log_spectrum, nn_writer_accuracy,
                      probe_errors, style_embeddings, style_targets, writer_silhouette)
from .rng import stream
from .saq import codebook_stats
from .synthglyph import SCENARIOS, DatasetManifest, check_text, write_pgm, write_ppm
from .tensor import Tensor, UsageError
from .train import GeneratorModel


def generate(model: GeneratorModel, ref_images, texts, seed=0, steps=50, scale=GUIDANCE,
             unconditional=False, batch_size=32) -> np.ndarray:
    """Images [n,3,32,96] for each (reference, text) pair."""
    texts = [check_text(t) for t in texts]
    ref_images = np.asarray(ref_images, np.float32)
    if len(ref_images) != len(texts):
        raise ValueError(f"{len(ref_images)} references for {len(texts)} texts")
    out = []
    for i in range(0, len(texts), batch_size):
        with T.no_grad():
            ctx, _ = model.context(ref_images[i:i + batch_size], texts[i:i + batch_size])
        if unconditional:
            ctx = null_context(ctx)
        z = ddim_sample(model.denoiser, ctx, steps=steps, scale=scale,
                        rng=stream(seed, f"sample/{i // batch_size}"))
        out.append(ae_decode(model.ae, z))
    return np.concatenate(out)


def sample_to_file(model, ref_image, text, seed, out_dir, steps=50, scale=GUIDANCE) -> Path:
    img = generate(model, ref_image[None], [text], seed=seed, steps=steps, scale=scale)[0]
    path = Path(out_dir) / f"{text}_{seed}.ppm"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(path, img)
    return path


def reference_pairs(manifest: DatasetManifest, rows, seed=0):
    """For each target row, a reference row by the same writer with different text."""
    rng = stream(seed, "eval/refs")
    by_writer: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.rows):
        by_writer.setdefault(r.writer_id, []).append(i)
    refs = []
    for i in rows:
        r = manifest.rows[i]
        cands = [j for j in by_writer[r.writer_id] if manifest.rows[j].text != r.text] or [i]
        refs.append(int(rng.choice(cands)))
    return np.array(refs, dtype=np.int64)


@dataclass
class EvalReport:
    perplexity: float
    usage_fraction: float
    nn_accuracy: float
    silhouette: float
    probes: dict
    frechet: float
    scenarios: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [f"perplexity\t{self.perplexity:.4f}", f"usage_fraction\t{self.usage_fraction:.4f}",
               f"nn_accuracy\t{self.nn_accuracy:.4f}", f"silhouette\t{self.silhouette:.4f}",
               f"frechet\t{self.frechet:.4f}"]
        out += [f"{k}\t{v:.4f}" for k, v in self.probes.items()]
        for name in SCENARIOS:
            if name not in self.scenarios:
                out.append(f"{name}\tabsent")
                continue
            out += [f"{name}.{k}\t{v:.4f}" for k, v in self.scenarios[name].items()]
        return out


def generated_latents(model, manifest, rows, seed=0, steps=50, scale=GUIDANCE) -> np.ndarray:
    """``ae_encode(ae_decode(sample))`` for targets ``rows`` with same-writer references."""
    refs = reference_pairs(manifest, rows, seed)
    imgs = generate(model, manifest.images(refs), [manifest.rows[i].text for i in rows], seed=seed,
                    steps=steps, scale=scale)
    return ae_encode(model.ae, imgs)


def evaluate(model: GeneratorModel, manifest: DatasetManifest, split="test", seed=0, steps=50,
             scale=GUIDANCE, max_generated=64) -> EvalReport:
    """Style-space and sample metrics on held-out rows; read-only on the model."""
    train_rows = manifest.select("train")
    test_rows = manifest.select(*(SCENARIOS if split == "test" else (split,)))
    if not test_rows:
        raise ValueError(f"no rows in split {split!r}")
    use_saq = model.use_saq
    emb_tr = style_embeddings(model.style, manifest.images(train_rows), use_saq)
    emb_te = style_embeddings(model.style, manifest.images(test_rows), use_saq)
    wid_tr = np.array([manifest.rows[i].writer_id for i in train_rows])
    wid_te = np.array([manifest.rows[i].writer_id for i in test_rows])
    if use_saq:
        with T.no_grad():
            idx = [model.style(Tensor(manifest.images(test_rows[i:i + 64]))).indices
                   for i in range(0, len(test_rows), 64)]
        ppl, usage = codebook_stats(idx, model.style.codebook.size)
    else:
        ppl = usage = float("nan")
    probes = probe_errors(emb_tr, style_targets(manifest.styles, wid_tr), emb_te,
                          style_targets(manifest.styles, wid_te))

    rng = stream(seed, "eval/subset")
    gen_rows = sorted(rng.choice(test_rows, size=min(max_generated, len(test_rows)), replace=False).tolist())
    gen = generated_latents(model, manifest, gen_rows, seed, steps, scale)
    real = ae_encode(model.ae, manifest.images(gen_rows))
    report = EvalReport(ppl, usage, nn_writer_accuracy(emb_te, wid_te), writer_silhouette(emb_te, wid_te),
                        probes, frechet_distance(gen, real))
    pos = {r: k for k, r in enumerate(test_rows)}
    gpos = {r: k for k, r in enumerate(gen_rows)}
    for name in SCENARIOS:
        rows = [r for r in test_rows if manifest.scenario(manifest.rows[r]) == name]
        if not rows:
            continue
        k = [pos[r] for r in rows]
        entry = {"count": float(len(rows))}
        if len(rows) > 1:
            entry["nn_accuracy"] = nn_writer_accuracy(emb_te[k], wid_te[k])
        g = [gpos[r] for r in rows if r in gpos]
        if len(g) > 1:
            entry["frechet"] = frechet_distance(gen[g], real[g])
        report.scenarios[name] = entry
    return report


def slant_sign_accuracy(model, manifest, per_writer=5, seed=0, steps=50, scale=GUIDANCE) -> float:
    """Generate OOV words from held-out references; fraction whose probed slant
    sign matches the reference writer's."""
    train_rows = manifest.select("train")
    slants = np.array([manifest.styles[manifest.rows[i].writer_id].slant for i in train_rows])
    probe = fit_slant_sign_probe(manifest.images(train_rows), slants)
    rng = stream(seed, "eval/slant")
    held = manifest.select("test")
    refs, texts, signs = [], [], []
    for w in sorted(manifest.styles):
        cands = [i for i in held if manifest.rows[i].writer_id == w]
        if not cands:
            continue
        for i in rng.choice(cands, size=per_writer, replace=len(cands) < per_writer):
            refs.append(int(i))
            texts.append(str(rng.choice(manifest.oov_words)))
            signs.append(int(np.sign(manifest.styles[w].slant)))
    imgs = generate(model, manifest.images(refs), texts, seed=seed, steps=steps, scale=scale)
    return float(np.mean(probe.predict(log_spectrum(imgs)) == np.array(signs)))


def attention_maps(model: GeneratorModel, ref_image, text, t_probe, seed=0, steps=50,
                   scale=GUIDANCE) -> np.ndarray:
    """Head-averaged level-1 cross-attention onto style tokens at ``t_probe``,
    [T_s, 8, 24]; entry ``[k, y, x]`` is how much query position ``(y, x)``
    attends to style token ``k``."""
    schedule = NoiseSchedule()
    if not 0 <= t_probe < schedule.steps:
        raise UsageError(f"t_probe must be in [0, {schedule.steps}), got {t_probe}")
    check_text(text)
    with T.no_grad():
        ctx, _ = model.context(np.asarray(ref_image, np.float32)[None], [text])
    ts = ddim_timesteps(steps, schedule.steps)
    # run the sampler down to the first step at or below t_probe, then probe there
    z = _partial_sample(model, ctx, ts, int(np.searchsorted(ts, t_probe, side="right")), scale,
                        seed, schedule)
    with T.no_grad():
        out = model.denoiser(z, np.array([t_probe]), ctx, return_attention=True)
    styles = model.denoiser.conditioner.null_style.shape[1]
    w = out.attention_maps[-1][0].mean(axis=0)  # [192, T_kv]
    return w[:, :styles].T.reshape(styles, 8, 24)


def _partial_sample(model, ctx, ts, start, scale, seed, schedule):
    rng = stream(seed, "ddim")
    z = rng.standard_normal((1, 4, 8, 24)).astype(np.float32)
    both = concat_contexts(ctx, null_context(ctx))
    with T.no_grad():
        for k in range(len(ts) - 1, start - 1, -1):
            t = int(ts[k])
            out = model.denoiser(np.concatenate([z, z]), np.full(2, t), both)
            eps = cfg_combine(out.eps_hat.data[:1], out.eps_hat.data[1:], scale)
            z = ddim_step(schedule, z, t, int(ts[k - 1]) if k > 0 else -1, eps)
    return z


def upsample_map(m: np.ndarray, factor=4) -> np.ndarray:
    return np.repeat(np.repeat(m, factor, axis=-2), factor, axis=-1)


def dump_attention(model, ref_image, text, t_probe, out_dir, seed=0) -> list[Path]:
    maps = attention_maps(model, ref_image, text, t_probe, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, m in enumerate(maps):
        path = out / f"attn_t{t_probe}_tok{k:02d}.pgm"
        write_pgm(path, upsample_map(m))
        paths.append(path)
    return paths
