"""Command-line entry point: ``saqdiff <subcommand> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig, load_config

_ERRORS = (ValueError, OSError, RuntimeError, KeyError)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    for key in ("data", "ae", "out", "seed", "steps", "batch", "lr", "codebook_size", "guidance"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    for flag in ("saq", "sce", "pce"):
        if getattr(args, f"no_{flag}", False):
            over[f"use_{flag}"] = False
    return cfg.with_overrides(**over)


def cmd_gen_data(args):
    from .synthglyph import build_dataset, make_writers
    writers = make_writers(args.writers, args.seed)
    m = build_dataset(writers, args.words, args.lexicon_seed if args.lexicon_seed is not None else args.seed,
                      args.out, seed=args.seed, unseen_writers=args.unseen)
    print(f"wrote {len(m.rows)} images for {len(writers)} writers to {args.out}")


def cmd_train_ae(args):
    from .autoencoder import ae_train, reconstruction_mse
    from .checkpoint import save_checkpoint
    from .synthglyph import DatasetManifest
    m = DatasetManifest.read(args.data)
    train_rows = m.select("train")
    model, _ = ae_train(m.images(train_rows), args.steps, args.seed,
                        log=lambda s, v: print(f"step {s} loss {v:.6f}", flush=True))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(args.out, model.state_dict())
    held = m.select("test")
    if held:
        print(f"held-out mse {reconstruction_mse(model, m.images(held)):.6f}")
    print(f"saved {args.out}")


def cmd_train(args):
    from .synthglyph import DatasetManifest
    from .train import save_model, train, write_run_manifest
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(cfg.to_text(), encoding="utf-8")
    m = DatasetManifest.read(cfg.data)

    def progress(step, row):
        if step % 100 == 0 or step == cfg.steps - 1:
            print(",".join(f"{row[k]:.5g}" if k != "step" else str(step) for k in row), flush=True)

    res = train(cfg, m, log_path=out / "train_log.csv", progress=progress)
    save_model(res.model, out / "final.ckpt")
    write_run_manifest(out / "run_manifest.txt", cfg, res.streams, m)
    print(f"saved {out / 'final.ckpt'}")


def _checkpoint_path(args, cfg):
    return Path(args.ckpt) if args.ckpt else Path(cfg.out) / "final.ckpt"


def cmd_sample(args):
    from .generate import sample_to_file
    from .synthglyph import check_text, read_ppm
    from .train import load_model
    cfg = _config(args)
    check_text(args.text)
    model = load_model(_checkpoint_path(args, cfg))
    path = sample_to_file(model, read_ppm(args.ref), args.text, args.seed, args.out_dir or cfg.out,
                          steps=args.sample_steps or cfg.sample_steps,
                          scale=cfg.guidance if args.scale is None else args.scale)
    print(f"wrote {path}")


def cmd_evaluate(args):
    from .generate import evaluate
    from .synthglyph import DatasetManifest
    from .train import load_model
    cfg = _config(args)
    model = load_model(_checkpoint_path(args, cfg))
    report = evaluate(model, DatasetManifest.read(cfg.data), args.split, seed=cfg.seed,
                      steps=args.sample_steps or cfg.sample_steps, max_generated=args.max_generated)
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")


def cmd_dump_attn(args):
    from .generate import dump_attention
    from .synthglyph import read_ppm
    from .train import load_model
    cfg = _config(args)
    model = load_model(_checkpoint_path(args, cfg))
    paths = dump_attention(model, read_ppm(args.ref), args.text, args.t, args.out_dir, seed=args.seed)
    print(f"wrote {len(paths)} heatmaps to {args.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saqdiff", description="Style-conditioned glyph diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic writer dataset")
    g.add_argument("--writers", type=int, default=8)
    g.add_argument("--words", type=int, default=64)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lexicon-seed", type=int)
    g.add_argument("--unseen", type=int, help="writers held out entirely (default: a quarter)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("train-ae", help="train the latent autoencoder")
    a.add_argument("--data", required=True)
    a.add_argument("--steps", type=int, default=2000)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="ae.ckpt")
    a.set_defaults(func=cmd_train_ae)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--data")
        sp.add_argument("--ae")
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--no-saq", action="store_true")

    t = sub.add_parser("train", help="train the generator")
    common(t)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--codebook-size", dest="codebook_size", type=int)
    t.add_argument("--no-sce", action="store_true")
    t.add_argument("--no-pce", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate one word image")
    common(s)
    s.add_argument("--ckpt")
    s.add_argument("--ref", required=True)
    s.add_argument("--text", required=True)
    s.add_argument("--scale", type=float)
    s.add_argument("--sample-steps", type=int)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_sample, seed=0)

    e = sub.add_parser("evaluate", help="report style and sample metrics")
    common(e)
    e.add_argument("--ckpt")
    e.add_argument("--split", default="test")
    e.add_argument("--sample-steps", type=int)
    e.add_argument("--max-generated", type=int, default=64)
    e.add_argument("--report")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("dump-attn", help="write cross-attention heatmaps")
    common(d)
    d.add_argument("--ckpt")
    d.add_argument("--ref", required=True)
    d.add_argument("--text", required=True)
    d.add_argument("--t", type=int, default=500)
    d.add_argument("--out-dir", default="attn")
    d.set_defaults(func=cmd_dump_attn, seed=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except _ERRORS as e:
        print(f"saqdiff {args.command}: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
