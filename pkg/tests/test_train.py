import math

import numpy as np
import pytest

from saqdiff import train as train_mod
from saqdiff.autoencoder import ConvAutoencoder, TrainingError
from saqdiff.checkpoint import checksum, encode, save_checkpoint
from saqdiff.config import RunConfig
from saqdiff.synthglyph import build_dataset, make_writers
from saqdiff.tensor import Tensor
from saqdiff.train import (LOG_COLUMNS, GeneratorModel, load_autoencoder, load_model, save_model, train,
                           write_run_manifest)


@pytest.fixture(scope="module")
def setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("train")
    manifest = build_dataset(make_writers(4, 1), 8, 2, root / "data", seed=1)
    ae_path = root / "ae.ckpt"
    save_checkpoint(ae_path, ConvAutoencoder(0).state_dict())
    cfg = RunConfig(data=str(root / "data"), ae=str(ae_path), out=str(root / "out"), steps=3, batch=4)
    return cfg, manifest


def test_same_seed_gives_identical_checkpoints(setup, tmp_path):
    cfg, manifest = setup
    a = train(cfg, manifest)
    b = train(cfg, manifest)
    save_model(a.model, tmp_path / "a.ckpt")
    save_model(b.model, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert a.log == b.log
    c = train(cfg.with_overrides(seed=1), manifest)
    assert encode(c.model.state_dict()) != encode(a.model.state_dict())


def test_log_rows_and_csv(setup, tmp_path):
    cfg, manifest = setup
    res = train(cfg, manifest, log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS)
    assert len(lines) == 4 and [r["step"] for r in res.log] == [0, 1, 2]
    for row in res.log:
        assert all(math.isfinite(row[k]) for k in LOG_COLUMNS)
        assert row["L_total"] == pytest.approx(
            row["L_den"] + 0.1 * (row["L_pce"] + row["L_sce"] + row["L_saq"]), rel=1e-5)


def test_all_toggles_off_is_plain_denoising(setup):
    cfg, manifest = setup
    res = train(cfg.with_overrides(use_saq=False, use_sce=False, use_pce=False), manifest)
    for row in res.log:
        assert row["L_total"] == row["L_den"]
        assert math.isnan(row["L_pce"]) and math.isnan(row["L_sce"]) and math.isnan(row["L_saq"])
        assert math.isnan(row["perplexity"])
    assert not res.model.use_saq


def test_autoencoder_is_frozen(setup):
    cfg, manifest = setup
    ae = load_autoencoder(cfg.ae)
    before = checksum(ae.state_dict())
    res = train(cfg, manifest, ae)
    assert checksum(res.model.ae.state_dict()) == before
    assert all(p is not q for p in res.model.trainable() for q in ae.parameters())


def test_periodic_checkpoints(setup, tmp_path):
    cfg, manifest = setup
    res = train(cfg.with_overrides(out=str(tmp_path), checkpoint_every=2), manifest)
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["step000002.ckpt"]
    assert len(res.log) == 3


def test_save_load_round_trip(setup, tmp_path):
    cfg, manifest = setup
    res = train(cfg.with_overrides(steps=1), manifest)
    save_model(res.model, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    save_model(back, tmp_path / "again.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    assert back.use_saq
    assert load_autoencoder(tmp_path / "m.ckpt").state_dict().keys() == res.model.ae.state_dict().keys()


def test_load_model_rejects_foreign_checkpoint(setup):
    cfg, _ = setup
    with pytest.raises(ValueError, match="not a generator checkpoint"):
        load_model(cfg.ae)


def test_no_saq_model_round_trips_flag(tmp_path):
    save_model(GeneratorModel(0, 8, use_saq=False), tmp_path / "n.ckpt")
    m = load_model(tmp_path / "n.ckpt")
    assert not m.use_saq and m.style.codebook.size == 8


def test_run_manifest_lists_streams(setup, tmp_path):
    cfg, manifest = setup
    res = train(cfg.with_overrides(steps=1), manifest)
    write_run_manifest(tmp_path / "run.txt", cfg, res.streams, manifest)
    text = (tmp_path / "run.txt").read_text()
    for name in ("pairing", "cfg-drop", "diffusion-noise", "codebook-init"):
        assert f"{name}\tseed=0" in text
    assert "dataset.seed=1" in text and "dataset.lexicon_seed=2" in text


def test_non_finite_loss_aborts_with_step(setup, monkeypatch):
    cfg, manifest = setup
    real = train_mod.denoising_loss
    calls = []

    def flaky(eps_hat, noise):
        calls.append(1)
        out = real(eps_hat, noise)
        return out if len(calls) < 2 else out * Tensor(np.float32(np.nan))

    monkeypatch.setattr(train_mod, "denoising_loss", flaky)
    with pytest.raises(TrainingError, match=r"step 1: .*L_den.*last finite terms \{'step': 0"):
        train(cfg, manifest)
