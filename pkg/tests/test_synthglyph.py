import dataclasses
import hashlib
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saqdiff.metrics import fit_slant_sign_probe, log_spectrum
from saqdiff.synthglyph import (ALPHABET, ConfigError, ContentError, DatasetManifest, WriterStyle,
                                build_dataset, load_batch, make_lexicon, make_writers, read_pgm,
                                read_ppm, render, write_pgm, write_ppm)
from saqdiff.synthglyph.ppm import to_bytes

GOLDEN = Path(__file__).parent / "golden"
PLAIN = WriterStyle(0, 0.0, 1.0, (0.0, 0.0, 0.0), 0.0, 2.0, (1.0, 1.0, 1.0), 0.0)
A_PPM_SHA256 = "a4306d406e742e8aabdc4a4b820ccdf0610f70ca10960e48a8e64023b00baa40"

words = st.text(alphabet=ALPHABET, min_size=1, max_size=8)


def test_writers_deterministic_and_in_range():
    a, b = make_writers(4, 3), make_writers(4, 3)
    assert a == b
    for w in make_writers(32, 11):
        assert -0.45 <= w.slant <= 0.45
        assert w.stroke_width in (1.0, 1.5, 2.0, 2.5)
        assert all(0 <= c <= 1 for c in w.ink_rgb + w.bg_tint)
        assert 0 <= w.baseline_wobble <= 2 and 1 <= w.letter_spacing <= 4 and 0 <= w.bg_noise <= 0.08


def test_two_writers_differ():
    w0, w1 = make_writers(2, 0)
    assert not np.array_equal(w0.vector(), w1.vector())


def test_writer_count_below_two_rejected():
    with pytest.raises(ConfigError):
        make_writers(1, 0)


def test_writers_golden_table():
    expected = (GOLDEN / "writers_seed7_n8.tsv").read_text().splitlines()
    assert [w.to_line() for w in make_writers(8, 7)] == expected


def test_style_line_round_trip():
    for w in make_writers(5, 2):
        assert WriterStyle.from_line(w.to_line()) == w


def test_plain_a_golden_bitmap():
    img = render("a", PLAIN, 0).image
    assert hashlib.sha256(to_bytes(img)).hexdigest() == A_PPM_SHA256


@settings(max_examples=25, deadline=None)
@given(text=words, seed=st.integers(0, 2**16))
def test_render_is_pure_and_bounded(text, seed):
    w = make_writers(3, 1)[seed % 3]
    a, b = render(text, w, seed), render(text, w, seed)
    assert a.image.shape == (3, 32, 96)
    assert np.array_equal(a.image, b.image)
    assert a.image.min() >= 0 and a.image.max() <= 1
    assert a.text == text and a.writer_id == w.writer_id


@pytest.mark.parametrize("bad", ["Hello", "ab1", "a b", "é", ""])
def test_render_rejects_outside_alphabet(bad):
    with pytest.raises(ContentError):
        render(bad, PLAIN, 0)


def test_render_rejects_long_text():
    with pytest.raises(ContentError):
        render("abcdefghi", PLAIN, 0)


def _ink_moment(img):
    ink = 1.0 - img.mean(0)
    rows = np.flatnonzero(ink.sum(1) > 0.5)
    top, bottom = rows[: len(rows) // 3], rows[-(len(rows) // 3):]
    xs = np.arange(img.shape[2])

    def com(r):
        m = ink[r]
        return (m * xs).sum() / m.sum()

    return com(top) - com(bottom)


def _slanted(text, slant):
    return render(text, dataclasses.replace(PLAIN, slant=slant), 5).image


@pytest.mark.parametrize("text", ["l", "ill", "lil", "hill"])
def test_opposite_slants_mirror_the_shear(text):
    # upright strokes: positive slant pushes tops right, negative pushes them left
    assert _ink_moment(_slanted(text, 0.4)) > 0 > _ink_moment(_slanted(text, -0.4))


@pytest.mark.parametrize("text", ["kite", "bd", "zebra", "quay"])
def test_slant_orders_the_moment(text):
    assert _ink_moment(_slanted(text, 0.4)) > _ink_moment(_slanted(text, 0.0)) > _ink_moment(_slanted(text, -0.4))


def test_ppm_round_trip(tmp_path):
    img = render("word", make_writers(2, 0)[1], 3).image
    write_ppm(tmp_path / "x.ppm", img)
    back = read_ppm(tmp_path / "x.ppm")
    assert back.shape == (3, 32, 96)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7
    assert (tmp_path / "x.ppm").read_bytes().startswith(b"P6\n96 32\n255\n")


def test_pgm_round_trip(tmp_path):
    m = np.arange(12.0).reshape(3, 4)
    write_pgm(tmp_path / "m.pgm", m)
    back = read_pgm(tmp_path / "m.pgm")
    assert back.dtype == np.uint8 and back.max() == 255
    assert np.allclose(back / 255.0 * 11.0, m, atol=11 / 255)


def test_lexicon_words_over_alphabet():
    lex = make_lexicon(64, 4)
    assert len(lex) == len(set(lex)) == 64
    assert all(set(w) <= set(ALPHABET) and 1 <= len(w) <= 8 for w in lex)
    assert lex == make_lexicon(64, 4)


@pytest.fixture(scope="module")
def small_set(tmp_path_factory):
    out = tmp_path_factory.mktemp("glyphs")
    return build_dataset(make_writers(4, 1), 16, 2, out, seed=1)


def test_build_dataset_counts(small_set):
    root = Path(small_set.root)
    assert len(small_set.rows) == 64
    assert len(list(root.glob("*.ppm"))) == 64
    assert len((root / "manifest.tsv").read_text().splitlines()) == 64
    small_set.verify()


def test_manifest_lines_are_tab_separated(small_set):
    line = (Path(small_set.root) / "manifest.tsv").read_text().splitlines()[0]
    path, text, wid = line.split("\t")
    assert path.endswith(".ppm") and text.isalpha() and wid.isdigit()
    style = (Path(small_set.root) / "styles.tsv").read_text().splitlines()[0].split("\t")
    assert len(style) == 8 and len(style[3].split(",")) == 3


def test_manifest_round_trip(small_set):
    back = DatasetManifest.read(small_set.root)
    assert back.rows == small_set.rows
    assert back.styles == small_set.styles
    assert (back.seen_writers, back.unseen_writers) == (small_set.seen_writers, small_set.unseen_writers)
    assert (back.iv_words, back.oov_words, back.heldout) == (small_set.iv_words, small_set.oov_words,
                                                             small_set.heldout)


def test_splits_are_disjoint(small_set):
    assert not set(small_set.seen_writers) & set(small_set.unseen_writers)
    assert not set(small_set.iv_words) & set(small_set.oov_words)
    for r in small_set.rows:
        if small_set.scenario(r) == "train":
            assert r.writer_id in small_set.seen_writers and r.text in small_set.iv_words


def test_scenarios_partition_rows(small_set):
    from saqdiff.synthglyph import SCENARIOS
    buckets = [set(small_set.select(s)) for s in ("train",) + SCENARIOS]
    assert sum(len(b) for b in buckets) == len(small_set.rows)
    assert set().union(*buckets) == set(range(len(small_set.rows)))


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        build_dataset(make_writers(2, 0), 2, 0, blocker / "sub")


def test_load_batch_pairs(small_set):
    b = load_batch(small_set, 5, 4, split="all")
    assert b.images.shape == (4, 3, 32, 96)
    ids = b.writer_ids
    assert ids[0] == ids[2] and ids[1] == ids[3] and ids[0] != ids[1]
    assert b.texts[0] != b.texts[2] and b.texts[1] != b.texts[3]


def test_load_batch_deterministic(small_set):
    a, b = load_batch(small_set, 9, 4, split="all"), load_batch(small_set, 9, 4, split="all")
    assert np.array_equal(a.rows, b.rows)


def test_load_batch_needs_distinct_writers(tmp_path):
    m = build_dataset(make_writers(2, 0), 6, 0, tmp_path, unseen_writers=1)
    with pytest.raises(ConfigError):
        load_batch(m, 0, 4, split="train")  # one seen writer
    with pytest.raises(ConfigError):
        load_batch(m, 0, 3, split="all")


def test_writer_reuse_opt_in(small_set):
    b = load_batch(small_set, 0, 16, split="all", allow_writer_reuse=True)
    assert len(b.rows) == 16
    assert np.array_equal(b.writer_ids[:8], b.writer_ids[8:])


def _probe_set(n_writers, per_writer, seed):
    ws = [dataclasses.replace(w, bg_noise=min(w.bg_noise, 0.02)) for w in make_writers(n_writers, seed)]
    lex = make_lexicon(200, seed + 1)
    rng = np.random.default_rng(seed)
    imgs, signs, split = [], [], []
    for w in ws:
        for k in range(per_writer):
            imgs.append(render(lex[rng.integers(len(lex))], w, 1000 * w.writer_id + k).image)
            signs.append(int(np.sign(w.slant)))
            split.append(k % 2)
    return np.stack(imgs), np.array(signs), np.array(split)


@pytest.fixture(scope="module")
def probe_set():
    return _probe_set(40, 24, 3)


def test_raw_pixel_linear_probe_reads_slant_sign(probe_set):
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler
    imgs, signs, split = probe_set
    X = imgs.mean(axis=1).reshape(len(imgs), -1)
    probe = make_pipeline(StandardScaler(), LogisticRegression(C=0.1, max_iter=3000))
    probe.fit(X[split == 0], signs[split == 0])
    acc = float(np.mean(probe.predict(X[split == 1]) == signs[split == 1]))
    print(f"raw-pixel slant-sign accuracy {acc:.3f}")
    assert acc >= 0.95


def test_spectrum_probe_reads_slant_sign(probe_set):
    imgs, signs, split = probe_set
    probe = fit_slant_sign_probe(imgs[split == 0], signs[split == 0])
    acc = float(np.mean(probe.predict(log_spectrum(imgs[split == 1])) == signs[split == 1]))
    assert acc >= 0.95
