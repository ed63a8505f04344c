"""On-disk glyph datasets: lexicon, writer split, manifest and paired batches."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..rng import as_generator, stream
from .font import ALPHABET
from .ppm import read_ppm, write_ppm
from .render import ConfigError, WriterStyle, render

SCENARIOS = ("IV-S", "OOV-S", "IV-U", "OOV-U")
MANIFEST = "manifest.tsv"
STYLES = "styles.tsv"
SPLIT = "split.cfg"


def make_lexicon(size: int, seed: int, min_len=2, max_len=7) -> list[str]:
    rng = stream(seed, "lexicon")
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n = int(rng.integers(min_len, max_len + 1))
        w = "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), n))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass(frozen=True)
class ManifestRow:
    path: str
    text: str
    writer_id: int


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    lexicon_seed: int
    styles: dict[int, WriterStyle]
    rows: list[ManifestRow]
    seen_writers: list[int]
    unseen_writers: list[int]
    iv_words: list[str]
    oov_words: list[str]
    heldout: set[str] = field(default_factory=set)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def writer_count(self) -> int:
        return len(self.styles)

    def scenario(self, row: ManifestRow) -> str:
        """'train' or one of the four evaluation scenarios."""
        iv = row.text in self._iv_set
        if row.writer_id in self._unseen_set:
            return "IV-U" if iv else "OOV-U"
        if not iv:
            return "OOV-S"
        return "IV-S" if row.path in self.heldout else "train"

    @property
    def _iv_set(self):
        if "iv" not in self._cache:
            self._cache["iv"] = set(self.iv_words)
        return self._cache["iv"]

    @property
    def _unseen_set(self):
        if "unseen" not in self._cache:
            self._cache["unseen"] = set(self.unseen_writers)
        return self._cache["unseen"]

    def select(self, *splits: str) -> list[int]:
        """Row indices whose scenario is in ``splits`` ('test' = all four scenarios)."""
        want = set(SCENARIOS) if "test" in splits else set(splits)
        return [i for i, r in enumerate(self.rows) if self.scenario(r) in want]

    def image(self, i: int) -> np.ndarray:
        images = self._cache.setdefault("images", {})
        if i not in images:
            images[i] = read_ppm(self.root / self.rows[i].path)
        return images[i]

    def images(self, idx) -> np.ndarray:
        return np.stack([self.image(int(i)) for i in idx])

    def write(self) -> None:
        root = Path(self.root)
        with open(root / MANIFEST, "w", encoding="utf-8") as f:
            for r in self.rows:
                f.write(f"{r.path}\t{r.text}\t{r.writer_id}\n")
        with open(root / STYLES, "w", encoding="utf-8") as f:
            for wid in sorted(self.styles):
                f.write(self.styles[wid].to_line() + "\n")
        ids = lambda xs: ",".join(str(x) for x in xs)
        lines = [
            f"seed={self.seed}",
            f"lexicon_seed={self.lexicon_seed}",
            f"writers={self.writer_count}",
            f"seen_writers={ids(self.seen_writers)}",
            f"unseen_writers={ids(self.unseen_writers)}",
            f"iv_words={','.join(self.iv_words)}",
            f"oov_words={','.join(self.oov_words)}",
            f"heldout={','.join(sorted(self.heldout))}",
        ]
        (root / SPLIT).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, root) -> "DatasetManifest":
        root = Path(root)
        if root.is_file():
            root = root.parent
        rows = []
        for line in (root / MANIFEST).read_text(encoding="utf-8").splitlines():
            if line:
                path, text, wid = line.split("\t")
                rows.append(ManifestRow(path, text, int(wid)))
        styles = {}
        for line in (root / STYLES).read_text(encoding="utf-8").splitlines():
            if line:
                s = WriterStyle.from_line(line)
                styles[s.writer_id] = s
        cfg = dict(line.split("=", 1) for line in (root / SPLIT).read_text(encoding="utf-8").splitlines() if line)
        ints = lambda s: [int(x) for x in s.split(",") if x]
        strs = lambda s: [x for x in s.split(",") if x]
        return cls(root, int(cfg["seed"]), int(cfg["lexicon_seed"]), styles, rows,
                   ints(cfg["seen_writers"]), ints(cfg["unseen_writers"]),
                   strs(cfg["iv_words"]), strs(cfg["oov_words"]), set(strs(cfg["heldout"])))

    def verify(self) -> None:
        """Every referenced file exists and decodes to [3,32,96]."""
        for r in self.rows:
            img = read_ppm(self.root / r.path)
            if img.shape != (3, 32, 96):
                raise ValueError(f"{r.path}: decoded shape {img.shape}")


def build_dataset(writers: list[WriterStyle], words_per_writer: int, lexicon_seed: int, out_dir,
                  seed: int = 0, unseen_writers: int | None = None, oov_fraction: float = 0.25,
                  heldout_fraction: float = 0.125) -> DatasetManifest:
    """Render ``words_per_writer`` images per writer and write the manifest.

    The last ``unseen_writers`` writers (default a quarter, none below 4
    writers) are held out entirely. Lexicon words are split into disjoint
    in-vocabulary and out-of-vocabulary lists; seen writers only ever train on
    in-vocabulary words.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise OSError(f"cannot write dataset to {out}: {e}") from e
    n = len(writers)
    if unseen_writers is None:
        unseen_writers = n // 4 if n >= 4 else 0
    ids = [w.writer_id for w in writers]
    seen, unseen = ids[:n - unseen_writers], ids[n - unseen_writers:]

    lex_size = max(64, 2 * words_per_writer)
    lexicon = make_lexicon(lex_size, lexicon_seed)
    n_oov = max(1, int(round(lex_size * oov_fraction)))
    oov_words, iv_words = lexicon[:n_oov], lexicon[n_oov:]

    rng = stream(lexicon_seed, "assign")
    rows, heldout = [], set()
    for w in writers:
        use_oov = rng.random(words_per_writer) < oov_fraction
        iv_pick = rng.permutation(len(iv_words))
        oov_pick = rng.permutation(len(oov_words))
        iv_k = oov_k = 0
        for k in range(words_per_writer):
            if use_oov[k]:
                text = oov_words[oov_pick[oov_k % len(oov_words)]]
                oov_k += 1
            else:
                text = iv_words[iv_pick[iv_k % len(iv_words)]]
                iv_k += 1
            name = f"w{w.writer_id}_{k:03d}.ppm"
            sample = render(text, w, jitter_seed=seed * 1_000_000 + w.writer_id * 1000 + k)
            write_ppm(out / name, sample.image)
            rows.append(ManifestRow(name, text, w.writer_id))
            if w.writer_id in seen and not use_oov[k] and rng.random() < heldout_fraction:
                heldout.add(name)
    manifest = DatasetManifest(out, seed, lexicon_seed, {w.writer_id: w for w in writers}, rows,
                               seen, unseen, iv_words, oov_words, heldout)
    manifest.write()
    return manifest


@dataclass
class TrainingBatch:
    """``n/2`` (reference, target) pairs: rows ``i`` and ``i + n/2`` share a writer."""
    images: np.ndarray
    texts: list[str]
    writer_ids: np.ndarray
    rows: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.texts) // 2

    def partner(self) -> np.ndarray:
        n = len(self.texts)
        return (np.arange(n) + n // 2) % n


def load_batch(manifest: DatasetManifest, pairing_seed, n: int, split="train",
               allow_writer_reuse=False) -> TrainingBatch:
    """Draw ``n/2`` writer-consistent pairs with different texts.

    Pairs come from pairwise-distinct writers; ``allow_writer_reuse`` lets a
    writer supply several pairs when the dataset has fewer than ``n/2``.
    """
    if n < 2 or n % 2:
        raise ConfigError(f"batch size must be a positive even number, got {n}")
    rng = as_generator(pairing_seed, "pairing")
    by_writer: dict[int, list[int]] = {}
    for i in manifest.select(split) if split != "all" else range(len(manifest.rows)):
        by_writer.setdefault(manifest.rows[i].writer_id, []).append(i)
    usable = sorted(w for w, idx in by_writer.items()
                    if len({manifest.rows[i].text for i in idx}) >= 2)
    pairs = n // 2
    if len(usable) < pairs and not (allow_writer_reuse and usable):
        raise ConfigError(f"need {pairs} distinct writers for a batch of {n}, have {len(usable)}")
    if len(usable) >= pairs:
        chosen = rng.choice(usable, size=pairs, replace=False)
    else:
        reps = -(-pairs // len(usable))
        chosen = np.concatenate([rng.permutation(usable) for _ in range(reps)])[:pairs]
    refs, tars = [], []
    for w in chosen:
        idx = by_writer[int(w)]
        a = int(rng.choice(idx))
        others = [i for i in idx if manifest.rows[i].text != manifest.rows[a].text]
        b = int(rng.choice(others))
        refs.append(a)
        tars.append(b)
    rows = np.array(refs + tars)
    return TrainingBatch(manifest.images(rows), [manifest.rows[i].text for i in rows],
                         np.array([manifest.rows[i].writer_id for i in rows]), rows)
