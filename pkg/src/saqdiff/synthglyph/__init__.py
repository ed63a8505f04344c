"""Procedural handwriting-like word images with known per-writer style."""
from .dataset import (SCENARIOS, DatasetManifest, ManifestRow, TrainingBatch, build_dataset,
                      load_batch, make_lexicon)
from .font import ALPHABET
from .ppm import read_pgm, read_ppm, write_pgm, write_ppm
from .render import (HEIGHT, MAX_LEN, WIDTH, ConfigError, ContentError, GlyphSample, WriterStyle,
                     check_text, make_writers, render)

__all__ = [
    "ALPHABET", "HEIGHT", "WIDTH", "MAX_LEN", "SCENARIOS", "ConfigError", "ContentError",
    "WriterStyle", "GlyphSample", "DatasetManifest", "ManifestRow", "TrainingBatch",
    "make_writers", "render", "check_text", "build_dataset", "load_batch", "make_lexicon",
    "read_ppm", "write_ppm", "read_pgm", "write_pgm",
]
