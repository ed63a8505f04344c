"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def to_bytes(image: np.ndarray) -> bytes:
    """Encode a [3,H,W] image in [0,1] as P6 bytes."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3,H,W] image, got {img.shape}")
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape[1:]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + q.transpose(1, 2, 0).tobytes()


def write_ppm(path, image) -> None:
    Path(path).write_bytes(to_bytes(image))


def _parse_header(buf: bytes, magic: bytes):
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    if fields[0] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return w, h, pos + 1


def read_ppm(path) -> np.ndarray:
    """Decode a P6 file into a float32 [3,H,W] array in [0,1]."""
    buf = Path(path).read_bytes()
    w, h, off = _parse_header(buf, b"P6")
    data = np.frombuffer(buf, dtype=np.uint8, count=3 * w * h, offset=off)
    return (data.reshape(h, w, 3).transpose(2, 0, 1) / np.float32(255.0)).astype(np.float32)


def write_pgm(path, image) -> None:
    """Write a [H,W] array; values are rescaled by their maximum."""
    img = np.asarray(image, dtype=np.float64)
    top = img.max()
    q = np.round(img / top * 255.0 if top > 0 else img * 0).astype(np.uint8)
    h, w = q.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + q.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    w, h, off = _parse_header(buf, b"P5")
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=off).reshape(h, w)
