"""Named-tensor archive.

Layout (all integers little-endian u32)::

    b"CNST" | version | records... | crc32

where each record is ``name_len | name (UTF-8) | rank | dims... | f32 payload``
and the CRC covers every byte before it.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"CNST"
VERSION = 1
MAX_NAME_BYTES = 1024
MAX_RANK = 8

_U32 = struct.Struct("<I")


class FormatError(ValueError):
    """Malformed archive; ``field`` names the part that failed validation."""

    def __init__(self, field: str, detail: str):
        super().__init__(f"checkpoint {field} error: {detail}")
        self.field = field


def encode(tensors: dict) -> bytes:
    parts = [MAGIC, _U32.pack(VERSION)]
    for name, value in tensors.items():
        raw = name.encode("utf-8")
        if not raw:
            raise FormatError("name", "empty tensor name")
        if len(raw) > MAX_NAME_BYTES:
            raise FormatError("name", f"{len(raw)} bytes exceeds the {MAX_NAME_BYTES}-byte limit")
        arr = np.asarray(value)
        if arr.ndim > MAX_RANK:
            raise FormatError("rank", f"{name}: rank {arr.ndim} exceeds {MAX_RANK}")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + _U32.pack(zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < 12:
        raise FormatError("crc", f"file too short ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, found {blob[:4]!r}")
    (version,) = _U32.unpack_from(blob, 4)
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version} (reader is {VERSION})")
    body, (crc,) = blob[:-4], _U32.unpack_from(blob, len(blob) - 4)
    if zlib.crc32(body) != crc:
        raise FormatError("crc", "checksum mismatch (file truncated or corrupted)")

    out: dict[str, np.ndarray] = {}
    pos = 8

    def u32(field):
        nonlocal pos
        if pos + 4 > len(body):
            raise FormatError(field, "record runs past end of data")
        (v,) = _U32.unpack_from(body, pos)
        pos += 4
        return v

    while pos < len(body):
        n = u32("name")
        if n > MAX_NAME_BYTES or pos + n > len(body):
            raise FormatError("name", f"bad name length {n}")
        name = body[pos:pos + n].decode("utf-8")
        pos += n
        rank = u32("rank")
        if rank > MAX_RANK:
            raise FormatError("rank", f"{name}: rank {rank}")
        shape = tuple(u32("dims") for _ in range(rank))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(body):
            raise FormatError("payload", f"{name}: payload runs past end of data")
        out[name] = np.frombuffer(body, "<f4", count=nbytes // 4, offset=pos).reshape(shape).astype(np.float32)
        pos += nbytes
    return out


def save_checkpoint(path, tensors: dict) -> None:
    blob = encode(tensors)  # validate fully before touching the file
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def checksum(tensors: dict) -> int:
    """The archive's CRC field: a fingerprint of every name, shape and payload byte."""
    return _U32.unpack(encode(tensors)[-4:])[0]
