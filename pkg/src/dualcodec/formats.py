"""Binary files for encoded sequences.

Both formats are little-endian and share a profile metadata block::

    u32 sample_rate  u16 channels  u32 window  u32 hop  u32 t_chunk  u64 n_samples

Token file::

    b"DCTK"  u32 version  u16 n  u16 d  u32 k_per_chunk  u64 chunk_count
    metadata  chunk_count * k_per_chunk x u16 index (chunk-major)

Continuous latent file::

    b"DCLT"  u32 version  u32 K  u32 d_lat  u64 chunk_count
    metadata  chunk_count * K * d_lat x f32 value (chunk-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import EncodedSequence, SequenceMeta
from .exceptions import DataError

TOKEN_MAGIC = b"DCTK"
LATENT_MAGIC = b"DCLT"
VERSION = 1

_META = struct.Struct("<IHIIIQ")
_TOKEN_HEAD = struct.Struct("<4sIHHIQ")
_LATENT_HEAD = struct.Struct("<4sIIIQ")


class UnknownFormatError(DataError):
    """File does not start with a recognized magic."""


@dataclass
class FileHeader:
    """Header fields of either format (``n`` is only set for token files)."""

    magic: bytes
    version: int
    k: int
    d: int
    n_chunks: int
    meta: SequenceMeta
    n: int | None = None

    @property
    def kind(self) -> str:
        return "discrete" if self.magic == TOKEN_MAGIC else "continuous"


def _pack_meta(meta: SequenceMeta) -> bytes:
    return _META.pack(meta.sample_rate, meta.channels, meta.window, meta.hop, meta.t_chunk, meta.n_samples)


def write_sequence(path: str | Path, seq: EncodedSequence) -> None:
    """Write a DCTK (discrete) or DCLT (continuous) file."""
    if seq.mode == "discrete":
        tokens = np.asarray(seq.tokens)
        if tokens.size and (tokens.min() < 0 or tokens.max() > np.iinfo(np.uint16).max):
            raise DataError("token indices do not fit the u16 storage width")
        head = _TOKEN_HEAD.pack(TOKEN_MAGIC, VERSION, seq.n, seq.d, tokens.shape[1], tokens.shape[0])
        body = tokens.astype("<u2").tobytes()
    else:
        lat = np.asarray(seq.latents)
        head = _LATENT_HEAD.pack(LATENT_MAGIC, VERSION, lat.shape[1], lat.shape[2], lat.shape[0])
        body = lat.astype("<f4").tobytes()
    with open(path, "wb") as f:
        f.write(head + _pack_meta(seq.meta) + body)


def read_header(raw: bytes) -> tuple[FileHeader, int]:
    """Parse the header; returns it and the byte offset of the payload."""
    magic = raw[:4]
    try:
        if magic == TOKEN_MAGIC:
            _, version, n, d, k, count = _TOKEN_HEAD.unpack_from(raw, 0)
            offset = _TOKEN_HEAD.size
        elif magic == LATENT_MAGIC:
            _, version, k, d, count = _LATENT_HEAD.unpack_from(raw, 0)
            n = None
            offset = _LATENT_HEAD.size
        else:
            raise UnknownFormatError(f"unknown magic {magic!r}")
        meta = SequenceMeta(*_META.unpack_from(raw, offset))
    except struct.error:
        raise DataError("truncated header") from None
    if version != VERSION:
        raise DataError(f"unsupported format version {version}")
    return FileHeader(magic, version, k, d, count, meta, n), offset + _META.size


def read_sequence(path: str | Path) -> EncodedSequence:
    raw = Path(path).read_bytes()
    try:
        header, offset = read_header(raw)
    except DataError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    width = 2 if header.kind == "discrete" else 4 * header.d
    expected = offset + header.n_chunks * header.k * width
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw) - offset} bytes, header implies {expected - offset}")
    if header.n_chunks < 1:
        raise DataError(f"{path}: no chunks")
    if header.kind == "discrete":
        tokens = np.frombuffer(raw, "<u2", offset=offset).reshape(header.n_chunks, header.k).astype(np.int64)
        return EncodedSequence("discrete", header.meta, tokens=tokens, n=header.n, d=header.d)
    values = np.frombuffer(raw, "<f4", offset=offset).reshape(header.n_chunks, header.k, header.d)
    if not np.all(np.isfinite(values)) or np.any(np.abs(values) > 1.0):
        raise DataError(f"{path}: latent values outside [-1, 1]")
    return EncodedSequence("continuous", header.meta, latents=values.astype(np.float64))
