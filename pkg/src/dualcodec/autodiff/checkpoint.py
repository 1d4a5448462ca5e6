"""Binary parameter checkpoints.

Layout (little-endian)::

    b"DCKP"  u32 version  u32 count
    count x { u32 name_len, name (utf-8), u32 rank, rank x u64 dim, f32 data }

Names carry a namespace prefix such as ``raw/`` or ``ema/``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..exceptions import DataError

MAGIC = b"DCKP"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            data = np.ascontiguousarray(arr, dtype="<f4")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            f.write(data.tobytes())


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", raw, pos)
            pos += 8 * rank
            size = int(np.prod(shape)) if rank else 1
            if pos + 4 * size > len(raw):
                raise DataError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint ({exc})") from None
    return out


def encode_text(text: str) -> np.ndarray:
    """Store text as f32 byte codes (exact for 0..255) so it fits the array format."""
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def decode_text(arr: np.ndarray) -> str:
    return arr.astype(np.uint8).tobytes().decode("utf-8")
