"""Finite scalar quantization, FSQ-dropout and token index packing.

Each latent value is bounded with ``tanh`` and, when quantized, rounded to
one of ``2n + 1`` levels ``{-1, -1 + 1/n, ..., 1}``. A ``d``-dimensional
vector of levels packs into one integer in base ``2n + 1`` with the first
dimension as the least significant digit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.ops import round_half_away
from .config import FsqConfig
from .exceptions import ConfigError, DataError, UsageError

GRID_TOL = 1e-6


@dataclass
class LatentSet:
    """Summary embeddings ``[..., K, d_lat]`` bounded to [-1, 1]."""

    values: Tensor
    quantized: bool

    def numpy(self) -> np.ndarray:
        return self.values.data


@dataclass
class TokenChunk:
    indices: np.ndarray  # [K] (or [..., K]) integer codes


def bound(z: Tensor) -> LatentSet:
    """Continuous path: ``tanh(z)`` without rounding."""
    return LatentSet(ops.tanh(z), quantized=False)


def quantize(z: Tensor, cfg: FsqConfig) -> LatentSet:
    """``round(n * tanh(z)) / n`` with a straight-through gradient for the rounding."""
    return LatentSet(ops.ste_round(ops.tanh(z), cfg.n), quantized=True)


def fsq_dropout(z: Tensor, cfg: FsqConfig, rng: np.random.Generator, training: bool = True) -> LatentSet:
    """Bypass rounding for the whole chunk with probability ``cfg.dropout_p``."""
    if not 0.0 <= cfg.dropout_p <= 1.0:
        raise ConfigError(f"dropout_p must lie in [0, 1], got {cfg.dropout_p}")
    if not training:
        raise UsageError("fsq_dropout is a training-time operation; call quantize() or bound() at inference")
    if rng.random() < cfg.dropout_p:
        return bound(z)
    return quantize(z, cfg)


def fsq_dropout_batch(z: Tensor, cfg: FsqConfig, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
    """FSQ-dropout over a batch of chunks ``[B, K, d]``, one draw per chunk.

    Returns the bottleneck values and the boolean bypass mask ``[B]``.
    """
    if not 0.0 <= cfg.dropout_p <= 1.0:
        raise ConfigError(f"dropout_p must lie in [0, 1], got {cfg.dropout_p}")
    bypass = rng.random(z.shape[0]) < cfg.dropout_p
    t = ops.tanh(z)
    if bypass.all():
        return t, bypass
    q = ops.ste_round(t, cfg.n)
    if not bypass.any():
        return q, bypass
    keep = bypass.reshape((-1,) + (1,) * (z.ndim - 1)).astype(z.dtype)
    return t * keep + q * (1.0 - keep), bypass


def is_on_grid(values: np.ndarray, n: int, tol: float = GRID_TOL) -> np.ndarray:
    return np.abs(values - round_half_away(n * values) / n) <= tol


def levels_to_indices(lat: LatentSet | np.ndarray, cfg: FsqConfig) -> TokenChunk:
    if isinstance(lat, LatentSet):
        if not lat.quantized:
            raise UsageError("levels_to_indices needs a quantized LatentSet")
        values = lat.numpy()
    else:
        values = np.asarray(lat)
    if values.shape[-1] != cfg.d:
        raise DataError(f"last axis must have d={cfg.d} entries, got shape {values.shape}")
    if np.any(np.abs(values) > 1.0 + GRID_TOL) or not np.all(is_on_grid(values, cfg.n)):
        raise DataError(f"values are not on the {cfg.levels}-level FSQ grid")
    digits = (round_half_away(cfg.n * values) + cfg.n).astype(np.int64)
    weights = cfg.levels ** np.arange(cfg.d, dtype=np.int64)
    return TokenChunk((digits * weights).sum(axis=-1))


def indices_to_levels(tok: TokenChunk | np.ndarray, cfg: FsqConfig, dtype=np.float64) -> LatentSet:
    idx = np.asarray(tok.indices if isinstance(tok, TokenChunk) else tok, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= cfg.codebook_size):
        raise DataError(f"token index outside [0, {cfg.codebook_size - 1}]")
    digits = (idx[..., None] // cfg.levels ** np.arange(cfg.d, dtype=np.int64)) % cfg.levels
    return LatentSet(Tensor((digits - cfg.n).astype(dtype) / cfg.n), quantized=True)


def bitrate(cfg: FsqConfig, k: int, chunk_seconds: float) -> float:
    """Raw token rate in bits per second (no entropy coding)."""
    if chunk_seconds <= 0:
        raise ConfigError(f"chunk_seconds must be positive, got {chunk_seconds}")
    return k * math.log2(cfg.codebook_size) / chunk_seconds
