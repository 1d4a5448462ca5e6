"""EDM-style consistency parameterization and noise-level embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops
from ..exceptions import DomainError


@dataclass(frozen=True)
class EdmCoefficients:
    sigma_data: float = 0.5
    sigma_min: float = 0.002
    sigma_max: float = 80.0

    def c_skip(self, sigma):
        sd2 = self.sigma_data**2
        return sd2 / ((np.asarray(sigma, dtype=np.float64) - self.sigma_min) ** 2 + sd2)

    def c_out(self, sigma):
        sigma = np.asarray(sigma, dtype=np.float64)
        return self.sigma_data * (sigma - self.sigma_min) / np.sqrt(self.sigma_data**2 + sigma**2)

    def c_in(self, sigma):
        sigma = np.asarray(sigma, dtype=np.float64)
        return 1.0 / np.sqrt(sigma**2 + self.sigma_data**2)

    def check(self, sigma) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=np.float64)
        if np.any(sigma < self.sigma_min) or np.any(sigma > self.sigma_max) or not np.all(np.isfinite(sigma)):
            raise DomainError(
                f"sigma must lie in [{self.sigma_min}, {self.sigma_max}], got "
                f"[{sigma.min():.6g}, {sigma.max():.6g}]"
            )
        return sigma


def _per_item(values: np.ndarray, ndim: int, dtype) -> np.ndarray:
    return np.asarray(values, dtype=dtype).reshape((-1,) + (1,) * (ndim - 1))


def edm_wrap(raw: Tensor, x_sigma, sigma, coeffs: EdmCoefficients) -> Tensor:
    """``c_skip(sigma) * x_sigma + c_out(sigma) * raw`` with one sigma per batch item.

    At ``sigma == sigma_min`` the coefficients are exactly 1 and 0, so the
    result equals ``x_sigma`` regardless of ``raw``.
    """
    sigma = np.atleast_1d(coeffs.check(sigma))
    x = x_sigma if isinstance(x_sigma, Tensor) else Tensor(np.asarray(x_sigma))
    skip = _per_item(coeffs.c_skip(sigma), x.ndim, x.dtype)
    out = _per_item(coeffs.c_out(sigma), x.ndim, x.dtype)
    return ops.add(ops.mul(x, skip), ops.mul(raw, out))


def sigma_embed(sigma, channels: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal features of ``ln(sigma)``; ``[..., channels]``.

    Frequencies are geometrically spaced from 1/32 to 8 cycles per unit of
    ``ln(sigma)``: the slowest stays below one period across the usable noise
    range, the fastest separates nearby levels.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive for the embedding")
    half = channels // 2
    freqs = 2.0 * np.pi * np.geomspace(1.0 / 32.0, 8.0, half)
    arg = np.log(sigma)[..., None] * freqs
    return np.concatenate([np.cos(arg), np.sin(arg)], axis=-1).astype(dtype)
