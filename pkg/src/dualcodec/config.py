"""Configuration schema shared by every module, with ``full`` and ``toy`` profiles.

A config file is YAML with an optional ``profile`` key naming the base
profile, followed by per-section overrides::

    profile: toy
    train:
      steps: 500
      batch_size: 4
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .exceptions import ConfigError


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass
class SignalConfig:
    sample_rate: int = 44100
    channels: int = 2
    window: int = 2048
    hop: int = 1024
    t_chunk: int = 32
    alpha: float = 0.65
    beta: float = 0.34

    @property
    def freq_bins(self) -> int:
        return self.window // 2

    @property
    def spec_channels(self) -> int:
        return 2 * self.channels

    @property
    def chunk_seconds(self) -> float:
        return self.t_chunk * self.hop / self.sample_rate

    def validate(self) -> None:
        if self.channels not in (1, 2):
            raise ConfigError(f"channels must be 1 or 2, got {self.channels}")
        if not (_is_pow2(self.window) and _is_pow2(self.hop)):
            raise ConfigError(f"window ({self.window}) and hop ({self.hop}) must be powers of two")
        if self.window != 2 * self.hop:
            raise ConfigError(f"window must equal 2 * hop, got window={self.window}, hop={self.hop}")
        if self.t_chunk <= 0:
            raise ConfigError(f"t_chunk must be positive, got {self.t_chunk}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta <= 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


@dataclass
class FsqConfig:
    n: int = 5
    d: int = 4
    dropout_p: float = 0.75

    @property
    def levels(self) -> int:
        return 2 * self.n + 1

    @property
    def codebook_size(self) -> int:
        return self.levels**self.d

    def validate(self) -> None:
        if self.n < 1 or self.d < 1:
            raise ConfigError(f"FSQ needs n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.codebook_size > 2**64:
            raise ConfigError(f"codebook size {self.codebook_size} does not fit in u64")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1], got {self.dropout_p}")


@dataclass
class ModelConfig:
    conv_channels: list[int] = field(default_factory=lambda: [64, 128, 256, 512])
    conv_layers: list[int] = field(default_factory=lambda: [3, 3, 3, 1])
    transformer_blocks: int = 12
    hidden_dim: int = 512
    head_dim: int = 128
    mlp_mult: int = 4
    k_summary: int = 128
    d_lat: int = 4
    sigma_embed_channels: int = 512
    sigma_data: float = 0.5
    sigma_min: float = 0.002
    sigma_max: float = 80.0

    # time and frequency factors of the three downsampling stages
    @property
    def freq_factor(self) -> int:
        return 2 * 4 * 2

    @property
    def time_factor(self) -> int:
        return 2 * 1 * 2

    @property
    def n_heads(self) -> int:
        return self.hidden_dim // self.head_dim

    def validate(self, signal: SignalConfig | None = None) -> None:
        if len(self.conv_channels) != 4 or len(self.conv_layers) != 4:
            raise ConfigError("conv_channels and conv_layers need one entry per level (4 levels)")
        if self.hidden_dim % self.head_dim:
            raise ConfigError(
                f"hidden_dim ({self.hidden_dim}) must be divisible by head_dim ({self.head_dim})"
            )
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("need 0 < sigma_min < sigma_max")
        if self.sigma_embed_channels % 2:
            raise ConfigError("sigma_embed_channels must be even")
        if signal is not None:
            if signal.freq_bins % self.freq_factor:
                raise ConfigError(
                    f"F={signal.freq_bins} not divisible by frequency downsampling {self.freq_factor}"
                )
            if signal.t_chunk % self.time_factor:
                raise ConfigError(
                    f"t_chunk={signal.t_chunk} not divisible by time downsampling {self.time_factor}"
                )


@dataclass
class TrainConfig:
    batch_size: int = 20
    steps: int = 2_000_000
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    radam: bool = True
    ema_momentum: float = 0.9999
    delta0: float = 0.1
    e_k: float = 2.0
    p_mean: float = -1.0
    p_std: float = 1.4
    mix_p: float = 0.5
    huber_factor: float = 0.00054
    seed: int = 0
    checkpoint_every: int = 0
    smoothing: float = 0.98

    def validate(self) -> None:
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError("batch_size and steps must be positive")
        if not 0.0 < self.ema_momentum < 1.0:
            raise ConfigError(f"ema_momentum must lie in (0, 1), got {self.ema_momentum}")
        if not 0.0 < self.delta0 < 1.0 or self.e_k < 1.0:
            raise ConfigError("need 0 < delta0 < 1 and e_k >= 1 for a decreasing schedule")
        if not 0.0 <= self.mix_p <= 1.0:
            raise ConfigError(f"mix_p must lie in [0, 1], got {self.mix_p}")


@dataclass
class DecodeConfig:
    strategy: str = "parallel"
    steps: int = 4
    sigma_end: float | None = None
    use_ema: bool = True

    def validate(self) -> None:
        if self.strategy not in ("ar", "parallel"):
            raise ConfigError(f"unknown decode strategy {self.strategy!r}")
        if self.steps < 1:
            raise ConfigError(f"decode steps must be >= 1, got {self.steps}")


@dataclass
class CodecConfig:
    profile: str = "full"
    signal: SignalConfig = field(default_factory=SignalConfig)
    fsq: FsqConfig = field(default_factory=FsqConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def validate(self) -> CodecConfig:
        self.signal.validate()
        self.fsq.validate()
        self.model.validate(self.signal)
        self.train.validate()
        self.decode.validate()
        if self.fsq.d != self.model.d_lat:
            raise ConfigError(f"fsq.d ({self.fsq.d}) must equal model.d_lat ({self.model.d_lat})")
        return self

    # derived quantities -------------------------------------------------

    @property
    def latent_rate_hz(self) -> float:
        """Rate of latent frames when the K summary vectors are regrouped into 64-wide frames."""
        values_per_chunk = self.model.k_summary * self.model.d_lat
        frames_per_chunk = values_per_chunk / 64
        return frames_per_chunk / self.signal.chunk_seconds

    @property
    def compression_ratio(self) -> float:
        """Waveform values in per latent value out."""
        samples = self.signal.channels * self.signal.t_chunk * self.signal.hop
        return samples / (self.model.k_summary * self.model.d_lat)

    @property
    def bitrate_bps(self) -> float:
        return self.model.k_summary * math.log2(self.fsq.codebook_size) / self.signal.chunk_seconds

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CodecConfig:
        data = dict(data)
        base = profile(data.pop("profile", "full"))
        for section, overrides in data.items():
            if not hasattr(base, section):
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(base, section)
            if not isinstance(overrides, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            for key, value in overrides.items():
                if not hasattr(target, key):
                    raise ConfigError(f"unknown key {section}.{key}")
                if key == "betas":
                    value = tuple(value)
                setattr(target, key, value)
        return base.validate()

    @classmethod
    def from_json(cls, text: str) -> CodecConfig:
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path) -> CodecConfig:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(json.loads(self.to_json()), f, sort_keys=False)


def full_profile() -> CodecConfig:
    """Full-scale 44.1 kHz stereo configuration."""
    return CodecConfig(profile="full")


def toy_profile() -> CodecConfig:
    """16 kHz mono desk-scale configuration that trains on one CPU core."""
    return CodecConfig(
        profile="toy",
        signal=SignalConfig(sample_rate=16000, channels=1, window=256, hop=128, t_chunk=16),
        fsq=FsqConfig(n=5, d=4, dropout_p=0.75),
        model=ModelConfig(
            conv_channels=[8, 16, 32, 64],
            conv_layers=[0, 1, 1, 1],
            transformer_blocks=2,
            hidden_dim=64,
            head_dim=32,
            mlp_mult=4,
            k_summary=16,
            d_lat=4,
            sigma_embed_channels=64,
        ),
        train=TrainConfig(
            batch_size=8,
            steps=2000,
            lr=1e-3,
            ema_momentum=0.995,
        ),
        decode=DecodeConfig(strategy="parallel", steps=4),
    )


def custom_profile() -> CodecConfig:
    """Starting point for user-defined profiles: full-scale values, renamed."""
    return CodecConfig(profile="custom")


PROFILES = {"full": full_profile, "toy": toy_profile, "custom": custom_profile}


def profile(name: str) -> CodecConfig:
    try:
        return PROFILES[name]()
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None
