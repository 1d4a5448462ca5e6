"""Synthetic audio for tests and demos: tones, sweeps, chirps and noise bursts."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import chirp as _chirp

from .audio_io import write_wav
from .signal import WaveformBuffer


def _time(seconds: float, sample_rate: int) -> np.ndarray:
    return np.arange(int(round(seconds * sample_rate))) / sample_rate


def _as_channels(x: np.ndarray, channels: int) -> np.ndarray:
    return np.repeat(x[None, :], channels, axis=0)


def sine(freq: float, seconds: float, sample_rate: int, amplitude: float = 0.5, phase: float = 0.0,
         channels: int = 1) -> WaveformBuffer:
    t = _time(seconds, sample_rate)
    return WaveformBuffer(_as_channels(amplitude * np.sin(2 * np.pi * freq * t + phase), channels), sample_rate)


def random_tone(rng: np.random.Generator, seconds: float, sample_rate: int, channels: int = 1) -> WaveformBuffer:
    """One or two stationary partials, frequencies log-uniform between 110 Hz and sample_rate / 8."""
    t = _time(seconds, sample_rate)
    x = np.zeros_like(t)
    for _ in range(int(rng.integers(1, 3))):
        freq = np.exp(rng.uniform(np.log(110.0), np.log(sample_rate / 8)))
        x += rng.uniform(0.1, 0.4) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return WaveformBuffer(_as_channels(x, channels), sample_rate)


def sweep(rng: np.random.Generator, seconds: float, sample_rate: int, channels: int = 1) -> WaveformBuffer:
    """Logarithmic sine sweep between two random frequencies."""
    t = _time(seconds, sample_rate)
    f0, f1 = np.exp(rng.uniform(np.log(100.0), np.log(sample_rate / 4), size=2))
    x = rng.uniform(0.1, 0.4) * _chirp(t, f0, t[-1], f1, method="logarithmic")
    return WaveformBuffer(_as_channels(x, channels), sample_rate)


def linear_chirp(rng: np.random.Generator, seconds: float, sample_rate: int, channels: int = 1) -> WaveformBuffer:
    t = _time(seconds, sample_rate)
    f0, f1 = rng.uniform(100.0, sample_rate / 4, size=2)
    x = rng.uniform(0.1, 0.4) * _chirp(t, f0, t[-1], f1, method="linear")
    return WaveformBuffer(_as_channels(x, channels), sample_rate)


def noise_burst(rng: np.random.Generator, seconds: float, sample_rate: int, channels: int = 1) -> WaveformBuffer:
    """Gaussian noise under a random Hann-shaped envelope."""
    n = int(round(seconds * sample_rate))
    length = int(rng.integers(n // 8, n // 2 + 1))
    start = int(rng.integers(0, n - length + 1))
    env = np.zeros(n)
    env[start : start + length] = np.hanning(length)
    x = rng.uniform(0.05, 0.2) * env * rng.standard_normal(n)
    return WaveformBuffer(_as_channels(x, channels), sample_rate)


GENERATORS = {"tone": random_tone, "sweep": sweep, "chirp": linear_chirp, "burst": noise_burst}


def tone_corpus(n_items: int, seconds: float, sample_rate: int, seed: int = 0,
                channels: int = 1) -> list[WaveformBuffer]:
    rng = np.random.default_rng(seed)
    return [random_tone(rng, seconds, sample_rate, channels) for _ in range(n_items)]


def mixed_corpus(n_items: int, seconds: float, sample_rate: int, seed: int = 0,
                 channels: int = 1) -> list[tuple[str, WaveformBuffer]]:
    """Cycle through every generator kind; returns ``(kind, wave)`` pairs."""
    rng = np.random.default_rng(seed)
    kinds = list(GENERATORS)
    out = []
    for i in range(n_items):
        kind = kinds[i % len(kinds)]
        out.append((kind, GENERATORS[kind](rng, seconds, sample_rate, channels)))
    return out


def write_corpus(directory: str | Path, n_items: int, seconds: float, sample_rate: int, seed: int = 0,
                 channels: int = 1, kinds: str = "mixed") -> list[Path]:
    """Write a synthetic corpus as float WAV files; ``kinds`` is ``"mixed"`` or ``"tones"``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if kinds == "tones":
        items = [("tone", w) for w in tone_corpus(n_items, seconds, sample_rate, seed, channels)]
    else:
        items = mixed_corpus(n_items, seconds, sample_rate, seed, channels)
    paths = []
    for i, (kind, wave) in enumerate(items):
        path = directory / f"{i:03d}_{kind}.wav"
        write_wav(path, wave)
        paths.append(path)
    return paths
