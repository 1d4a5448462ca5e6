"""Waveform <-> complex spectrogram conversion, amplitude compression and chunking.

The spectrogram layout is ``[C, F, T]`` with ``C = 2 * audio_channels``:
channel ``2i`` holds the real part and ``2i + 1`` the imaginary part of
audio channel ``i``. ``F = window / 2`` bins are kept. The Nyquist bin is
real-valued for real input, as is the DC bin, so its value is stored in the
(otherwise always zero) imaginary slot of the DC bin. This keeps ``F`` a power
of two while the STFT stays exactly invertible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import get_window

from .exceptions import ConfigError, DimensionError, LengthError, StateError


@dataclass
class WaveformBuffer:
    samples: np.ndarray  # [channels, n_samples]
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] not in (1, 2):
            raise DimensionError(f"expected [channels, n_samples] with 1 or 2 channels, got {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # [C, F, T]
    window_size: int
    hop_size: int
    transformed: bool = False

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] % 2:
            raise DimensionError(f"spectrogram must be [C, F, T] with even C, got {self.data.shape}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[2]

    @property
    def audio_channels(self) -> int:
        return self.data.shape[0] // 2

    def to_complex(self) -> np.ndarray:
        """Complex view ``[audio_channels, F, T]``."""
        return self.data[0::2] + 1j * self.data[1::2]

    @classmethod
    def from_complex(cls, c: np.ndarray, window_size: int, hop_size: int, transformed: bool,
                     dtype=np.float64) -> ComplexSpectrogram:
        ch, f, t = c.shape
        data = np.empty((2 * ch, f, t), dtype=dtype)
        data[0::2] = c.real
        data[1::2] = c.imag
        return cls(data, window_size, hop_size, transformed)


@dataclass(frozen=True)
class TransformParams:
    alpha: float = 0.65
    beta: float = 0.34

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.beta <= 0.0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


def _hann(window: int) -> np.ndarray:
    return get_window("hann", window, fftbins=True)


def n_frames_for(n_samples: int, window: int, hop: int) -> int:
    return (n_samples - window) // hop + 1


def n_samples_for(n_frames: int, window: int, hop: int) -> int:
    return (n_frames - 1) * hop + window


def stft(wave: WaveformBuffer, window: int, hop: int) -> ComplexSpectrogram:
    """Hann-windowed STFT without centering; frame ``t`` starts at sample ``t * hop``."""
    if window <= 0 or hop <= 0 or window & (window - 1) or hop & (hop - 1):
        raise ConfigError(f"window ({window}) and hop ({hop}) must be powers of two")
    if window != 2 * hop:
        raise ConfigError(f"window must equal 2 * hop, got window={window}, hop={hop}")
    if wave.n_samples < window:
        raise LengthError(f"signal of {wave.n_samples} samples is shorter than one window ({window})")
    n_frames = n_frames_for(wave.n_samples, window, hop)
    frames = np.lib.stride_tricks.sliding_window_view(wave.samples, window, axis=-1)[:, ::hop][:, :n_frames]
    spectrum = np.fft.rfft(frames * _hann(window), axis=-1)  # [ch, T, F + 1]
    packed = spectrum[..., : window // 2].copy()
    packed[..., 0] = spectrum[..., 0].real + 1j * spectrum[..., window // 2].real
    return ComplexSpectrogram.from_complex(np.swapaxes(packed, 1, 2), window, hop, transformed=False)


def istft(spec: ComplexSpectrogram, sample_rate: int = 1) -> WaveformBuffer:
    """Weighted overlap-add inverse of :func:`stft`, normalized by the summed squared window."""
    if spec.transformed:
        raise StateError("spectrogram is amplitude-transformed; apply amp_inverse before istft")
    window, hop = spec.window_size, spec.hop_size
    c = np.swapaxes(spec.to_complex(), 1, 2)  # [ch, T, F]
    ch, n_frames, f = c.shape
    if f != window // 2:
        raise DimensionError(f"expected {window // 2} bins for window {window}, got {f}")
    full = np.zeros((ch, n_frames, f + 1), dtype=np.complex128)
    full[..., :f] = c
    full[..., 0] = c[..., 0].real
    full[..., f] = c[..., 0].imag
    w = _hann(window)
    frames = np.fft.irfft(full, n=window, axis=-1) * w
    n_out = n_samples_for(n_frames, window, hop)
    out = np.zeros((ch, n_out))
    norm = np.zeros(n_out)
    for t in range(n_frames):
        out[:, t * hop : t * hop + window] += frames[:, t]
        norm[t * hop : t * hop + window] += w * w
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    return WaveformBuffer(out, sample_rate)


def amp_transform(spec: ComplexSpectrogram, params: TransformParams) -> ComplexSpectrogram:
    """Compress magnitudes to ``beta * |c| ** alpha`` keeping the phase."""
    if spec.transformed:
        raise StateError("spectrogram is already amplitude-transformed")
    c = spec.to_complex()
    mag = np.abs(c)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = params.beta * mag[nz] ** params.alpha / mag[nz]
    return ComplexSpectrogram.from_complex(c * scale, spec.window_size, spec.hop_size, True, spec.data.dtype)


def amp_inverse(spec: ComplexSpectrogram, params: TransformParams) -> ComplexSpectrogram:
    if not spec.transformed:
        raise StateError("spectrogram is not amplitude-transformed")
    c = spec.to_complex()
    mag = np.abs(c)
    scale = np.zeros_like(mag)
    nz = mag > 0
    scale[nz] = (mag[nz] / params.beta) ** (1.0 / params.alpha) / mag[nz]
    return ComplexSpectrogram.from_complex(c * scale, spec.window_size, spec.hop_size, False, spec.data.dtype)


def chunk(spec: ComplexSpectrogram, t_chunk: int) -> list[ComplexSpectrogram]:
    """Split along time into ``ceil(T / t_chunk)`` blocks, zero-padding the last one."""
    if t_chunk <= 0:
        raise ConfigError(f"t_chunk must be positive, got {t_chunk}")
    if not spec.transformed:
        raise StateError("chunking expects an amplitude-transformed spectrogram")
    n_chunks = math.ceil(spec.n_frames / t_chunk)
    pad = n_chunks * t_chunk - spec.n_frames
    data = np.pad(spec.data, ((0, 0), (0, 0), (0, pad)))
    return [
        replace(spec, data=data[:, :, i * t_chunk : (i + 1) * t_chunk].copy())
        for i in range(n_chunks)
    ]


def unchunk(chunks: list[ComplexSpectrogram], n_frames: int | None = None) -> ComplexSpectrogram:
    """Concatenate chunks along time, optionally trimming padding to ``n_frames``."""
    if not chunks:
        raise LengthError("no chunks to concatenate")
    data = np.concatenate([c.data for c in chunks], axis=2)
    if n_frames is not None:
        data = data[:, :, :n_frames]
    return replace(chunks[0], data=data)


def analyze(wave: WaveformBuffer, cfg) -> ComplexSpectrogram:
    """Waveform to the model domain: STFT followed by the amplitude transform.

    ``cfg`` is a :class:`~dualcodec.config.SignalConfig`.
    """
    spec = stft(wave, cfg.window, cfg.hop)
    return amp_transform(spec, TransformParams(cfg.alpha, cfg.beta))


def synthesize(spec: ComplexSpectrogram, cfg, n_samples: int | None = None) -> WaveformBuffer:
    """Inverse of :func:`analyze`, optionally trimmed or zero-padded to ``n_samples``."""
    wave = istft(amp_inverse(spec, TransformParams(cfg.alpha, cfg.beta)), cfg.sample_rate)
    if n_samples is None:
        return wave
    samples = wave.samples[:, :n_samples]
    if samples.shape[1] < n_samples:
        samples = np.pad(samples, ((0, 0), (0, n_samples - samples.shape[1])))
    return WaveformBuffer(samples, cfg.sample_rate)
