"""WAV reading and writing on top of :mod:`scipy.io.wavfile`."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .exceptions import DataError
from .signal import WaveformBuffer

_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def read_wav(path: str | Path) -> WaveformBuffer:
    """Read 16/32-bit PCM, unsigned 8-bit or float WAV as ``[channels, n]`` float64 in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from None
    if data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in _INT_SCALE:
        samples = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif np.issubdtype(data.dtype, np.floating):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample type {data.dtype}")
    samples = samples[:, None] if samples.ndim == 1 else samples
    return WaveformBuffer(samples.T.copy(), rate)


def write_wav(path: str | Path, wave: WaveformBuffer) -> None:
    """Write 32-bit float WAV (lossless for the float32 range)."""
    data = wave.samples.T.astype(np.float32)
    wavfile.write(str(path), wave.sample_rate, data[:, 0] if wave.channels == 1 else data)
