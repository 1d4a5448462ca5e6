"""Encoding to latents or tokens, and autoregressive / parallel decoding back to audio."""

from __future__ import annotations

import weakref
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .autodiff.tensor import add_result_observer, remove_result_observer
from .config import CodecConfig
from .exceptions import ConfigError, DataError, DimensionError, LengthError, UsageError
from .fsq import indices_to_levels, levels_to_indices
from .net import CodecModel
from .signal import ComplexSpectrogram, WaveformBuffer, analyze, chunk, n_frames_for, n_samples_for, synthesize

PAD = -1
MODES = ("continuous", "discrete")
ENCODE_BATCH = 16


@dataclass(frozen=True)
class SequenceMeta:
    """Profile metadata stored with every encoded sequence."""

    sample_rate: int
    channels: int
    window: int
    hop: int
    t_chunk: int
    n_samples: int

    @classmethod
    def from_config(cls, cfg: CodecConfig, n_samples: int) -> SequenceMeta:
        s = cfg.signal
        return cls(s.sample_rate, s.channels, s.window, s.hop, s.t_chunk, n_samples)

    @property
    def chunk_seconds(self) -> float:
        return self.t_chunk * self.hop / self.sample_rate

    @property
    def n_frames(self) -> int:
        return n_frames_for(self.n_samples, self.window, self.hop)

    def check(self, cfg: CodecConfig) -> None:
        s = cfg.signal
        ours = (self.sample_rate, self.channels, self.window, self.hop, self.t_chunk)
        theirs = (s.sample_rate, s.channels, s.window, s.hop, s.t_chunk)
        if ours != theirs:
            raise ConfigError(
                f"sequence profile (sr, ch, window, hop, t_chunk)={ours} does not match model {theirs}"
            )


@dataclass
class EncodedSequence:
    """Per-chunk payload: continuous ``latents [T, K, d]`` or discrete ``tokens [T, K]``."""

    mode: str
    meta: SequenceMeta
    latents: np.ndarray | None = None
    tokens: np.ndarray | None = None
    n: int = 5  # FSQ levels per side, needed to unpack tokens
    d: int | None = None  # FSQ dimensionality; taken from the latents when continuous

    def __post_init__(self):
        if self.mode not in MODES:
            raise UsageError(f"unknown payload mode {self.mode!r}")
        payload = self.latents if self.mode == "continuous" else self.tokens
        if payload is None or (self.latents is not None and self.tokens is not None):
            raise UsageError(f"{self.mode} sequence needs exactly one payload of that type")
        if payload.shape[0] < 1:
            raise LengthError("an encoded sequence needs at least one chunk")
        if self.mode == "continuous" and (self.latents.ndim != 3 or not np.all(np.abs(self.latents) <= 1.0)):
            raise DataError("continuous latents must be [T, K, d] with values in [-1, 1]")
        if self.mode == "discrete" and self.tokens.ndim != 2:
            raise DataError(f"tokens must be [T, K], got shape {self.tokens.shape}")
        if self.mode == "continuous":
            self.d = self.latents.shape[2]
        elif self.d is None:
            raise DataError("discrete sequences need the FSQ dimensionality d")

    @property
    def n_chunks(self) -> int:
        return (self.latents if self.mode == "continuous" else self.tokens).shape[0]

    def levels(self, cfg: CodecConfig, index=slice(None)) -> np.ndarray:
        """Upsampler input ``[..., K, d]`` for the chunks selected by ``index``."""
        if self.mode == "continuous":
            return self.latents[index]
        return indices_to_levels(self.tokens[index], cfg.fsq).numpy()

    def quantized(self, cfg: CodecConfig) -> EncodedSequence:
        """Discrete version of a continuous sequence (rounded to the FSQ grid)."""
        if self.mode == "discrete":
            return self
        grid = ops.round_half_away(cfg.fsq.n * self.latents) / cfg.fsq.n
        return EncodedSequence("discrete", self.meta, tokens=levels_to_indices(grid, cfg.fsq).indices,
                               n=cfg.fsq.n, d=cfg.fsq.d)


@dataclass
class PairSchedule:
    """``steps[s]`` lists ``(left, right)`` chunk indices; :data:`PAD` marks an empty slot."""

    n_chunks: int
    steps: list[list[tuple[int, int]]]

    @property
    def calls(self) -> int:
        return sum(len(pairs) for pairs in self.steps)


@dataclass
class DecodeResult:
    wave: WaveformBuffer
    spec: ComplexSpectrogram
    calls: int
    call_peaks: list[int] = field(default_factory=list)

    @property
    def peak_bytes(self) -> int:
        """Largest activation high-water mark over all decoder invocations."""
        return max(self.call_peaks, default=0)


# encoding ---------------------------------------------------------------------


def spectrogram_chunks(wave: WaveformBuffer, cfg: CodecConfig) -> np.ndarray:
    """``[T, C, F, t_chunk]`` model-domain chunks for a waveform."""
    s = cfg.signal
    if wave.channels != s.channels or wave.sample_rate != s.sample_rate:
        raise ConfigError(
            f"audio has {wave.channels} ch @ {wave.sample_rate} Hz; profile expects {s.channels} ch @ {s.sample_rate} Hz"
        )
    min_samples = n_samples_for(s.t_chunk, s.window, s.hop)
    if wave.n_samples < min_samples:
        raise LengthError(f"need at least one chunk of audio ({min_samples} samples), got {wave.n_samples}")
    return np.stack([c.data for c in chunk(analyze(wave, s), s.t_chunk)])


def encode_sequence(model: CodecModel, wave: WaveformBuffer, mode: str = "continuous") -> EncodedSequence:
    """Encode audio chunk by chunk; ``mode`` selects ``tanh`` latents or packed FSQ tokens."""
    if mode not in MODES:
        raise UsageError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = model.cfg
    chunks = spectrogram_chunks(wave, cfg).astype(model.dtype)
    zs = []
    with no_grad():
        for i in range(0, len(chunks), ENCODE_BATCH):
            zs.append(model.encode(Tensor(chunks[i : i + ENCODE_BATCH])).data)
    z = np.concatenate(zs).astype(np.float64)
    meta = SequenceMeta.from_config(cfg, wave.n_samples)
    bounded = np.tanh(z).astype(np.float32).astype(np.float64)  # exactly representable in DCLT files
    if mode == "continuous":
        return EncodedSequence("continuous", meta, latents=bounded, n=cfg.fsq.n)
    grid = ops.round_half_away(cfg.fsq.n * bounded) / cfg.fsq.n
    tokens = levels_to_indices(grid, cfg.fsq).indices
    return EncodedSequence("discrete", meta, tokens=tokens, n=cfg.fsq.n, d=cfg.fsq.d)


# schedules ----------------------------------------------------------------------


def pair_schedule(t_chunks: int, s_steps: int) -> PairSchedule:
    """Pairs ``(0,1), (2,3), ...`` on odd-numbered steps and ``(PAD,0), (1,2), ...`` on the others."""
    if t_chunks < 1 or s_steps < 1:
        raise ConfigError(f"need t_chunks >= 1 and s_steps >= 1, got {t_chunks}, {s_steps}")
    steps = []
    for s in range(s_steps):
        shift = s % 2
        pairs = []
        for left in range(-shift, t_chunks, 2):
            right = left + 1
            pairs.append((left if left >= 0 else PAD, right if right < t_chunks else PAD))
        steps.append(pairs)
    return PairSchedule(t_chunks, steps)


def cond_noise_schedule(s_steps: int, sigma_max: float = 80.0, sigma_end: float = 0.002,
                        sigma_min: float = 0.002) -> np.ndarray:
    """Linear conditioning-noise levels from ``sigma_max`` down to ``sigma_end``."""
    if s_steps < 1:
        raise ConfigError(f"s_steps must be >= 1, got {s_steps}")
    if not sigma_max > sigma_end >= sigma_min:
        raise ConfigError(f"need sigma_max > sigma_end >= sigma_min, got {sigma_max}, {sigma_end}, {sigma_min}")
    if s_steps == 1:
        return np.array([float(sigma_max)])
    return np.linspace(sigma_max, sigma_end, s_steps)


def ar_sigma_ladder(steps: int, sigma_max: float = 80.0, sigma_min: float = 0.002) -> np.ndarray:
    """Geometric noise levels for multistep sampling of one chunk, starting at ``sigma_max``."""
    if steps < 1:
        raise ConfigError(f"denoise steps must be >= 1, got {steps}")
    return np.geomspace(sigma_max, sigma_min, steps + 1)[:steps]


# instrumentation ------------------------------------------------------------------


class ActivationMeter:
    """High-water mark of live activation bytes during each decoder invocation.

    Every array produced by an autodiff op inside :meth:`measure` is counted
    until it is freed; views are charged to the array that owns the buffer.
    Temporaries that never become op results (im2col buffers, for example)
    are not counted. Unlike allocator tracing, the count does not depend on
    interpreter bookkeeping, so it is reproducible run to run.
    """

    def __init__(self):
        self.peaks: list[int] = []
        self._live = 0
        self._peak = 0
        self._seen: set[int] = set()
        self._generation = 0

    def __enter__(self) -> ActivationMeter:
        return self

    def __exit__(self, *exc) -> None:
        pass

    def _release(self, generation: int, key: int, nbytes: int) -> None:
        if generation == self._generation:
            self._seen.discard(key)
            self._live -= nbytes

    def _observe(self, arr: np.ndarray) -> None:
        owner = arr
        while isinstance(owner.base, np.ndarray):
            owner = owner.base
        key = id(owner)
        if key in self._seen:
            return
        self._seen.add(key)
        self._live += owner.nbytes
        self._peak = max(self._peak, self._live)
        weakref.finalize(owner, self._release, self._generation, key, owner.nbytes)

    @contextmanager
    def measure(self):
        self._generation += 1
        self._live = self._peak = 0
        self._seen.clear()
        add_result_observer(self._observe)
        try:
            yield
        finally:
            remove_result_observer(self._observe)
            self.peaks.append(self._peak)

@contextmanager
def _maybe(meter: ActivationMeter | None):
    if meter is None:
        yield
    else:
        with meter.measure():
            yield


# decoding --------------------------------------------------------------------------


def check_payload(model: CodecModel, seq: EncodedSequence) -> None:
    cfg = model.cfg
    seq.meta.check(cfg)
    k, d = cfg.model.k_summary, cfg.model.d_lat
    if seq.mode == "continuous":
        if seq.latents.shape[1:] != (k, d):
            raise DimensionError(f"latents {seq.latents.shape[1:]} do not match model (K={k}, d={d})")
        if cfg.fsq.dropout_p == 0.0:
            raise UsageError("model was trained without FSQ-dropout and cannot decode continuous latents")
    else:
        if (seq.tokens.shape[1], seq.n, seq.d) != (k, cfg.fsq.n, cfg.fsq.d):
            raise DimensionError(
                f"tokens (K={seq.tokens.shape[1]}, n={seq.n}, d={seq.d}) do not match model "
                f"(K={k}, n={cfg.fsq.n}, d={cfg.fsq.d})"
            )
        if cfg.fsq.dropout_p == 1.0:
            raise UsageError("model was trained with quantization always bypassed and cannot decode tokens")


def _upsample(model: CodecModel, levels: np.ndarray) -> list[Tensor]:
    return model.upsample(Tensor(np.asarray(levels, dtype=model.dtype)))


def _finish(model: CodecModel, seq: EncodedSequence, chunks: np.ndarray) -> ComplexSpectrogram:
    cfg = model.cfg
    data = np.concatenate(list(chunks.astype(np.float64)), axis=-1)[..., : seq.meta.n_frames]
    return ComplexSpectrogram(data, cfg.signal.window, cfg.signal.hop, transformed=True)


def decode_autoregressive(model: CodecModel, seq: EncodedSequence, denoise_steps: int = 1,
                          rng: np.random.Generator | int | None = 0,
                          meter: ActivationMeter | None = None) -> DecodeResult:
    """Decode chunk ``t`` with the decoded chunk ``t - 1`` as clean left context.

    The first chunk sees an all-zero left context with zeroed summary
    embeddings. Each chunk starts from noise at ``sigma_max`` and runs
    ``denoise_steps`` denoise / re-noise rounds on a geometric ladder.
    """
    check_payload(model, seq)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cfg, m = model.cfg, model.cfg.model
    ladder = ar_sigma_ladder(denoise_steps, m.sigma_max, m.sigma_min)
    shape = (1,) + model.chunk_shape
    dt = model.dtype
    out = np.zeros((seq.n_chunks,) + model.chunk_shape, dtype=dt)
    calls = 0
    with no_grad():
        prev = np.zeros(shape, dtype=dt)
        cc_prev = _upsample(model, np.zeros((1, m.k_summary, m.d_lat)))
        for t in range(seq.n_chunks):
            cc_t = _upsample(model, seq.levels(cfg, slice(t, t + 1)))
            x0 = None
            for s, sigma in enumerate(ladder):
                eps = rng.standard_normal(shape).astype(dt)
                if s == 0:
                    x = (sigma * eps).astype(dt)
                else:
                    x = x0 + np.sqrt(sigma**2 - m.sigma_min**2).astype(dt) * eps
                with _maybe(meter):
                    _, right = model.decode_denoise(prev, x, m.sigma_min, sigma, cc_prev, cc_t)
                calls += 1
                x0 = right.data
            out[t] = x0[0]
            prev, cc_prev = x0, cc_t
    spec = _finish(model, seq, out)
    wave = synthesize(spec, cfg.signal, seq.meta.n_samples)
    return DecodeResult(wave, spec, calls, list(meter.peaks) if meter else [])


def decode_parallel(model: CodecModel, seq: EncodedSequence, s_steps: int = 4,
                    rng: np.random.Generator | int | None = 0, sigma_end: float | None = None,
                    meter: ActivationMeter | None = None) -> DecodeResult:
    """Shifting-pair parallel decoding.

    Step 1 denoises every pair from pure noise at ``sigma_max``. Later steps
    add fresh noise at the conditioning level to the current estimates,
    re-pair with a shift of one chunk and denoise again. All pairs of a step
    go through the decoder as one batch; PAD slots carry zeroed summary
    embeddings and their outputs are dropped.
    """
    if s_steps < 1:
        raise ConfigError(f"s_steps must be >= 1, got {s_steps}")
    check_payload(model, seq)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cfg, m = model.cfg, model.cfg.model
    sigma_end = m.sigma_min if sigma_end is None else sigma_end
    sigmas = cond_noise_schedule(s_steps, m.sigma_max, sigma_end, m.sigma_min)
    schedule = pair_schedule(seq.n_chunks, s_steps)
    t_n = seq.n_chunks
    dt = model.dtype
    est = np.zeros((t_n,) + model.chunk_shape, dtype=dt)
    calls = 0
    with no_grad():
        levels = np.concatenate([seq.levels(cfg), np.zeros((1, m.k_summary, m.d_lat))])  # last row is PAD
        for s, (sigma, pairs) in enumerate(zip(sigmas, schedule.steps)):
            eps = rng.standard_normal((t_n + 1,) + model.chunk_shape).astype(dt)
            noisy = (sigma * eps).astype(dt)
            if s > 0:
                noisy[:t_n] += est
            left = np.array([i if i != PAD else t_n for i, _ in pairs])
            right = np.array([j if j != PAD else t_n for _, j in pairs])
            cc = _upsample(model, levels[np.concatenate([left, right])])
            b = len(pairs)
            with _maybe(meter):
                out_l, out_r = model.decode_denoise(
                    noisy[left], noisy[right], sigma, sigma, [c[:b] for c in cc], [c[b:] for c in cc]
                )
            calls += b
            for k, (i, j) in enumerate(pairs):
                if i != PAD:
                    est[i] = out_l.data[k]
                if j != PAD:
                    est[j] = out_r.data[k]
    spec = _finish(model, seq, est)
    wave = synthesize(spec, cfg.signal, seq.meta.n_samples)
    return DecodeResult(wave, spec, calls, list(meter.peaks) if meter else [])


def decode(model: CodecModel, seq: EncodedSequence, strategy: str = "parallel", steps: int = 4,
           rng: np.random.Generator | int | None = 0, meter: ActivationMeter | None = None) -> DecodeResult:
    if strategy == "ar":
        return decode_autoregressive(model, seq, steps, rng, meter)
    if strategy == "parallel":
        return decode_parallel(model, seq, steps, rng, meter=meter)
    raise ConfigError(f"unknown decode strategy {strategy!r}")


def decode_latents_direct(model: CodecModel, seq: EncodedSequence, s_steps: int = 4,
                          strategy: str = "parallel", rng: np.random.Generator | int | None = 0) -> DecodeResult:
    """Decode continuous ``tanh`` latents without rounding them to the FSQ grid."""
    if seq.mode != "continuous":
        raise UsageError("direct latent decoding needs a continuous payload")
    return decode(model, seq, strategy, s_steps, rng)
