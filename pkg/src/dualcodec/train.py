"""Consistency training: noise sampling, the Δσ schedule, the loss and the loop.

One training item is a pair of temporally consecutive spectrogram chunks.
Both chunks get independent noise levels ``sigma_l, sigma_r`` and noise
draws ``eps_l, eps_r``. The student sees ``x + (sigma + Δσ) * eps`` and the
teacher (same weights, no gradient) sees ``x + sigma * eps``; the loss is the
pseudo-Huber distance between their outputs, weighted by ``1 / Δσ``.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Initializer, Tensor, no_grad, ops
from .autodiff.checkpoint import decode_text, encode_text
from .config import CodecConfig
from .exceptions import DataError, DimensionError, NonFiniteError, StateError
from .fsq import fsq_dropout_batch
from .net import CodecModel
from .signal import WaveformBuffer, analyze, n_samples_for

log = logging.getLogger(__name__)

LOSS_CSV_FIELDS = ("step", "raw_loss", "smoothed_loss", "lr", "delta_sigma")


# noise levels -----------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSampler:
    """Log-normal noise levels clamped to ``[sigma_min, sigma_max]``."""

    p_mean: float = -1.0
    p_std: float = 1.4
    sigma_min: float = 0.002
    sigma_max: float = 80.0

    @classmethod
    def from_config(cls, cfg: CodecConfig) -> NoiseSampler:
        return cls(cfg.train.p_mean, cfg.train.p_std, cfg.model.sigma_min, cfg.model.sigma_max)


def sample_sigma(rng: np.random.Generator, sampler: NoiseSampler, size=None):
    """Draw ``sigma`` with ``ln sigma ~ N(p_mean, p_std^2)``, then clamp."""
    log_sigma = rng.normal(sampler.p_mean, sampler.p_std, size=size)
    return np.clip(np.exp(log_sigma), sampler.sigma_min, sampler.sigma_max)


@dataclass(frozen=True)
class DeltaSigmaSchedule:
    delta0: float = 0.1
    e_k: float = 2.0
    total_steps: int = 1

    @classmethod
    def from_config(cls, cfg: CodecConfig) -> DeltaSigmaSchedule:
        return cls(cfg.train.delta0, cfg.train.e_k, cfg.train.steps)

    def progress(self, step: int) -> float:
        return step / max(self.total_steps - 1, 1)


def delta_sigma(u: float, sched: DeltaSigmaSchedule) -> float:
    """``delta0 ** (1 + (e_k - 1) * u)``: ``delta0`` at the start, ``delta0 ** e_k`` at the end."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {u}")
    return sched.delta0 ** (1.0 + (sched.e_k - 1.0) * u)


def pseudo_huber(a, b, c: float) -> Tensor:
    """``sqrt(||a - b||^2 + c^2) - c`` over all elements."""
    if c <= 0:
        raise ValueError(f"pseudo-Huber scale must be positive, got {c}")
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    if tuple(np.shape(b)) != a.shape:
        raise DimensionError(f"pseudo_huber: shapes {a.shape} and {np.shape(b)} differ")
    return ops.pseudo_huber(a, b, c)


def huber_scale(cfg: CodecConfig) -> float:
    """``0.00054 * sqrt(dim)`` where ``dim`` counts the values of one chunk pair."""
    s = cfg.signal
    dim = 2 * s.spec_channels * s.freq_bins * s.t_chunk
    return cfg.train.huber_factor * math.sqrt(dim)


# batches ------------------------------------------------------------------------


@dataclass
class TrainBatch:
    """Consecutive transformed chunk pairs ``[B, 2, C, F, T_chunk]``."""

    pairs: np.ndarray

    def __post_init__(self):
        if self.pairs.ndim != 5 or self.pairs.shape[1] != 2:
            raise DimensionError(f"expected [B, 2, C, F, T] chunk pairs, got {self.pairs.shape}")

    @property
    def left(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def right(self) -> np.ndarray:
        return self.pairs[:, 1]

    def __len__(self) -> int:
        return self.pairs.shape[0]


def random_mix(waves: np.ndarray, rng: np.random.Generator, p: float = 0.5) -> np.ndarray:
    """Waveform-domain mixing ``[B, ch, n]``: with probability ``p`` add another random item.

    Partners are drawn from the unmixed batch; sums are not renormalized.
    """
    b = waves.shape[0]
    if b < 2:
        raise ValueError("random mixing needs a batch of at least two items")
    mix = rng.random(b) < p
    partner = rng.integers(0, b - 1, size=b)
    partner = partner + (partner >= np.arange(b))  # uniform over the other items
    out = waves.copy()
    out[mix] += waves[partner[mix]]
    return out


def crop_length(cfg: CodecConfig) -> int:
    """Samples that yield exactly two chunks of frames."""
    return n_samples_for(2 * cfg.signal.t_chunk, cfg.signal.window, cfg.signal.hop)


def waves_to_batch(waves: np.ndarray, cfg: CodecConfig, dtype=np.float32) -> TrainBatch:
    t = cfg.signal.t_chunk
    specs = [analyze(WaveformBuffer(w, cfg.signal.sample_rate), cfg.signal).data for w in waves]
    data = np.stack(specs)[..., : 2 * t]
    b, c, f, _ = data.shape
    pairs = data.reshape(b, c, f, 2, t).transpose(0, 3, 1, 2, 4)
    return TrainBatch(np.ascontiguousarray(pairs, dtype=dtype))


class BatchStream:
    """Endless deterministic stream of training batches.

    Files are visited in a shuffled order that is redrawn each epoch (so the
    dataset wraps around); each item is a random crop, zero-padded when the
    file is shorter than a crop.
    """

    def __init__(self, dataset: list[WaveformBuffer], cfg: CodecConfig, rng: np.random.Generator):
        if not dataset:
            raise DataError("training dataset is empty")
        for w in dataset:
            if w.channels != cfg.signal.channels or w.sample_rate != cfg.signal.sample_rate:
                raise DataError(
                    f"dataset item has {w.channels} ch @ {w.sample_rate} Hz; config expects "
                    f"{cfg.signal.channels} ch @ {cfg.signal.sample_rate} Hz"
                )
        self.dataset = dataset
        self.cfg = cfg
        self.rng = rng
        self.length = crop_length(cfg)
        self._order: list[int] = []

    def _next_index(self) -> int:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.dataset)))
        return int(self._order.pop())

    def _crop(self, wave: WaveformBuffer) -> np.ndarray:
        n = wave.n_samples
        if n <= self.length:
            return np.pad(wave.samples, ((0, 0), (0, self.length - n)))
        start = int(self.rng.integers(0, n - self.length + 1))
        return wave.samples[:, start : start + self.length]

    def next(self) -> TrainBatch:
        cfg = self.cfg
        waves = np.stack([self._crop(self.dataset[self._next_index()]) for _ in range(cfg.train.batch_size)])
        if cfg.train.batch_size >= 2 and cfg.train.mix_p > 0:
            waves = random_mix(waves, self.rng, cfg.train.mix_p)
        return waves_to_batch(waves, cfg)


class _Prefetcher:
    """Prepares batches on a worker thread through a bounded queue."""

    def __init__(self, stream: BatchStream, depth: int):
        self.stream = stream
        self.queue: queue.Queue = queue.Queue(maxsize=depth)
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def _run(self) -> None:
        while not self.stop.is_set():
            try:
                item = self.stream.next()
            except Exception as exc:  # surfaced to the consumer
                item = exc
            while not self.stop.is_set():
                try:
                    self.queue.put(item, timeout=0.1)
                    break
                except queue.Full:
                    continue
            if isinstance(item, Exception):
                return

    def next(self) -> TrainBatch:
        item = self.queue.get()
        if isinstance(item, Exception):
            raise item
        return item

    def close(self) -> None:
        self.stop.set()
        self.thread.join(timeout=5)


# loss ---------------------------------------------------------------------------------


@dataclass
class LossInfo:
    """Draws behind one loss evaluation, kept for diagnostics and tests."""

    delta_sigma: float
    sigma_left: np.ndarray
    sigma_right: np.ndarray
    eps_left: np.ndarray
    eps_right: np.ndarray
    bypass: np.ndarray
    student: tuple[Tensor, Tensor]
    teacher: tuple[Tensor, Tensor]


def ct_loss(batch: TrainBatch, model: CodecModel, u: float, rng: np.random.Generator,
            return_info: bool = False):
    """Consistency-training loss for one batch at training progress ``u``.

    One Δσ is shared by all items; ``sigma`` is capped at ``sigma_max - Δσ``
    so the student's noise level stays in range.
    """
    if not model.training:
        raise StateError("ct_loss needs the model in training mode")
    cfg = model.cfg
    dtype = model.dtype
    x = batch.pairs.astype(dtype, copy=False)
    b = x.shape[0]
    xl, xr = x[:, 0], x[:, 1]
    dsig = delta_sigma(u, DeltaSigmaSchedule.from_config(cfg))
    sampler = NoiseSampler.from_config(cfg)
    sig_l = np.minimum(sample_sigma(rng, sampler, b), cfg.model.sigma_max - dsig)
    sig_r = np.minimum(sample_sigma(rng, sampler, b), cfg.model.sigma_max - dsig)
    eps_l = rng.standard_normal(xl.shape).astype(dtype)
    eps_r = rng.standard_normal(xr.shape).astype(dtype)

    z = model.encode(Tensor(np.concatenate([xl, xr])))
    lat, bypass = fsq_dropout_batch(z, cfg.fsq, rng)
    cross = model.upsample(lat)
    cc_l = [c[:b] for c in cross]
    cc_r = [c[b:] for c in cross]

    def noisy(x0, eps, sigma):
        return x0 + sigma.astype(dtype).reshape(-1, 1, 1, 1) * eps

    s_l, s_r = sig_l + dsig, sig_r + dsig
    student = model.decode_denoise(noisy(xl, eps_l, s_l), noisy(xr, eps_r, s_r), s_l, s_r, cc_l, cc_r)
    with no_grad():
        teacher = model.decode_denoise(
            noisy(xl, eps_l, sig_l), noisy(xr, eps_r, sig_r), sig_l, sig_r,
            [c.detach() for c in cc_l], [c.detach() for c in cc_r],
        )
    out_s = ops.concat([student[0].reshape(b, -1), student[1].reshape(b, -1)], axis=1)
    out_t = np.concatenate([teacher[0].data.reshape(b, -1), teacher[1].data.reshape(b, -1)], axis=1)
    dist = ops.pseudo_huber(out_s, out_t, huber_scale(cfg), axis=1)
    loss = dist.mean() * (1.0 / dsig)
    if not np.isfinite(loss.data):
        raise NonFiniteError(
            f"non-finite loss; delta_sigma={dsig:.6g}, sigma_left={np.array2string(sig_l, precision=4)}, "
            f"sigma_right={np.array2string(sig_r, precision=4)}"
        )
    if return_info:
        return loss, LossInfo(dsig, sig_l, sig_r, eps_l, eps_r, bypass, student, teacher)
    return loss


# checkpoints ------------------------------------------------------------------------


@dataclass
class Checkpoint:
    cfg: CodecConfig
    raw: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    step: int

    def model(self, use_ema: bool = True) -> CodecModel:
        """Rebuild the network with either the EMA or the raw weights."""
        model = CodecModel(self.cfg, Initializer(0, materialize=False))
        model.load_state_dict(self.ema if use_ema and self.ema else self.raw)
        return model.eval()


def save_checkpoint(path: str | Path, model: CodecModel, ema: ad.Ema | None, step: int) -> None:
    arrays = {f"raw/{k}": v for k, v in model.state_dict().items()}
    if ema is not None:
        arrays.update({f"ema/{k}": v for k, v in ema.shadow.items()})
    arrays["meta/config"] = encode_text(model.cfg.to_json())
    arrays["meta/step"] = np.array([step], dtype=np.float32)
    ad.save_arrays(path, arrays)


def load_checkpoint(path: str | Path) -> Checkpoint:
    arrays = ad.load_arrays(path)
    if "meta/config" not in arrays:
        raise DataError(f"{path}: checkpoint has no embedded config")
    cfg = CodecConfig.from_json(decode_text(arrays["meta/config"]))
    raw = {k[4:]: v for k, v in arrays.items() if k.startswith("raw/")}
    ema = {k[4:]: v for k, v in arrays.items() if k.startswith("ema/")}
    step = int(arrays.get("meta/step", np.zeros(1))[0])
    return Checkpoint(cfg, raw, ema, step)


# loop -----------------------------------------------------------------------------------


@dataclass
class LossRecord:
    step: int
    raw_loss: float
    smoothed_loss: float
    lr: float
    delta_sigma: float


@dataclass
class TrainResult:
    model: CodecModel
    ema: ad.Ema
    records: list[LossRecord] = field(default_factory=list)
    checkpoint: Path | None = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.raw_loss for r in self.records])


def smoothing_ratio(losses: np.ndarray, head: int = 100, beta: float = 0.98) -> float:
    """Debiased exponential average of the loss at the end over the mean of the first ``head`` steps."""
    losses = np.asarray(losses, dtype=np.float64)
    s = 0.0
    for x in losses:
        s = beta * s + (1.0 - beta) * x
    end = s / (1.0 - beta ** len(losses))
    return float(end / losses[:head].mean())


def _append_csv(path: Path, record: LossRecord) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as f:
        writer = csv.writer(f)
        if new:
            writer.writerow(LOSS_CSV_FIELDS)
        writer.writerow([record.step, repr(record.raw_loss), repr(record.smoothed_loss),
                         repr(record.lr), repr(record.delta_sigma)])


def train_loop(cfg: CodecConfig, dataset: list[WaveformBuffer], steps: int | None = None, *,
               loss_csv: str | Path | None = None, checkpoint: str | Path | None = None,
               prefetch: int = 2, callback: Callable[[LossRecord], None] | None = None) -> TrainResult:
    """Train a fresh model.

    Args:
        cfg: Configuration; ``cfg.train.steps`` is replaced by ``steps`` if given.
        dataset: Waveforms matching the signal config. Iteration wraps around.
        steps: Number of optimizer steps.
        loss_csv: Append one row per step (``step, raw_loss, smoothed_loss, lr, delta_sigma``).
        checkpoint: Checkpoint path, written every ``cfg.train.checkpoint_every`` steps and at the end.
        prefetch: Depth of the background batch queue; 0 prepares batches inline.
        callback: Called with every loss record.

    Raises:
        NonFiniteError: The loss or a gradient became NaN or infinite.
    """
    if steps is not None:
        cfg = copy.deepcopy(cfg)
        cfg.train.steps = steps
    cfg.validate()
    tc = cfg.train
    init_seq, data_seq, noise_seq = np.random.SeedSequence(tc.seed).spawn(3)
    model = CodecModel(cfg, Initializer(np.random.default_rng(init_seq)))
    model.train()
    named = list(model.named_parameters())
    opt = ad.Adam(named, lr=tc.lr, betas=tc.betas, total_steps=tc.steps, rectify=tc.radam)
    ema = ad.Ema(named, tc.ema_momentum)
    sched = DeltaSigmaSchedule.from_config(cfg)
    noise_rng = np.random.default_rng(noise_seq)
    stream = BatchStream(dataset, cfg, np.random.default_rng(data_seq))
    source = _Prefetcher(stream, prefetch) if prefetch > 0 else stream
    loss_path = Path(loss_csv) if loss_csv is not None else None
    ckpt_path = Path(checkpoint) if checkpoint is not None else None
    result = TrainResult(model, ema, checkpoint=ckpt_path)
    smooth = 0.0
    try:
        for step in range(tc.steps):
            u = sched.progress(step)
            batch = source.next()
            lr = opt.lr
            loss = ct_loss(batch, model, u, noise_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            ema.update(named)
            value = float(loss.data)
            smooth = tc.smoothing * smooth + (1.0 - tc.smoothing) * value
            record = LossRecord(step, value, smooth / (1.0 - tc.smoothing ** (step + 1)), lr,
                                delta_sigma(u, sched))
            result.records.append(record)
            if loss_path is not None:
                _append_csv(loss_path, record)
            if callback is not None:
                callback(record)
            if ckpt_path is not None and tc.checkpoint_every and (step + 1) % tc.checkpoint_every == 0:
                save_checkpoint(ckpt_path, model, ema, step + 1)
            if step % 100 == 0:
                log.debug("step %d loss %.5g smoothed %.5g", step, value, record.smoothed_loss)
    finally:
        if isinstance(source, _Prefetcher):
            source.close()
    if ckpt_path is not None:
        save_checkpoint(ckpt_path, model, ema, tc.steps)
    return result
