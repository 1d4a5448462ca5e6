"""scikit-learn style wrapper around training, encoding and decoding."""

from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .codec import EncodedSequence, SequenceMeta, decode, encode_sequence
from .config import CodecConfig, profile
from .signal import WaveformBuffer, n_samples_for
from .train import load_checkpoint, save_checkpoint, train_loop


def _as_waves(X, cfg: CodecConfig) -> list[WaveformBuffer]:
    if isinstance(X, WaveformBuffer):
        return [X]
    if isinstance(X, np.ndarray):
        arr = X[:, None, :] if X.ndim == 2 else X
        return [WaveformBuffer(a, cfg.signal.sample_rate) for a in arr]
    return [x if isinstance(x, WaveformBuffer) else WaveformBuffer(np.asarray(x), cfg.signal.sample_rate) for x in X]


class ConsistencyCodec(BaseEstimator, TransformerMixin):
    """Audio codec estimator.

    ``fit`` trains on a collection of waveforms, ``transform`` encodes each
    waveform to latents or tokens and ``inverse_transform`` decodes them.

    Parameters
    ----------
    profile : str
        Base configuration profile (``"toy"`` or ``"full"``).
    steps : int or None
        Training steps; ``None`` keeps the profile default.
    mode : str
        ``"continuous"`` (tanh latents) or ``"discrete"`` (FSQ tokens).
    strategy : str
        Decoding strategy, ``"parallel"`` or ``"ar"``.
    decode_steps : int
        Denoising steps used by ``inverse_transform``.
    seed : int
        Seeds training and decoding noise.
    config : CodecConfig or None
        Explicit configuration overriding ``profile``.
    """

    def __init__(self, profile: str = "toy", steps: int | None = None, mode: str = "continuous",
                 strategy: str = "parallel", decode_steps: int = 4, seed: int = 0,
                 config: CodecConfig | None = None):
        self.profile = profile
        self.steps = steps
        self.mode = mode
        self.strategy = strategy
        self.decode_steps = decode_steps
        self.seed = seed
        self.config = config

    def _config(self) -> CodecConfig:
        cfg = copy.deepcopy(self.config) if self.config is not None else profile(self.profile)
        cfg.train.seed = self.seed
        if self.steps is not None:
            cfg.train.steps = self.steps
        return cfg.validate()

    def fit(self, X, y=None, **fit_params):
        cfg = self._config()
        result = train_loop(cfg, _as_waves(X, cfg), **fit_params)
        self.cfg_ = result.model.cfg
        self.ema_ = result.ema
        self.model_ = copy.deepcopy(result.model)
        self.model_.load_state_dict(result.ema.shadow)
        self.model_.eval()
        self.loss_curve_ = result.losses
        return self

    def transform(self, X) -> list[EncodedSequence]:
        check_is_fitted(self, "model_")
        return [encode_sequence(self.model_, w, self.mode) for w in _as_waves(X, self.cfg_)]

    def inverse_transform(self, Z) -> list[WaveformBuffer]:
        """Decode encoded sequences; bare ``[T, K, d]`` latent arrays decode at full chunk length."""
        check_is_fitted(self, "model_")
        out = []
        rng = np.random.default_rng(self.seed)
        for z in Z:
            if not isinstance(z, EncodedSequence):
                z = np.asarray(z, dtype=np.float64)
                s = self.cfg_.signal
                n = n_samples_for(z.shape[0] * s.t_chunk, s.window, s.hop)
                z = EncodedSequence("continuous", SequenceMeta.from_config(self.cfg_, n), latents=z)
            out.append(decode(self.model_, z, self.strategy, self.decode_steps, rng).wave)
        return out

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.ema_, self.cfg_.train.steps)

    @classmethod
    def from_checkpoint(cls, path: str | Path, **params) -> ConsistencyCodec:
        ckpt = load_checkpoint(path)
        est = cls(profile=ckpt.cfg.profile, config=ckpt.cfg, seed=ckpt.cfg.train.seed, **params)
        est.cfg_ = ckpt.cfg
        est.model_ = ckpt.model(use_ema=True)
        est.ema_ = None
        est.loss_curve_ = None
        return est
