"""Encoder, upsampler and consistency decoder.

Spectrogram chunks enter and leave as ``[batch, C, F, T]``. Inside the
networks, feature maps are channels-last ``[batch, F, T, C]`` and
transformers see ``[batch, tokens, hidden]``. At the
coarsest level, frequency is folded into the feature axis so each time
frame becomes one token.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ConvSame, Initializer, LayerNorm, Linear, Module, Tensor, ops
from ..config import CodecConfig
from ..exceptions import DimensionError, SymmetryError
from .edm import EdmCoefficients, edm_wrap, sigma_embed
from .layers import Depatchifier, Patchifier, TransformerBlock, level_shapes


def chunked_causal_mask(t_left: int, t_right: int, dtype=np.float64) -> np.ndarray:
    """Additive mask for a left/right token pair: left rows never see right columns."""
    n = t_left + t_right
    mask = np.zeros((n, n), dtype=dtype)
    mask[:t_left, t_left:] = -np.inf
    return mask


def _to_tokens(h: Tensor) -> Tensor:
    b, f, t, c = h.shape
    return h.transpose(0, 2, 1, 3).reshape(b, t, f * c)


def _from_tokens(tokens: Tensor, f: int, c: int) -> Tensor:
    b, t, _ = tokens.shape
    return tokens.reshape(b, t, f, c).transpose(0, 2, 1, 3)


def _channels_last(x: Tensor) -> Tensor:
    return x.transpose(0, 2, 3, 1)


class Encoder(Module):
    def __init__(self, init: Initializer, cfg: CodecConfig):
        m = cfg.model
        self.coarse = level_shapes(m.conv_channels, cfg.signal.freq_bins, cfg.signal.t_chunk)[-1]
        f3, t3, c3 = self.coarse
        self.patch = Patchifier(init, cfg.signal.spec_channels, m.conv_channels, m.conv_layers)
        self.proj_in = Linear(init, c3 * f3, m.hidden_dim)
        self.summary = init.normal((m.k_summary, m.hidden_dim), 1.0)
        self.pos = init.normal((t3 + m.k_summary, m.hidden_dim), 0.02)
        self.blocks = [TransformerBlock(init, m.hidden_dim, m.n_heads, m.mlp_mult) for _ in range(m.transformer_blocks)]
        self.norm_out = LayerNorm(init, m.hidden_dim)
        self.proj_out = Linear(init, m.hidden_dim, m.d_lat)

    def forward(self, x: Tensor) -> Tensor:
        """Spectrogram chunks ``[B, C, F, T]`` -> pre-activation latents ``[B, K, d_lat]``."""
        h, _ = self.patch(_channels_last(x))
        tokens = self.proj_in(_to_tokens(h))
        b, t3, d = tokens.shape
        summary = ops.broadcast_to(self.summary, (b,) + self.summary.shape)
        tokens = ops.concat([tokens, summary], axis=1) + self.pos
        for block in self.blocks:
            tokens = block(tokens)
        return self.proj_out(self.norm_out(tokens[:, t3:]))


class Upsampler(Module):
    def __init__(self, init: Initializer, cfg: CodecConfig):
        m = cfg.model
        self.coarse = level_shapes(m.conv_channels, cfg.signal.freq_bins, cfg.signal.t_chunk)[-1]
        f3, t3, c3 = self.coarse
        self.k = m.k_summary
        self.proj_in = Linear(init, m.d_lat, m.hidden_dim)
        self.mask_emb = init.zeros((t3, m.hidden_dim))
        self.pos = init.normal((m.k_summary + t3, m.hidden_dim), 0.02)
        self.blocks = [TransformerBlock(init, m.hidden_dim, m.n_heads, m.mlp_mult) for _ in range(m.transformer_blocks)]
        self.norm_out = LayerNorm(init, m.hidden_dim)
        self.proj_out = Linear(init, m.hidden_dim, c3 * f3)
        self.depatch = Depatchifier(init, m.conv_channels, m.conv_layers)

    def forward(self, lat: Tensor) -> list[Tensor]:
        """Latents ``[B, K, d_lat]`` -> cross-connection maps ``[B, F_i, T_i, C_i]``, finest first."""
        f3, t3, c3 = self.coarse
        b = lat.shape[0]
        tokens = ops.concat([self.proj_in(lat), ops.broadcast_to(self.mask_emb, (b,) + self.mask_emb.shape)], axis=1)
        tokens = tokens + self.pos
        for block in self.blocks:
            tokens = block(tokens)
        audio = self.proj_out(self.norm_out(tokens[:, self.k :]))
        return self.depatch(_from_tokens(audio, f3, c3))


class Decoder(Module):
    def __init__(self, init: Initializer, cfg: CodecConfig):
        m = cfg.model
        self.levels = level_shapes(m.conv_channels, cfg.signal.freq_bins, cfg.signal.t_chunk)
        self.coarse = self.levels[-1]
        f3, t3, c3 = self.coarse
        self.sigma_channels = m.sigma_embed_channels
        self.patch = Patchifier(init, cfg.signal.spec_channels, m.conv_channels, m.conv_layers)
        self.proj_in = Linear(init, c3 * f3, m.hidden_dim)
        self.pos = init.normal((2 * t3, m.hidden_dim), 0.02)
        self.sigma_fc1 = Linear(init, m.sigma_embed_channels, m.hidden_dim)
        self.sigma_fc2 = Linear(init, m.hidden_dim, m.hidden_dim)
        self.blocks = [
            TransformerBlock(init, m.hidden_dim, m.n_heads, m.mlp_mult, cond_dim=m.hidden_dim)
            for _ in range(m.transformer_blocks)
        ]
        self.norm_out = LayerNorm(init, m.hidden_dim)
        self.proj_out = Linear(init, m.hidden_dim, c3 * f3)
        self.depatch = Depatchifier(init, m.conv_channels, m.conv_layers)
        # noise-level scale/shift for every de-patchifier level, identity at init
        self.film = [Linear(init, m.hidden_dim, 2 * c, zero=True) for c in m.conv_channels]
        self.head = ConvSame(init, m.conv_channels[0], cfg.signal.spec_channels, 3, zero=True)

    def forward(self, x_in: Tensor, sigma: np.ndarray, cross: list[Tensor]) -> Tensor:
        """Raw network output ``F`` for a stacked batch ``[2B, ...]`` (left items, then right items)."""
        f3, t3, c3 = self.coarse
        h, skips = self.patch(_channels_last(x_in), cross)
        tokens = self.proj_in(_to_tokens(h))  # [2B, t3, d]
        two_b, _, d = tokens.shape
        b = two_b // 2
        tokens = tokens.reshape(2, b, t3, d).transpose(1, 0, 2, 3).reshape(b, 2 * t3, d) + self.pos
        emb = Tensor(sigma_embed(sigma, self.sigma_channels, tokens.dtype))  # [2B, E]
        cond_items = self.sigma_fc2(ops.silu(self.sigma_fc1(emb)))  # [2B, d]
        cond = ops.broadcast_to(cond_items.reshape(2, b, 1, d), (2, b, t3, d))
        cond = cond.transpose(1, 0, 2, 3).reshape(b, 2 * t3, d)
        mask = chunked_causal_mask(t3, t3, tokens.dtype)
        for block in self.blocks:
            tokens = block(tokens, mask, cond)
        out = self.proj_out(self.norm_out(tokens))
        out = out.reshape(b, 2, t3, c3 * f3).transpose(1, 0, 2, 3).reshape(two_b, t3, c3 * f3)
        cond2 = ops.silu(cond_items)
        film = []
        for lin, (_, _, c) in zip(self.film, self.levels):
            mod = lin(cond2).reshape(two_b, 1, 1, 2 * c)
            film.append((mod[..., :c], mod[..., c:]))
        feats = self.depatch(_from_tokens(out, f3, c3), skips, film)
        return self.head(feats[0]).transpose(0, 3, 1, 2)


class CodecModel(Module):
    """The three networks plus the EDM coefficients.

    Args:
        cfg: Validated configuration (signal and model sections are used).
        init: Weight initializer; its dtype fixes the model precision.
    """

    def __init__(self, cfg: CodecConfig, init: Initializer | None = None):
        cfg.validate()
        init = init or Initializer(cfg.train.seed)
        self.cfg = cfg
        m = cfg.model
        self.coeffs = EdmCoefficients(m.sigma_data, m.sigma_min, m.sigma_max)
        self.chunk_shape = (cfg.signal.spec_channels, cfg.signal.freq_bins, cfg.signal.t_chunk)
        self.levels = level_shapes(m.conv_channels, cfg.signal.freq_bins, cfg.signal.t_chunk)
        self.encoder = Encoder(init, cfg)
        self.upsampler = Upsampler(init, cfg)
        self.decoder = Decoder(init, cfg)
        self._check_symmetry()

    @property
    def dtype(self):
        return self.encoder.proj_in.weight.dtype

    def _check_symmetry(self) -> None:
        # Propagate shapes through every down/up stage and compare per level.
        for i, (down, up) in enumerate(zip(self.decoder.patch.downs, self.upsampler.depatch.ups)):
            f, t, c = self.levels[i]
            for conv in down:
                sf, st = conv.stride
                f, t, c = f // sf, t // st, conv.weight.shape[1]
            if (f, t, c) != self.levels[i + 1]:
                raise SymmetryError(f"patchifier level {i + 1} has shape {(f, t, c)}, expected {self.levels[i + 1]}")
            uf, ut, uc = self.levels[i + 1]
            for conv in up:
                sf, st = conv.stride
                uf, ut, uc = uf * sf, ut * st, conv.c_out
            if (uf, ut, uc) != self.levels[i]:
                raise SymmetryError(
                    f"de-patchifier level {i} has shape {(uf, ut, uc)}, mirror of patchifier {self.levels[i]}"
                )

    def check_chunks(self, x: np.ndarray | Tensor) -> None:
        if tuple(x.shape[1:]) != self.chunk_shape:
            raise DimensionError(f"chunk shape {tuple(x.shape[1:])} does not match config {self.chunk_shape}")

    def check_cross(self, cross: list[Tensor], batch: int) -> None:
        if len(cross) != len(self.levels):
            raise SymmetryError(f"expected {len(self.levels)} cross-connection levels, got {len(cross)}")
        for i, (cc, shape) in enumerate(zip(cross, self.levels)):
            if tuple(cc.shape) != (batch,) + shape:
                raise SymmetryError(f"cross-connection level {i}: shape {cc.shape} != {(batch,) + shape}")

    # the three sub-networks ----------------------------------------------------

    def encode(self, chunks: Tensor) -> Tensor:
        """``[B, C, F, T]`` -> pre-activation ``z [B, K, d_lat]`` (no tanh)."""
        self.check_chunks(chunks)
        return self.encoder(chunks)

    def upsample(self, lat: Tensor) -> list[Tensor]:
        m = self.cfg.model
        if tuple(lat.shape[1:]) != (m.k_summary, m.d_lat):
            raise DimensionError(f"latent shape {tuple(lat.shape[1:])} != {(m.k_summary, m.d_lat)}")
        return self.upsampler(lat)

    def decode_denoise(self, noisy_left, noisy_right, sigma_left, sigma_right,
                       cc_left: list[Tensor], cc_right: list[Tensor]) -> tuple[Tensor, Tensor]:
        """Denoise a batch of chunk pairs; each chunk uses its own noise level."""
        noisy_left = noisy_left if isinstance(noisy_left, Tensor) else Tensor(noisy_left)
        noisy_right = noisy_right if isinstance(noisy_right, Tensor) else Tensor(noisy_right)
        self.check_chunks(noisy_left)
        self.check_chunks(noisy_right)
        b = noisy_left.shape[0]
        if noisy_right.shape[0] != b:
            raise DimensionError(f"left batch {b} != right batch {noisy_right.shape[0]}")
        self.check_cross(cc_left, b)
        self.check_cross(cc_right, b)
        sig_l = np.broadcast_to(np.asarray(sigma_left, dtype=np.float64), (b,))
        sig_r = np.broadcast_to(np.asarray(sigma_right, dtype=np.float64), (b,))
        sigma = self.coeffs.check(np.concatenate([sig_l, sig_r]))
        x = ops.concat([noisy_left, noisy_right], axis=0)
        c_in = self.coeffs.c_in(sigma).astype(x.dtype).reshape(-1, 1, 1, 1)
        cross = [ops.concat([l, r], axis=0) for l, r in zip(cc_left, cc_right)]
        raw = self.decoder(x * c_in, sigma, cross)
        out = edm_wrap(raw, x, sigma, self.coeffs)
        return out[:b], out[b:]

    # parameter accounting ------------------------------------------------------------

    def parameter_breakdown(self) -> dict[str, int]:
        from ..autodiff import PatchDown, PatchUp

        conv = transformer = 0
        for mod in self.modules():
            if isinstance(mod, (ConvSame, PatchDown, PatchUp)):
                conv += mod.weight.data.size + mod.bias.data.size
            elif isinstance(mod, TransformerBlock):
                transformer += mod.num_parameters()
        return {"conv": conv, "transformer": transformer, "total": self.num_parameters()}
