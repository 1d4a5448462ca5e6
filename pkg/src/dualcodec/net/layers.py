"""Building blocks: transformer blocks and the convolutional (de)patchifiers.

Feature maps are channels-last, ``[B, F, T, C]``.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ConvSame, Initializer, LayerNorm, Linear, Module, PatchDown, PatchUp, Tensor, ops

# Per-stage (freq, time) strides between consecutive resolution levels. The
# middle stage downsamples frequency by 4 as two stacked freq-only x2 convs.
STAGE_STRIDES: list[list[tuple[int, int]]] = [[(2, 2)], [(2, 1), (2, 1)], [(2, 2)]]


def level_shapes(c_levels: list[int], freq: int, time: int) -> list[tuple[int, int, int]]:
    """``(F, T, channels)`` of the feature map at each resolution level."""
    shapes = [(freq, time, c_levels[0])]
    for i, stage in enumerate(STAGE_STRIDES):
        for sf, st in stage:
            freq //= sf
            time //= st
        shapes.append((freq, time, c_levels[i + 1]))
    return shapes


class ConvLayer(Module):
    """Residual ``x + conv(gelu(x))`` at constant resolution."""

    def __init__(self, init: Initializer, channels: int):
        self.conv = ConvSame(init, channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv(ops.gelu(x))


class Patchifier(Module):
    """Strided conv stack from a spectrogram grid to the coarsest level.

    ``forward`` returns the coarsest map and the feature map recorded at
    every level. ``cross`` maps are added on entry to each level.
    """

    def __init__(self, init: Initializer, c_in: int, channels: list[int], layers: list[int]):
        self.stem = ConvSame(init, c_in, channels[0], 3)
        self.levels = [[ConvLayer(init, channels[i]) for _ in range(layers[i])] for i in range(4)]
        self.downs = []
        for i, stage in enumerate(STAGE_STRIDES):
            convs = []
            c_prev = channels[i]
            for j, stride in enumerate(stage):
                c_next = channels[i + 1] if j == len(stage) - 1 else channels[i]
                convs.append(PatchDown(init, c_prev, c_next, stride))
                c_prev = c_next
            self.downs.append(convs)

    def forward(self, x: Tensor, cross: list[Tensor] | None = None) -> tuple[Tensor, list[Tensor]]:
        h = self.stem(x)
        feats = []
        for i in range(4):
            if i > 0:
                for conv in self.downs[i - 1]:
                    h = conv(h)
            if cross is not None:
                h = h + cross[i]
            for layer in self.levels[i]:
                h = layer(h)
            feats.append(h)
        return h, feats


class Depatchifier(Module):
    """Upsampling mirror of :class:`Patchifier`.

    Returns the per-level feature maps (index 0 = finest) in the same shapes
    the patchifier records. ``skips`` are added on entry to each level.
    """

    def __init__(self, init: Initializer, channels: list[int], layers: list[int]):
        self.levels = [[ConvLayer(init, channels[i]) for _ in range(layers[i])] for i in range(4)]
        self.ups = []
        for i, stage in enumerate(STAGE_STRIDES):
            convs = []
            c_prev = channels[i + 1]
            for j, stride in enumerate(reversed(stage)):
                c_next = channels[i] if j == len(stage) - 1 else channels[i + 1]
                convs.append(PatchUp(init, c_prev, c_next, stride))
                c_prev = c_next
            self.ups.append(convs)

    def forward(self, h: Tensor, skips: list[Tensor] | None = None,
                film: list[tuple[Tensor, Tensor]] | None = None) -> list[Tensor]:
        """``film[i]`` is an optional ``(scale, shift)`` pair applied as ``h * (1 + scale) + shift``."""
        feats: list[Tensor] = [None] * 4  # type: ignore[list-item]
        for i in range(3, -1, -1):
            if i < 3:
                for conv in self.ups[i]:
                    h = conv(h)
            if skips is not None:
                h = h + skips[i]
            if film is not None:
                scale, shift = film[i]
                h = h * (scale + 1.0) + shift
            for layer in self.levels[i]:
                h = layer(h)
            feats[i] = h
        return feats


class Attention(Module):
    def __init__(self, init: Initializer, dim: int, n_heads: int):
        self.n_heads = n_heads
        self.qkv = Linear(init, dim, 3 * dim)
        self.proj = Linear(init, dim, dim)

    def forward(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, n, d = x.shape
        h = self.n_heads
        qkv = self.qkv(x).reshape(b, n, 3, h, d // h).transpose(2, 0, 3, 1, 4)
        out = ops.scaled_dot_attention(qkv[0], qkv[1], qkv[2], mask)
        return self.proj(out.transpose(0, 2, 1, 3).reshape(b, n, d))


class Mlp(Module):
    def __init__(self, init: Initializer, dim: int, mult: int):
        self.fc1 = Linear(init, dim, dim * mult)
        self.fc2 = Linear(init, dim * mult, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class TransformerBlock(Module):
    """Pre-norm block; with ``cond_dim`` it uses per-token adaptive scale/shift/gate."""

    def __init__(self, init: Initializer, dim: int, n_heads: int, mlp_mult: int, cond_dim: int | None = None):
        conditioned = cond_dim is not None
        self.norm1 = LayerNorm(init, dim, affine=not conditioned)
        self.attn = Attention(init, dim, n_heads)
        self.norm2 = LayerNorm(init, dim, affine=not conditioned)
        self.mlp = Mlp(init, dim, mlp_mult)
        self.modulation = Linear(init, cond_dim, 6 * dim, zero=True) if conditioned else None

    def forward(self, x: Tensor, mask: np.ndarray | None = None, cond: Tensor | None = None) -> Tensor:
        if self.modulation is None:
            x = x + self.attn(self.norm1(x), mask)
            return x + self.mlp(self.norm2(x))
        d = x.shape[-1]
        mod = self.modulation(cond)
        shift1, scale1, gate1 = mod[..., :d], mod[..., d : 2 * d], mod[..., 2 * d : 3 * d]
        shift2, scale2, gate2 = mod[..., 3 * d : 4 * d], mod[..., 4 * d : 5 * d], mod[..., 5 * d :]
        h = self.norm1(x) * (scale1 + 1.0) + shift1
        x = x + self.attn(h, mask) * (gate1 + 1.0)
        h = self.norm2(x) * (scale2 + 1.0) + shift2
        return x + self.mlp(h) * (gate2 + 1.0)
