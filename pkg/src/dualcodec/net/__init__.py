"""Encoder, upsampler and consistency decoder networks."""

from .edm import EdmCoefficients, edm_wrap, sigma_embed
from .model import CodecModel, Decoder, Encoder, Upsampler, chunked_causal_mask

__all__ = [
    "CodecModel",
    "Decoder",
    "EdmCoefficients",
    "Encoder",
    "Upsampler",
    "chunked_causal_mask",
    "edm_wrap",
    "sigma_embed",
]
