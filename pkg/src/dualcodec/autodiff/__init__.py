"""Minimal reverse-mode automatic differentiation on numpy."""

from . import ops
from .checkpoint import load_arrays, save_arrays
from .nn import (
    Conv2d,
    ConvSame,
    ConvTranspose2d,
    Initializer,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    PatchDown,
    PatchUp,
)
from .optim import Adam, Ema, cosine_lr
from .tensor import Tensor, backward, is_grad_enabled, no_grad

__all__ = [
    "Adam",
    "Conv2d",
    "ConvSame",
    "ConvTranspose2d",
    "Ema",
    "Initializer",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "PatchDown",
    "PatchUp",
    "Tensor",
    "backward",
    "cosine_lr",
    "is_grad_enabled",
    "load_arrays",
    "no_grad",
    "ops",
    "save_arrays",
]
