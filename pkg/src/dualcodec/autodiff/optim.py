"""Adam-family optimizer with cosine decay, and parameter EMA."""

from __future__ import annotations

import math

import numpy as np

from ..exceptions import DimensionError, NonFiniteError
from .nn import Parameter


def cosine_lr(initial: float, progress: float) -> float:
    """Cosine decay from ``initial`` at progress 0 to 0 at progress 1."""
    progress = min(max(progress, 0.0), 1.0)
    return initial * 0.5 * (1.0 + math.cos(math.pi * progress))


class Adam:
    """Adam with optional RAdam variance rectification.

    Args:
        named_params: ``(name, parameter)`` pairs; names are used in error reports.
        lr: Peak learning rate.
        betas: Moment decay rates.
        total_steps: Length of the cosine schedule; ``None`` keeps ``lr`` constant.
        rectify: Apply the RAdam rectification term.
    """

    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 total_steps: int | None = None, rectify: bool = False):
        self.params: list[tuple[str, Parameter]] = list(named_params)
        self.base_lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.total_steps = total_steps
        self.rectify = rectify
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    @property
    def lr(self) -> float:
        """Learning rate applied by the next step."""
        if self.total_steps is None:
            return self.base_lr
        return cosine_lr(self.base_lr, self.step_count / self.total_steps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient in parameter {name!r}; step aborted")
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.betas
        bias1 = 1.0 - b1**t
        bias2 = 1.0 - b2**t
        rect = None
        if self.rectify:
            rho_inf = 2.0 / (1.0 - b2) - 1.0
            rho_t = rho_inf - 2.0 * t * b2**t / bias2
            if rho_t > 4.0:
                rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if g.shape != p.shape:
                raise DimensionError(f"{name}: grad shape {g.shape} != parameter shape {p.shape}")
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / bias1
            if self.rectify and rect is None:
                update = mhat
            else:
                update = mhat / (np.sqrt(v / bias2) + self.eps)
                if rect is not None:
                    update = rect * update
            p.data = (p.data - lr * update).astype(p.dtype, copy=False)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m/{k}": v for k, v in self.m.items()}
        out.update({f"v/{k}": v for k, v in self.v.items()})
        out["step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name in self.m:
            self.m[name] = np.array(state[f"m/{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(state[f"v/{name}"], dtype=self.v[name].dtype)
        self.step_count = int(state["step"][0])


class Ema:
    """Exponential moving average of parameters: ``shadow = m * shadow + (1 - m) * param``."""

    def __init__(self, named_params, momentum: float = 0.9999):
        self.momentum = momentum
        self.shadow = {name: np.array(p.data, copy=True) for name, p in named_params}

    def update(self, named_params) -> None:
        m = self.momentum
        for name, p in named_params:
            s = self.shadow[name]
            if s.shape != p.shape:
                raise DimensionError(f"{name}: EMA shadow {s.shape} != parameter {p.shape}")
            s *= m
            s += (1.0 - m) * p.data
