"""AdamW, the warmup+cosine schedule and parameter initialization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, parameter
from .errors import ShapeMismatch


@dataclass
class AdamWState:
    """Moments and step count for a fixed list of parameters."""

    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list, float]:
    """Rescale gradients so their joint L2 norm is at most ``max_norm``.

    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(np.abs(g) ** 2)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        f = max_norm / (total + 1e-12)
        return [g * f for g in grads], total
    return list(grads), total


def adamw_step(state: AdamWState, params: Sequence[Tensor], grads: Sequence[np.ndarray] | None = None,
               lr: float | None = None) -> None:
    """One AdamW update in place.

    The decay is decoupled: p ← p - lr·wd·p - lr·m̂/(√v̂ + ε).
    ``grads`` defaults to each parameter's ``.grad`` (None counts as zero).
    """
    lr = state.lr if lr is None else lr
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeMismatch("optimizer state does not match the parameter list")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_warmup_lr(step: int, total: int, warmup: int, base: float) -> float:
    """Linear ramp from 0 to ``base`` over ``warmup`` steps, then cosine decay to 0."""
    if step < warmup:
        return base * step / warmup
    if total <= warmup:
        return base
    frac = min(1.0, (step - warmup) / (total - warmup))
    return base * 0.5 * (1 + math.cos(math.pi * frac))


def uniform_init(rng: np.random.Generator, fan_in: int, shape, gain: float = 1.0, name=None) -> Tensor:
    """Scaled uniform fan-in initialization U(-g/√fan_in, g/√fan_in)."""
    bound = gain / math.sqrt(max(fan_in, 1))
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)
