"""AdamW with decoupled weight decay, cosine schedule, global-norm clip."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError


def cosine_lr(step: int, base_lr: float, total_steps: int,
              warmup_fraction: float = 0.0) -> float:
    """Linear warmup to base_lr, then cosine decay to zero at total_steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_fraction * total_steps
    if warmup > 0 and step < warmup:
        return base_lr * step / warmup
    denom = total_steps - warmup
    progress = (step - warmup) / denom if denom > 0 else 1.0
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)  # name -> first moment
    v: dict = field(default_factory=dict)  # name -> second moment
    step: int = 0


def init_optimizer_state(params: dict) -> OptimizerState:
    state = OptimizerState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def clip_global_norm(grads: dict, max_norm: float) -> dict:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for g in grads.values():
        if g is not None:
            total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {n: (None if g is None else g * scale) for n, g in grads.items()}


def adamw_step(params: dict, grads: dict, state: OptimizerState, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One update in place on the param tensors; missing grads act as zero."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != param {name} {p.data.shape}")
        g = g.astype(p.data.dtype, copy=False)
        if weight_decay:
            p.data[...] = p.data - lr * weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m[...] = beta1 * m + (1.0 - beta1) * g
        v[...] = beta2 * v + (1.0 - beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data[...] = p.data - lr * mhat / (np.sqrt(vhat) + eps)
