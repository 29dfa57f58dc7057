"""AdamW with decoupled weight decay and global gradient-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWState:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state):
    """Apply one AdamW update in place to the arrays in ``params``.

    Follows the PyTorch update order: decay the weights by
    ``1 - lr * weight_decay``, then take the bias-corrected Adam step.

    Raises
    ------
    FloatingPointError
        If any gradient is not finite. Nothing is modified in that case.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient, AdamW step rejected")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]

    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    step_size = state.lr / bc1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v) / np.sqrt(bc2) + state.eps
        p -= (step_size * m / denom).astype(p.dtype)
    return params


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))


def clip_grad_norm(grads, max_norm=1.0):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [(g * scale).astype(g.dtype) for g in grads]
    return list(grads)


class AdamW:
    """Optimizer bound to a list of parameter tensors."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01, clip_norm=None):
        self.params = list(params)
        self.state = AdamWState(lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)
        self.clip_norm = clip_norm

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [p.grad_or_zeros() for p in self.params]
        if self.clip_norm is not None:
            grads = clip_grad_norm(grads, self.clip_norm)
        adamw_step([p.data for p in self.params], grads, self.state)
