"""Adam with bias correction; state is plain arrays so it checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One update, in place; returns (params, state) for chaining.

    Parameters without a gradient entry are left untouched; zero gradients
    leave a fresh parameter unchanged (0/(sqrt(0)+eps) = 0).
    """
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params, state


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scales all gradients in place so their global L2 norm is <= max_norm.

    Returns the pre-clip norm. One oversized step from a rare large batch
    gradient can throw a run into a flat basin it never leaves; capping the
    global norm bounds the step without biasing small gradients.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
