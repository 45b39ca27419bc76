"""Finite-difference gradient verification.

Builds the same graph twice: once for analytic gradients, once per probe for
central differences at h=1e-3. Probes run in float64 (ops inherit dtype) so
the difference quotient is trustworthy well below the 1e-3 acceptance bar.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def grad_check(fn: Callable[[dict[str, Tensor]], Tensor],
               arrays: dict[str, np.ndarray], h: float = 1e-3,
               max_probes: int = 40, rng: np.random.Generator | None = None
               ) -> float:
    """Max relative error between analytic and numeric gradients.

    fn maps named tensors to a scalar loss. Up to max_probes elements per
    input are probed (all elements when small). Relative error uses
    |ga - gn| / max(|ga|, |gn|, 1e-6).
    """
    rng = rng or np.random.default_rng(0)
    tensors = {}
    for name, arr in arrays.items():
        t = Tensor(np.asarray(arr, dtype=np.float64))
        t.requires_grad = True
        tensors[name] = t
    loss = fn(tensors)
    loss.backward()

    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        ga = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        n = flat.size
        probes = (np.arange(n) if n <= max_probes
                  else rng.choice(n, size=max_probes, replace=False))
        for k in probes:
            orig = flat[k]
            flat[k] = orig + h
            fp = float(fn(tensors).data)
            flat[k] = orig - h
            fm = float(fn(tensors).data)
            flat[k] = orig
            gn = (fp - fm) / (2.0 * h)
            err = abs(ga[k] - gn) / max(abs(ga[k]), abs(gn), 1e-6)
            worst = max(worst, err)
    return worst


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform +-sqrt(6/(fan_in+fan_out)), float32."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
