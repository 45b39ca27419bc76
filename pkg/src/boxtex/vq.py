"""EMA-updated codebooks for discrete latent maps.

The dictionary is not a graph parameter: assignments move entries via
exponential moving averages, and the encoder is pulled toward its assigned
entries by the commitment term of embedding_loss. The straight-through
composition hands the decoder's gradient to the encoder unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops

EMA_GAMMA = 0.99
EMA_EPS = 1e-5


@dataclass
class Codebook:
    entries: np.ndarray     # (K, D) float32
    ema_counts: np.ndarray  # (K,) float32
    ema_sums: np.ndarray    # (K, D) float32

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def init_codebook(k: int, d: int, rng: np.random.Generator) -> Codebook:
    entries = rng.uniform(-1.0 / k, 1.0 / k, size=(k, d)).astype(np.float32)
    return Codebook(entries=entries,
                    ema_counts=np.ones(k, dtype=np.float32),
                    ema_sums=entries.copy())


def quantize(cb: Codebook, z_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest entry per row of z_e (M, D); ties take the smallest index.

    Distances are plain squared differences so an independent per-vector
    scan reproduces them exactly.
    """
    z = np.ascontiguousarray(z_e, dtype=np.float32)
    if z.ndim != 2 or z.shape[1] != cb.dim:
        raise ValueError(f"z_e must be (M, {cb.dim}), got {z.shape}")
    m = z.shape[0]
    idx = np.empty(m, dtype=np.int32)
    chunk = max(1, 2_000_000 // max(cb.size * cb.dim, 1))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        diff = z[lo:hi, None, :] - cb.entries[None, :, :]
        d2 = np.einsum("mkd,mkd->mk", diff, diff)
        idx[lo:hi] = np.argmin(d2, axis=1).astype(np.int32)
    return cb.entries[idx], idx


def ema_update(cb: Codebook, z_e: np.ndarray, indices: np.ndarray,
               gamma: float = EMA_GAMMA, eps: float = EMA_EPS) -> Codebook:
    """Moves assigned entries toward the mean of their assigned vectors.

    Unassigned entries decay both count and sum by gamma, which leaves the
    normalized entry unchanged until the count underflows eps.
    """
    z = np.ascontiguousarray(z_e, dtype=np.float32)
    k = cb.size
    counts = np.bincount(indices, minlength=k).astype(np.float32)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, indices, z)
    cb.ema_counts *= gamma
    cb.ema_counts += (1.0 - gamma) * counts
    cb.ema_sums *= gamma
    cb.ema_sums += (1.0 - gamma) * sums
    cb.entries = cb.ema_sums / np.maximum(cb.ema_counts, eps)[:, None]
    return cb


def straight_through(z_e: Tensor, z_q: np.ndarray) -> Tensor:
    """Decoder input z_e + stopgrad(z_q - z_e): values z_q, gradient to z_e."""
    return ops.add(z_e, Tensor(z_q - z_e.data))


def embedding_loss(z_e: Tensor, z_q: np.ndarray, beta1: float = 0.25,
                   reduction: str = "sum") -> Tensor:
    """||sg[z_e] - e||^2 + beta1 ||sg[e] - z_e||^2 over all positions.

    Only the beta1 commitment term carries gradient (2*beta1*(z_e - z_q)
    for reduction='sum'); the dictionary term is a constant here because the
    entries move by EMA, but its value is still reported.
    """
    diff = ops.sub(z_e, Tensor(z_q))
    com = ops.sum_(ops.mul(diff, diff))
    if reduction == "mean":
        com = ops.scale(com, 1.0 / z_e.data.size)
    elif reduction != "sum":
        raise ValueError("reduction must be 'sum' or 'mean'")
    dict_term = float(((z_e.data - z_q) ** 2).sum())
    if reduction == "mean":
        dict_term /= z_e.data.size
    return ops.add(ops.scale(com, beta1), Tensor(np.asarray(dict_term, z_e.data.dtype)))


def perplexity(indices: np.ndarray, k: int) -> float:
    """exp(entropy) of the code histogram; k when uniform, 1 on collapse."""
    counts = np.bincount(indices.reshape(-1), minlength=k).astype(np.float64)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))
