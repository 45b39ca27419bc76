"""Gaussian latent models over part geometry vectors and whole shapes.

Each part label gets its own small VAE over flattened displacement vectors.
A second VAE sees all part latents plus a per-slot structure code (presence
flag, box center, box half-extents, normalized to the shape bounding box)
and models the whole arrangement, so one latent draw yields a coherent set
of parts with their placements.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, adam_step, AdamState, init_uniform, no_grad,
                       ops, parameter, zero_grads)
from .geom import (CategorySpec, DeformedBox, GeometryVector,
                   apply_geometry_vector, category_spec, template_box)

LEAK = 0.2
STRUCT_SLOT = 7  # flag + center(3) + half extents(3)


@dataclass
class GeomLatent:
    mean: np.ndarray    # (Z,)
    logvar: np.ndarray  # (Z,)

    def sample(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if rng is None:
            return self.mean.copy()
        eps = rng.standard_normal(self.mean.shape).astype(np.float32)
        return self.mean + np.exp(0.5 * self.logvar) * eps


@dataclass
class StructureCode:
    """Per-slot box summary in shape-bbox-normalized coordinates."""
    flags: np.ndarray         # (S,) float32, 1 = part present
    centers: np.ndarray       # (S,3)
    half_extents: np.ndarray  # (S,3)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.flags[:, None], self.centers,
                               self.half_extents], axis=1).reshape(-1)

    @staticmethod
    def from_vector(v: np.ndarray, slots: int) -> "StructureCode":
        m = v.reshape(slots, STRUCT_SLOT)
        return StructureCode(flags=m[:, 0].copy(), centers=m[:, 1:4].copy(),
                             half_extents=m[:, 4:7].copy())


@dataclass
class ShapeSpec:
    """A realized shape: which parts exist, their boxes, optional codes."""
    category: str
    labels: list
    latents: dict            # label -> (Z,) float32
    structure: StructureCode
    boxes: dict              # label -> DeformedBox
    index_matrices: dict = field(default_factory=dict)  # label -> IndexMatrices


def structure_code(category: str, boxes: dict) -> StructureCode:
    spec = category_spec(category)
    s = len(spec.parts)
    flags = np.zeros(s, np.float32)
    centers = np.zeros((s, 3), np.float32)
    halfs = np.zeros((s, 3), np.float32)
    pts = [b.vertices for b in boxes.values()]
    if not pts:
        raise ValueError("structure_code needs at least one box")
    allp = np.concatenate(pts)
    lo, hi = allp.min(0), allp.max(0)
    extent = np.maximum(hi - lo, 1e-9)
    for i, label in enumerate(spec.parts):
        b = boxes.get(label)
        if b is None:
            continue
        v = b.vertices
        bl, bh = v.min(0), v.max(0)
        flags[i] = 1.0
        centers[i] = ((bl + bh) / 2 - lo) / extent
        halfs[i] = (bh - bl) / 2 / extent
    return StructureCode(flags, centers, halfs)


def _fc_param(rng, name, params, n_in, n_out):
    params[f"{name}.w"] = parameter(init_uniform(rng, (n_in, n_out), n_in, n_out))
    params[f"{name}.b"] = parameter(np.zeros(n_out, np.float32))


def init_vae(in_dim: int, hidden: int, z_dim: int, rng: np.random.Generator) -> dict:
    """Three fully connected layers on each side; encoder emits mean|logvar."""
    p: dict[str, Tensor] = {}
    _fc_param(rng, "enc1", p, in_dim, hidden)
    _fc_param(rng, "enc2", p, hidden, hidden)
    _fc_param(rng, "enc3", p, hidden, 2 * z_dim)
    _fc_param(rng, "dec1", p, z_dim, hidden)
    _fc_param(rng, "dec2", p, hidden, hidden)
    _fc_param(rng, "dec3", p, hidden, in_dim)
    return p


def _fc(p, name, x):
    return ops.linear(x, p[f"{name}.w"], p[f"{name}.b"])


def vae_encode(params: dict, x: Tensor) -> tuple[Tensor, Tensor]:
    h = ops.leaky_relu(_fc(params, "enc1", x), LEAK)
    h = ops.leaky_relu(_fc(params, "enc2", h), LEAK)
    out = _fc(params, "enc3", h)
    z2 = out.data.shape[1] // 2
    mu = ops.slice_cols(out, 0, z2)
    logvar = ops.slice_cols(out, z2, 2 * z2)
    return mu, logvar


def vae_decode(params: dict, z: Tensor) -> Tensor:
    h = ops.leaky_relu(_fc(params, "dec1", z), LEAK)
    h = ops.leaky_relu(_fc(params, "dec2", h), LEAK)
    return _fc(params, "dec3", h)


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """-0.5 sum(1 + logvar - mu^2 - exp(logvar)), averaged over the batch."""
    one = Tensor(np.ones_like(mu.data))
    inner = ops.sub(ops.add(one, logvar), ops.add(ops.mul(mu, mu), ops.exp(logvar)))
    n = mu.data.shape[0]
    return ops.scale(ops.sum_(inner), -0.5 / n)


@dataclass
class VaeHistory:
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)


def train_vae(data: np.ndarray, hidden: int, z_dim: int, rng: np.random.Generator,
              iters: int = 600, lr: float = 1e-3, batch: int = 16,
              kl_weight: float = 1e-3, warmup_frac: float = 0.1,
              params: dict | None = None, log_every: int = 0
              ) -> tuple[dict, VaeHistory]:
    """data (N, D) float32. KL weight ramps linearly over the first
    warmup_frac of iterations so reconstruction settles before the prior
    pulls the posterior toward the origin."""
    n, in_dim = data.shape
    if params is None:
        params = init_vae(in_dim, hidden, z_dim, rng)
    state = AdamState()
    hist = VaeHistory()
    plist = list(params.values())
    warm = max(1, int(warmup_frac * iters))
    for it in range(iters):
        rows = rng.integers(0, n, size=min(batch, n))
        x = Tensor(np.ascontiguousarray(data[rows]))
        mu, logvar = vae_encode(params, x)
        eps = rng.standard_normal(mu.data.shape).astype(data.dtype)
        z = ops.add(mu, ops.mul(ops.exp(ops.scale(logvar, 0.5)), Tensor(eps)))
        recon = vae_decode(params, z)
        rloss = ops.l2_loss(recon, x)
        kl = kl_term(mu, logvar)
        lam = kl_weight * min(1.0, (it + 1) / warm)
        loss = ops.add(rloss, ops.scale(kl, lam))
        zero_grads(plist)
        loss.backward()
        grads = {k: t.grad for k, t in params.items() if t.grad is not None}
        adam_step({k: t.data for k, t in params.items()}, grads, state, lr)
        hist.recon.append(float(rloss.data))
        hist.kl.append(float(kl.data))
        if log_every and (it % log_every == 0 or it == iters - 1):
            print(f"  vae iter {it:5d} recon={hist.recon[-1]:.5f} kl={hist.kl[-1]:.3f}",
                  flush=True)
    return params, hist


def encode_mean(params: dict, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, logvar) without graph construction."""
    with no_grad():
        mu, logvar = vae_encode(params, Tensor(np.ascontiguousarray(x)))
    return mu.data.copy(), logvar.data.copy()


def decode_values(params: dict, z: np.ndarray) -> np.ndarray:
    with no_grad():
        out = vae_decode(params, Tensor(np.ascontiguousarray(z, dtype=np.float32)))
    return out.data.copy()


# ---------------------------------------------------------------------------
# shape-level composition


def spvae_input(category: str, latents: dict, structure: StructureCode,
                z_dim: int) -> np.ndarray:
    """Concatenates per-slot [part latent | structure slot]; absent slots zero."""
    spec = category_spec(category)
    rows = []
    for i, label in enumerate(spec.parts):
        z = latents.get(label)
        z = np.zeros(z_dim, np.float32) if z is None else np.asarray(z, np.float32)
        slot = np.concatenate([structure.flags[i:i + 1], structure.centers[i],
                               structure.half_extents[i]]).astype(np.float32)
        rows.append(np.concatenate([z, slot]))
    return np.concatenate(rows)


@dataclass
class SpDecoded:
    part_latents: np.ndarray  # (S, Z)
    structure: StructureCode  # flags thresholded at 0.5
    raw_flags: np.ndarray     # (S,) sigmoid outputs before thresholding


def spvae_split(out_vec: np.ndarray, slots: int, z_dim: int) -> SpDecoded:
    """Splits a decoder output row; flag channel is squashed to (0,1)."""
    m = out_vec.reshape(slots, z_dim + STRUCT_SLOT)
    zs = m[:, :z_dim].copy()
    raw = 1.0 / (1.0 + np.exp(-np.clip(m[:, z_dim], -60, 60)))
    centers = m[:, z_dim + 1:z_dim + 4].copy()
    halfs = m[:, z_dim + 4:z_dim + 7].copy()
    flags = (raw >= 0.5).astype(np.float32)
    return SpDecoded(part_latents=zs,
                     structure=StructureCode(flags, centers, halfs),
                     raw_flags=raw.astype(np.float32))


def spvae_target(category: str, latents: dict, structure: StructureCode,
                 z_dim: int) -> np.ndarray:
    """Training target equals the input; flags stay 0/1 and the decoder's
    flag channel is compared after sigmoid, so a perfect fit drives raw
    flags to saturation."""
    return spvae_input(category, latents, structure, z_dim)


def train_spvae(inputs: np.ndarray, slots: int, z_dim: int, hidden: int,
                latent: int, rng: np.random.Generator, iters: int = 600,
                lr: float = 1e-3, batch: int = 8, kl_weight: float = 1e-3,
                log_every: int = 0) -> tuple[dict, VaeHistory]:
    """inputs (N, S*(Z+7)). The decoder's flag channels pass through a
    sigmoid inside the loss so presence is regressed in (0,1)."""
    n, in_dim = inputs.shape
    if in_dim != slots * (z_dim + STRUCT_SLOT):
        raise ValueError(f"input dim {in_dim} != {slots}*({z_dim}+{STRUCT_SLOT})")
    params = init_vae(in_dim, hidden, latent, rng)
    state = AdamState()
    hist = VaeHistory()
    plist = list(params.values())
    warm = max(1, int(0.1 * iters))
    flag_cols = np.array([s * (z_dim + STRUCT_SLOT) + z_dim for s in range(slots)])
    mask = np.zeros(in_dim, np.float32)
    mask[flag_cols] = 1.0
    for it in range(iters):
        rows = rng.integers(0, n, size=min(batch, n))
        x = Tensor(np.ascontiguousarray(inputs[rows]))
        mu, logvar = vae_encode(params, x)
        eps = rng.standard_normal(mu.data.shape).astype(inputs.dtype)
        z = ops.add(mu, ops.mul(ops.exp(ops.scale(logvar, 0.5)), Tensor(eps)))
        out = vae_decode(params, z)
        # squash only the flag columns: out*(1-mask) + sigmoid(out)*mask
        m = Tensor(np.broadcast_to(mask, out.data.shape).copy())
        om = Tensor(np.broadcast_to(1.0 - mask, out.data.shape).copy())
        recon = ops.add(ops.mul(out, om), ops.mul(ops.sigmoid(out), m))
        rloss = ops.l2_loss(recon, x)
        kl = kl_term(mu, logvar)
        lam = kl_weight * min(1.0, (it + 1) / warm)
        loss = ops.add(rloss, ops.scale(kl, lam))
        zero_grads(plist)
        loss.backward()
        grads = {k: t.grad for k, t in params.items() if t.grad is not None}
        adam_step({k: t.data for k, t in params.items()}, grads, state, lr)
        hist.recon.append(float(rloss.data))
        hist.kl.append(float(kl.data))
        if log_every and (it % log_every == 0 or it == iters - 1):
            print(f"  spvae iter {it:5d} recon={hist.recon[-1]:.5f} kl={hist.kl[-1]:.3f}",
                  flush=True)
    return params, hist


def spvae_decode_vec(params: dict, z: np.ndarray, slots: int, z_dim: int) -> SpDecoded:
    out = decode_values(params, z.reshape(1, -1))[0]
    return spvae_split(out, slots, z_dim)


def realize_box(pvae_params: dict, z: np.ndarray, grid_n: int,
                center: np.ndarray, half: np.ndarray) -> DeformedBox:
    """Decodes a geometry vector and maps its box into the structure slot.

    The decoded box is normalized (centroid origin, unit bounding radius);
    it is scaled per axis so its bounding box lands on [center-half,
    center+half] in the shape frame.
    """
    vals = decode_values(pvae_params, z.reshape(1, -1))[0].astype(np.float32)
    gv = GeometryVector(values=vals, norm_center=np.zeros(3, np.float32),
                        norm_scale=1.0, grid_n=grid_n)
    box = apply_geometry_vector(gv)
    v = box.vertices
    lo, hi = v.min(0), v.max(0)
    bc = (lo + hi) / 2
    bh = np.maximum((hi - lo) / 2, 1e-6)
    scaled = (v - bc) / bh * np.maximum(half, 1e-6) + center
    tmpl = template_box(box.template.grid_n)
    return DeformedBox(template=tmpl,
                       displacements=(scaled - tmpl.vertices).astype(np.float32))


def sample_shape(spvae_params: dict, pvae_params: dict, category: str,
                 grid_n: int, z_dim: int, latent: int,
                 rng: np.random.Generator, z: np.ndarray | None = None,
                 flag_thresh: float = 0.5) -> ShapeSpec:
    """Draws (or accepts) a shape latent and realizes present parts."""
    spec = category_spec(category)
    slots = len(spec.parts)
    if z is None:
        z = rng.standard_normal(latent).astype(np.float32)
    dec = spvae_decode_vec(spvae_params, z, slots, z_dim)
    boxes = {}
    latents = {}
    labels = []
    for i, label in enumerate(spec.parts):
        if dec.raw_flags[i] < flag_thresh:
            continue
        labels.append(label)
        latents[label] = dec.part_latents[i].astype(np.float32)
        boxes[label] = realize_box(pvae_params[label], dec.part_latents[i],
                                   grid_n, dec.structure.centers[i],
                                   dec.structure.half_extents[i])
    return ShapeSpec(category=category, labels=labels, latents=latents,
                     structure=dec.structure, boxes=boxes)
