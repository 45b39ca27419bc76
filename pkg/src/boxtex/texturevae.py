"""Two-level discrete autoencoder over unfolded RGBA atlases.

A conv encoder maps each l x l face patch to a coarse (l/8) and a fine (l/4)
feature map; both are snapped to EMA codebooks and the decoder reconstructs
the patch from the pair of code maps. Cut-edge pairs of the cross layout are
pulled together by a seam penalty evaluated on whole reassembled atlases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vq
from .atlas import (FACE_ORDER, AtlasImage, AtlasLayout, merge_patches,
                    seam_pixel_indices, split_patches)
from .autodiff import (Tensor, adam_step, AdamState, clip_grad_norm,
                       init_uniform, no_grad, ops, parameter, zero_grads)

LEAK = 0.2


@dataclass
class TvaeSpec:
    patch: int = 64
    channels: int = 32
    embed_dim: int = 32
    codebook_size: int = 128
    beta1: float = 0.25

    @property
    def top_grid(self) -> int:
        return self.patch // 8

    @property
    def bottom_grid(self) -> int:
        return self.patch // 4


@dataclass
class IndexMatrices:
    """Code indices for one atlas, faces stacked vertically in FACE_ORDER."""
    top: np.ndarray     # (6*top_grid, top_grid) int32
    bottom: np.ndarray  # (6*bottom_grid, bottom_grid) int32


@dataclass
class TrainHistory:
    l1: list = field(default_factory=list)
    emb_top: list = field(default_factory=list)
    emb_bottom: list = field(default_factory=list)
    seam: list = field(default_factory=list)        # (iteration, value)
    perp_top: list = field(default_factory=list)
    perp_bottom: list = field(default_factory=list)


def _conv_param(rng, name, params, c_in, c_out, k):
    params[f"{name}.w"] = parameter(
        init_uniform(rng, (c_out, c_in, k, k), c_in * k * k, c_out * k * k))
    params[f"{name}.b"] = parameter(np.zeros(c_out, np.float32))


def _convt_param(rng, name, params, c_in, c_out, k):
    params[f"{name}.w"] = parameter(
        init_uniform(rng, (c_in, c_out, k, k), c_in * k * k, c_out * k * k))
    params[f"{name}.b"] = parameter(np.zeros(c_out, np.float32))


def init_texturevae(spec: TvaeSpec, rng: np.random.Generator) -> dict:
    ch, d = spec.channels, spec.embed_dim
    p: dict[str, Tensor] = {}
    _conv_param(rng, "enc_b1", p, 4, ch, 4)
    _conv_param(rng, "enc_b2", p, ch, ch, 4)
    for r in ("enc_b_r1", "enc_b_r2", "enc_t_r1", "enc_t_r2", "dec_r1", "dec_r2"):
        _conv_param(rng, r + "a", p, ch, ch, 3)
        _conv_param(rng, r + "b", p, ch, ch, 3)
    _conv_param(rng, "enc_t1", p, ch, ch, 4)
    _conv_param(rng, "to_zt", p, ch, d, 3)
    _conv_param(rng, "to_zb", p, ch, d, 3)
    _convt_param(rng, "dec_t_up", p, d, ch, 4)
    _conv_param(rng, "dec_in", p, d + ch, ch, 3)
    _convt_param(rng, "dec_up1", p, ch, ch, 4)
    _convt_param(rng, "dec_up2", p, ch, ch, 4)
    _conv_param(rng, "dec_out", p, ch, 4, 3)
    return p


def _conv(p, name, x, stride=1, pad=0):
    return ops.conv2d(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, pad=pad)


def _convt(p, name, x, stride=2, pad=1):
    return ops.conv2d_transpose(x, p[f"{name}.w"], p[f"{name}.b"], stride=stride, pad=pad)


def _res(p, name, x):
    h = ops.leaky_relu(x, LEAK)
    h = _conv(p, name + "a", h, pad=1)
    h = ops.leaky_relu(h, LEAK)
    h = _conv(p, name + "b", h, pad=1)
    return ops.add(x, h)


def encode_patch(params: dict, x: Tensor) -> tuple[Tensor, Tensor]:
    """x (B,4,l,l) -> (z_e_top (B,D,l/8,l/8), z_e_bottom (B,D,l/4,l/4)).

    Deterministic and codebook-free; the bottom map is read off before the
    top branch so it does not depend on top quantization.
    """
    h = ops.leaky_relu(_conv(params, "enc_b1", x, stride=2, pad=1), LEAK)
    h = ops.leaky_relu(_conv(params, "enc_b2", h, stride=2, pad=1), LEAK)
    h = _res(params, "enc_b_r1", h)
    h = _res(params, "enc_b_r2", h)
    z_e_b = _conv(params, "to_zb", h, pad=1)
    t = ops.leaky_relu(_conv(params, "enc_t1", h, stride=2, pad=1), LEAK)
    t = _res(params, "enc_t_r1", t)
    t = _res(params, "enc_t_r2", t)
    z_e_t = _conv(params, "to_zt", t, pad=1)
    return z_e_t, z_e_b


def decode(params: dict, z_q_t: Tensor, z_q_b: Tensor) -> Tensor:
    """Code maps -> RGBA patch batch (B,4,l,l) in [0,1]."""
    u = ops.leaky_relu(_convt(params, "dec_t_up", z_q_t), LEAK)
    h = ops.leaky_relu(_conv(params, "dec_in", ops.concat([z_q_b, u], axis=1), pad=1), LEAK)
    h = _res(params, "dec_r1", h)
    h = _res(params, "dec_r2", h)
    h = ops.leaky_relu(_convt(params, "dec_up1", h), LEAK)
    h = ops.leaky_relu(_convt(params, "dec_up2", h), LEAK)
    return ops.sigmoid(_conv(params, "dec_out", h, pad=1))


def _nchw_to_flat(z: np.ndarray) -> np.ndarray:
    b, d, h, w = z.shape
    return np.ascontiguousarray(z.transpose(0, 2, 3, 1)).reshape(b * h * w, d)


def _flat_to_nchw(z: np.ndarray, b: int, h: int, w: int) -> np.ndarray:
    return np.ascontiguousarray(z.reshape(b, h, w, -1).transpose(0, 3, 1, 2))


def quantize_maps(cb: vq.Codebook, z_e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quantize an NCHW feature map; returns (z_q NCHW, indices (B,H,W))."""
    b, _, h, w = z_e.shape
    zq_flat, idx = vq.quantize(cb, _nchw_to_flat(z_e))
    return _flat_to_nchw(zq_flat, b, h, w), idx.reshape(b, h, w)


def encode_atlas(params: dict, cb_top: vq.Codebook, cb_bottom: vq.Codebook,
                 atlas: AtlasImage) -> IndexMatrices:
    patches = split_patches(atlas)  # (6, l, l, 4)
    x = np.ascontiguousarray(patches.transpose(0, 3, 1, 2))
    with no_grad():
        z_e_t, z_e_b = encode_patch(params, Tensor(x))
    _, it = quantize_maps(cb_top, z_e_t.data)
    _, ib = quantize_maps(cb_bottom, z_e_b.data)
    tg, bg = it.shape[1], ib.shape[1]
    return IndexMatrices(top=it.reshape(6 * tg, tg).astype(np.int32),
                         bottom=ib.reshape(6 * bg, bg).astype(np.int32))


def decode_indices(params: dict, cb_top: vq.Codebook, cb_bottom: vq.Codebook,
                   idx: IndexMatrices, l: int) -> AtlasImage:
    tg, bg = l // 8, l // 4
    it = idx.top.reshape(6, tg, tg)
    ib = idx.bottom.reshape(6, bg, bg)
    zt = _flat_to_nchw(cb_top.entries[it.reshape(-1)], 6, tg, tg)
    zb = _flat_to_nchw(cb_bottom.entries[ib.reshape(-1)], 6, bg, bg)
    with no_grad():
        out = decode(params, Tensor(zt), Tensor(zb))
    patches = np.ascontiguousarray(out.data.transpose(0, 2, 3, 1)).astype(np.float32)
    return AtlasImage(merge_patches(patches, l), l)


def _seam_gather_tables(layout: AtlasLayout) -> tuple[np.ndarray, ...]:
    """Atlas seam pixels mapped to (face, local y, local x) per side."""
    pa, pb = seam_pixel_indices(layout)
    rects = layout.rects
    out = []
    for pix in (pa, pb):
        face = np.empty(len(pix), np.int32)
        ly = np.empty(len(pix), np.int32)
        lx = np.empty(len(pix), np.int32)
        for i, (y, x) in enumerate(pix):
            for k, name in enumerate(FACE_ORDER):
                x0, y0 = rects[name]
                if x0 <= x < x0 + layout.l and y0 <= y < y0 + layout.l:
                    face[i], ly[i], lx[i] = k, y - y0, x - x0
                    break
            else:
                raise AssertionError("seam pixel outside all face rects")
        out.extend([face, ly, lx])
    return tuple(out)


def seam_loss(recon: Tensor, part_rows: np.ndarray, tables) -> Tensor:
    """Mean squared RGBA difference across cut-edge pixel pairs.

    recon is (B*6, 4, l, l) with part i occupying rows i*6..i*6+5 in face
    order; part_rows lists the part indices present in the batch.
    """
    fa, ya, xa, fb, yb, xb = tables
    n = len(fa)
    reps = np.repeat(part_rows.astype(np.int64) * 6, n)
    pa = reps + np.tile(fa.astype(np.int64), len(part_rows))
    pb = reps + np.tile(fb.astype(np.int64), len(part_rows))
    ga = ops.gather_pixels(recon, pa, np.tile(ya, len(part_rows)), np.tile(xa, len(part_rows)))
    gb = ops.gather_pixels(recon, pb, np.tile(yb, len(part_rows)), np.tile(xb, len(part_rows)))
    d = ops.sub(ga, gb)
    return ops.mean(ops.mul(d, d))


DEAD_COUNT = 0.03


def _restart_dead(cb: vq.Codebook, z_flat: np.ndarray, rng: np.random.Generator) -> None:
    """Reseeds entries whose EMA usage decayed away to random batch vectors.

    Keeps the dictionary spread over the live latent distribution instead of
    leaving stale entries stranded where the encoder no longer visits.
    """
    dead = np.nonzero(cb.ema_counts < DEAD_COUNT)[0]
    if dead.size == 0:
        return
    pick = rng.integers(0, z_flat.shape[0], size=dead.size)
    cb.entries[dead] = z_flat[pick]
    cb.ema_sums[dead] = z_flat[pick]
    cb.ema_counts[dead] = 1.0


@dataclass
class TrainedTexture:
    params: dict
    cb_top: vq.Codebook
    cb_bottom: vq.Codebook
    history: TrainHistory
    iterations_run: int


def _seed_from_data(cb: vq.Codebook, z_flat: np.ndarray, rng: np.random.Generator) -> None:
    """Warm-starts every entry at a real encoder output vector.

    The fresh uniform entries live at +-1/K, far below latent scale; seeding
    from data means assignments distinguish inputs from the first step and
    the straight-through gradient never drags the encoder into that ball.
    """
    pick = rng.integers(0, z_flat.shape[0], size=cb.size)
    cb.entries[:] = z_flat[pick]
    cb.ema_sums[:] = z_flat[pick]
    cb.ema_counts[:] = 1.0


def train_texturevae(dataset: np.ndarray, spec: TvaeSpec, layout: AtlasLayout,
                     rng: np.random.Generator, iters: int = 1500, lr: float = 2e-3,
                     batch_parts: int = 4, seam_every: int = 8, seam_weight: float = 1.0,
                     target_l1: float | None = None, params: dict | None = None,
                     cb_top: vq.Codebook | None = None,
                     cb_bottom: vq.Codebook | None = None,
                     warm_frac: float = 0.2, clip_norm: float = 5.0,
                     log_every: int = 0) -> TrainedTexture:
    """dataset (N, 6, l, l, 4) float32 in [0,1]; batches are whole atlases.

    Batches walk a reshuffled permutation so every atlas appears once per
    cycle; with the sign-based pixel loss, iid batches of a tiny dataset can
    pin the decoder at the batch median instead. Training opens with a warm
    phase (warm_frac of iters): codebooks are seeded from first-batch
    encoder outputs and the decoder alone trains against frozen code maps,
    so each code acquires a stable meaning before the encoder and EMA moves
    can merge clusters. Joint training then ramps the commitment weight in.
    target_l1 stops early once the trailing-20 mean reconstruction L1 drops
    below it. Embedding losses enter the objective mean-reduced so their
    gradient scale matches the pixel terms. Gradients are clipped to a
    global norm of clip_norm: one oversized Adam step can land the decoder
    in the flat all-outputs-at-the-median basin of the L1 loss for good.
    """
    if dataset.ndim != 5 or dataset.shape[1] != 6 or dataset.shape[4] != 4:
        raise ValueError(f"expected (N,6,l,l,4), got {dataset.shape}")
    n = dataset.shape[0]
    if params is None:
        params = init_texturevae(spec, rng)
    if cb_top is None:
        cb_top = vq.init_codebook(spec.codebook_size, spec.embed_dim, rng)
    if cb_bottom is None:
        cb_bottom = vq.init_codebook(spec.codebook_size, spec.embed_dim, rng)
    tables = _seam_gather_tables(layout)
    state = AdamState()
    hist = TrainHistory()
    plist = list(params.values())
    ran = 0
    bsz = min(batch_parts, n)
    order = rng.permutation(n)
    cursor = 0
    warm = int(round(warm_frac * iters))
    ramp = max(1, int(0.15 * iters))
    seeded = False
    for it in range(iters):
        ran = it + 1
        if cursor + bsz > n:
            order = rng.permutation(n)
            cursor = 0
        rows = order[cursor:cursor + bsz]
        cursor += bsz
        x_np = np.ascontiguousarray(
            dataset[rows].reshape(-1, spec.patch, spec.patch, 4).transpose(0, 3, 1, 2))
        x = Tensor(x_np)
        joint = it >= warm
        if joint:
            z_e_t, z_e_b = encode_patch(params, x)
        else:
            with no_grad():
                z_e_t, z_e_b = encode_patch(params, x)
        if not seeded:
            _seed_from_data(cb_top, _nchw_to_flat(z_e_t.data), rng)
            _seed_from_data(cb_bottom, _nchw_to_flat(z_e_b.data), rng)
            seeded = True
        zq_t, idx_t = quantize_maps(cb_top, z_e_t.data)
        zq_b, idx_b = quantize_maps(cb_bottom, z_e_b.data)
        if joint:
            vq.ema_update(cb_top, _nchw_to_flat(z_e_t.data), idx_t.reshape(-1))
            vq.ema_update(cb_bottom, _nchw_to_flat(z_e_b.data), idx_b.reshape(-1))
            _restart_dead(cb_top, _nchw_to_flat(z_e_t.data), rng)
            _restart_dead(cb_bottom, _nchw_to_flat(z_e_b.data), rng)
            st_t = vq.straight_through(z_e_t, zq_t)
            st_b = vq.straight_through(z_e_b, zq_b)
        else:
            st_t, st_b = Tensor(zq_t), Tensor(zq_b)
        recon = decode(params, st_t, st_b)
        l1 = ops.l1_loss(recon, x)
        beta = spec.beta1 * min(1.0, (it - warm + 1) / ramp) if joint else 0.0
        e_t = vq.embedding_loss(z_e_t, zq_t, beta, reduction="mean")
        e_b = vq.embedding_loss(z_e_b, zq_b, beta, reduction="mean")
        loss = ops.add(l1, ops.add(e_t, e_b)) if joint else l1
        if seam_every and (it % seam_every == 0):
            sl = seam_loss(recon, np.arange(len(rows)), tables)
            loss = ops.add(loss, ops.scale(sl, seam_weight))
            hist.seam.append((it, float(sl.data)))
        zero_grads(plist)
        loss.backward()
        grads = {k: t.grad for k, t in params.items() if t.grad is not None}
        if clip_norm:
            clip_grad_norm(grads, clip_norm)
        adam_step({k: t.data for k, t in params.items()}, grads, state, lr)
        hist.l1.append(float(l1.data))
        hist.emb_top.append(float(e_t.data))
        hist.emb_bottom.append(float(e_b.data))
        hist.perp_top.append(vq.perplexity(idx_t, spec.codebook_size))
        hist.perp_bottom.append(vq.perplexity(idx_b, spec.codebook_size))
        if log_every and (it % log_every == 0 or it == iters - 1):
            print(f"  tvae iter {it:5d} l1={hist.l1[-1]:.4f} "
                  f"perp_t={hist.perp_top[-1]:.1f} perp_b={hist.perp_bottom[-1]:.1f}",
                  flush=True)
        if target_l1 is not None and len(hist.l1) >= 20:
            if float(np.mean(hist.l1[-20:])) < target_l1:
                break
    return TrainedTexture(params, cb_top, cb_bottom, hist, ran)


def reconstruct_atlas(params: dict, cb_top: vq.Codebook, cb_bottom: vq.Codebook,
                      atlas: AtlasImage) -> AtlasImage:
    idx = encode_atlas(params, cb_top, cb_bottom, atlas)
    return decode_indices(params, cb_top, cb_bottom, idx, atlas.l)


def seed_feature(cb_top: vq.Codebook, idx_top: np.ndarray) -> np.ndarray:
    """Texture summary of a part: mean of its quantized coarse-level codes.

    Deterministic given the index matrix; used as the compatibility
    condition when sampling the other parts of a shape.
    """
    return cb_top.entries[idx_top.reshape(-1).astype(np.int64)].mean(axis=0)


def dataset_perplexity(params: dict, cb_top: vq.Codebook, cb_bottom: vq.Codebook,
                       dataset: np.ndarray) -> tuple[float, float]:
    """Code-usage perplexity of both books over a whole dataset."""
    k = cb_top.size
    all_t, all_b = [], []
    for i in range(dataset.shape[0]):
        x = np.ascontiguousarray(dataset[i].transpose(0, 3, 1, 2))
        with no_grad():
            z_e_t, z_e_b = encode_patch(params, Tensor(x))
        _, it = quantize_maps(cb_top, z_e_t.data)
        _, ib = quantize_maps(cb_bottom, z_e_b.data)
        all_t.append(it.reshape(-1))
        all_b.append(ib.reshape(-1))
    return (vq.perplexity(np.concatenate(all_t), k),
            vq.perplexity(np.concatenate(all_b), cb_bottom.size))
