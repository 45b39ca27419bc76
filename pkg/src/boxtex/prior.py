"""Autoregressive masked-conv models over discrete code grids.

Cells are generated row-major; a first center-excluding masked conv plus a
stack of gated masked blocks keeps every logit a function of earlier cells
only. A conditioning vector (geometry latent, optionally with a seed-part
texture feature) is lifted to a spatial map by three FC layers and added
inside every block; the fine-level model is conditioned on the coarse grid
through an embedding upsampled to its resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (Tensor, adam_step, AdamState, init_uniform, no_grad,
                       ops, parameter, zero_grads)

LEAK = 0.2


@dataclass
class PriorSpec:
    k: int                      # number of code classes
    height: int                 # grid rows (6 * per-face grid)
    width: int                  # grid cols
    channels: int = 32
    blocks: int = 4
    cond_dim: int = 0           # vector condition size; 0 disables
    cond_channels: int = 8
    cond_codes: int = 0         # coarse-grid condition vocabulary; 0 disables
    first_kernel: int = 5
    use_attention: bool = False

    @property
    def receptive_rows(self) -> int:
        """Rows above the current one that can influence a logit."""
        return self.first_kernel // 2 + self.blocks


def init_prior(spec: PriorSpec, rng: np.random.Generator) -> dict:
    ch = spec.channels
    p: dict[str, Tensor] = {}
    p["embed"] = parameter(init_uniform(rng, (spec.k, ch), spec.k, ch))
    kf = spec.first_kernel
    p["first.w"] = parameter(init_uniform(rng, (ch, ch, kf, kf), ch * kf * kf, ch * kf * kf))
    p["first.b"] = parameter(np.zeros(ch, np.float32))
    for i in range(spec.blocks):
        for gate in ("f", "g"):
            p[f"blk{i}.{gate}.w"] = parameter(
                init_uniform(rng, (ch, ch, 3, 3), ch * 9, ch * 9))
            p[f"blk{i}.{gate}.b"] = parameter(np.zeros(ch, np.float32))
            if spec.cond_dim or spec.cond_codes:
                p[f"blk{i}.c{gate}.w"] = parameter(
                    init_uniform(rng, (ch, spec.cond_channels, 1, 1),
                                 spec.cond_channels, ch))
                p[f"blk{i}.c{gate}.b"] = parameter(np.zeros(ch, np.float32))
        p[f"blk{i}.p.w"] = parameter(init_uniform(rng, (ch, ch, 1, 1), ch, ch))
        p[f"blk{i}.p.b"] = parameter(np.zeros(ch, np.float32))
    if spec.cond_dim:
        hidden = 64
        out = spec.cond_channels * spec.height * spec.width
        p["cond1.w"] = parameter(init_uniform(rng, (spec.cond_dim, hidden), spec.cond_dim, hidden))
        p["cond1.b"] = parameter(np.zeros(hidden, np.float32))
        p["cond2.w"] = parameter(init_uniform(rng, (hidden, hidden), hidden, hidden))
        p["cond2.b"] = parameter(np.zeros(hidden, np.float32))
        p["cond3.w"] = parameter(init_uniform(rng, (hidden, out), hidden, out))
        p["cond3.b"] = parameter(np.zeros(out, np.float32))
    if spec.cond_codes:
        p["cembed"] = parameter(init_uniform(rng, (spec.cond_codes, spec.cond_channels),
                                             spec.cond_codes, spec.cond_channels))
    if spec.use_attention:
        for nm in ("q", "kk", "v", "o"):
            p[f"attn.{nm}.w"] = parameter(init_uniform(rng, (ch, ch, 1, 1), ch, ch))
            p[f"attn.{nm}.b"] = parameter(np.zeros(ch, np.float32))
    p["head1.w"] = parameter(init_uniform(rng, (ch, ch, 1, 1), ch, ch))
    p["head1.b"] = parameter(np.zeros(ch, np.float32))
    p["head2.w"] = parameter(init_uniform(rng, (spec.k, ch, 1, 1), ch, spec.k))
    p["head2.b"] = parameter(np.zeros(spec.k, np.float32))
    return p


def cond_map(params: dict, spec: PriorSpec, cond: np.ndarray | None,
             coarse: np.ndarray | None) -> Tensor | None:
    """Builds the (B, cond_channels, H, W) conditioning plane.

    Vector conditions go through three FC layers and a reshape; a coarse
    code grid is embedded and nearest-upsampled by 2 to the fine grid.
    """
    if spec.cond_dim:
        if cond is None:
            raise ValueError("model expects a condition vector")
        c = Tensor(np.ascontiguousarray(cond, dtype=np.float32))
        h = ops.leaky_relu(ops.linear(c, params["cond1.w"], params["cond1.b"]), LEAK)
        h = ops.leaky_relu(ops.linear(h, params["cond2.w"], params["cond2.b"]), LEAK)
        h = ops.linear(h, params["cond3.w"], params["cond3.b"])
        return ops.reshape(h, (cond.shape[0], spec.cond_channels,
                               spec.height, spec.width))
    if spec.cond_codes:
        if coarse is None:
            raise ValueError("model expects a coarse code grid")
        e = ops.embedding(params["cembed"], coarse.astype(np.int64))  # (B,Ht,Wt,C)
        e = ops.transpose(e, (0, 3, 1, 2))
        return ops.upsample_nearest(e, 2)
    return None


def _causal_attention(params: dict, spec: PriorSpec, h: Tensor) -> Tensor:
    b, ch, hh, ww = h.data.shape
    n = hh * ww
    q = ops.conv2d(h, params["attn.q.w"], params["attn.q.b"])
    k_ = ops.conv2d(h, params["attn.kk.w"], params["attn.kk.b"])
    v = ops.conv2d(h, params["attn.v.w"], params["attn.v.b"])
    q2 = ops.transpose(ops.reshape(q, (b, ch, n)), (0, 2, 1))
    k2 = ops.reshape(k_, (b, ch, n))
    v2 = ops.transpose(ops.reshape(v, (b, ch, n)), (0, 2, 1))
    scores = ops.scale(ops.matmul(q2, k2), 1.0 / np.sqrt(ch))
    # position i may attend to j <= i: the features at j already exclude
    # cell j's own value, so including j == i stays causal
    bias = np.where(np.tril(np.ones((n, n), np.float32)) > 0, 0.0, -1e9)
    scores = ops.add(scores, Tensor(np.broadcast_to(bias, (b, n, n)).copy()))
    att = ops.matmul(ops.softmax(scores), v2)
    att = ops.reshape(ops.transpose(att, (0, 2, 1)), (b, ch, hh, ww))
    return ops.add(h, ops.conv2d(att, params["attn.o.w"], params["attn.o.b"]))


def forward(params: dict, spec: PriorSpec, idx: np.ndarray,
            cond: np.ndarray | None = None, coarse: np.ndarray | None = None,
            cmap: Tensor | None = None) -> Tensor:
    """idx (B, H', W) int -> logits (B, K, H', W); H' may be a row crop.

    cmap short-circuits the condition plane (already cropped to H' rows)
    during incremental sampling.
    """
    x = ops.embedding(params["embed"], idx.astype(np.int64))  # (B,H,W,ch)
    x = ops.transpose(x, (0, 3, 1, 2))
    h = ops.masked_conv2d(x, params["first.w"], params["first.b"], "A")
    if cmap is None:
        cmap = cond_map(params, spec, cond, coarse)
    for i in range(spec.blocks):
        f = ops.masked_conv2d(h, params[f"blk{i}.f.w"], params[f"blk{i}.f.b"], "B")
        g = ops.masked_conv2d(h, params[f"blk{i}.g.w"], params[f"blk{i}.g.b"], "B")
        if cmap is not None:
            f = ops.add(f, ops.conv2d(cmap, params[f"blk{i}.cf.w"], params[f"blk{i}.cf.b"]))
            g = ops.add(g, ops.conv2d(cmap, params[f"blk{i}.cg.w"], params[f"blk{i}.cg.b"]))
        a = ops.mul(ops.tanh(f), ops.sigmoid(g))
        h = ops.add(h, ops.conv2d(a, params[f"blk{i}.p.w"], params[f"blk{i}.p.b"]))
    if spec.use_attention:
        h = _causal_attention(params, spec, h)
    o = ops.leaky_relu(h, LEAK)
    o = ops.leaky_relu(ops.conv2d(o, params["head1.w"], params["head1.b"]), LEAK)
    return ops.conv2d(o, params["head2.w"], params["head2.b"])


@dataclass
class PriorHistory:
    ce: list = field(default_factory=list)


def train_prior(dataset: np.ndarray, spec: PriorSpec, rng: np.random.Generator,
                conds: np.ndarray | None = None, coarse: np.ndarray | None = None,
                iters: int = 500, lr: float = 1e-3, batch: int = 8,
                params: dict | None = None, log_every: int = 0
                ) -> tuple[dict, PriorHistory]:
    """dataset (N, H, W) int32 code grids; optional per-row conditions."""
    n = dataset.shape[0]
    if params is None:
        params = init_prior(spec, rng)
    state = AdamState()
    hist = PriorHistory()
    plist = list(params.values())
    for it in range(iters):
        rows = rng.integers(0, n, size=min(batch, n))
        idx = dataset[rows]
        cv = conds[rows] if conds is not None else None
        cg = coarse[rows] if coarse is not None else None
        logits = forward(params, spec, idx, cond=cv, coarse=cg)
        loss = ops.softmax_cross_entropy(logits, idx.astype(np.int64))
        zero_grads(plist)
        loss.backward()
        grads = {k: t.grad for k, t in params.items() if t.grad is not None}
        adam_step({k: t.data for k, t in params.items()}, grads, state, lr)
        hist.ce.append(float(loss.data))
        if log_every and (it % log_every == 0 or it == iters - 1):
            print(f"  prior iter {it:5d} ce={hist.ce[-1]:.4f}", flush=True)
    return params, hist


def _sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of (B, K) probabilities."""
    c = np.cumsum(probs, axis=1)
    u = rng.random((probs.shape[0], 1)) * c[:, -1:]
    return np.minimum((u > c).sum(axis=1), probs.shape[1] - 1).astype(np.int32)


def sample_prior(params: dict, spec: PriorSpec, count: int,
                 rng: np.random.Generator, cond: np.ndarray | None = None,
                 coarse: np.ndarray | None = None, temperature: float = 1.0
                 ) -> np.ndarray:
    """Draws `count` grids in lockstep, one cell at a time, row-major.

    The forward pass per cell runs on a row crop covering the receptive
    field (the whole grid when attention is on, which is global).
    temperature 0 takes the argmax, making sampling deterministic.
    """
    h, w = spec.height, spec.width
    out = np.zeros((count, h, w), np.int32)
    with no_grad():
        full_cmap = cond_map(params, spec, cond, coarse)
    cdata = full_cmap.data if full_cmap is not None else None
    rows_back = h if spec.use_attention else spec.receptive_rows
    with no_grad():
        for i in range(h):
            r0 = max(0, i - rows_back)
            for j in range(w):
                crop = out[:, r0:i + 1, :]
                cm = Tensor(cdata[:, :, r0:i + 1, :]) if cdata is not None else None
                logits = forward(params, spec, crop, cmap=cm)
                lg = logits.data[:, :, i - r0, j].astype(np.float64)
                if temperature <= 0.0:
                    pick = np.argmax(lg, axis=1).astype(np.int32)
                else:
                    lg = lg / temperature
                    lg -= lg.max(axis=1, keepdims=True)
                    p = np.exp(lg)
                    p /= p.sum(axis=1, keepdims=True)
                    pick = _sample_categorical(p, rng)
                out[:, i, j] = pick
    return out


def nll(params: dict, spec: PriorSpec, dataset: np.ndarray,
        conds: np.ndarray | None = None, coarse: np.ndarray | None = None,
        batch: int = 16) -> float:
    """Mean per-cell cross entropy over a dataset."""
    tot, cnt = 0.0, 0
    with no_grad():
        for lo in range(0, dataset.shape[0], batch):
            hi = min(dataset.shape[0], lo + batch)
            idx = dataset[lo:hi]
            cv = conds[lo:hi] if conds is not None else None
            cg = coarse[lo:hi] if coarse is not None else None
            logits = forward(params, spec, idx, cond=cv, coarse=cg)
            loss = ops.softmax_cross_entropy(logits, idx.astype(np.int64))
            tot += float(loss.data) * (hi - lo)
            cnt += hi - lo
    return tot / max(cnt, 1)
