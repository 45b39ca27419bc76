"""Differentiable ops. All take/return Tensors; math runs in the input dtype.

Convolutions go through im2col so the heavy lifting is a single BLAS matmul
in both the forward and backward passes.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_op


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sums gradient over axes that broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        a.requires_grad and a.accumulate(_unbroadcast(g, a.data.shape))
        b.requires_grad and b.accumulate(_unbroadcast(g, b.data.shape))

    return make_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        a.requires_grad and a.accumulate(_unbroadcast(g, a.data.shape))
        b.requires_grad and b.accumulate(_unbroadcast(-g, b.data.shape))

    return make_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        a.requires_grad and a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        b.requires_grad and b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return make_op(out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data.dtype.type(s)

    def backward(g):
        a.requires_grad and a.accumulate(g * a.data.dtype.type(s))

    return make_op(out, (a,), backward)


def matmul(a, b) -> Tensor:
    """2D or batched (leading batch dims must match, no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != b.data.ndim:
        raise ValueError("matmul operands need equal ndim")
    out = a.data @ b.data

    def backward(g):
        a.requires_grad and a.accumulate(g @ b.data.swapaxes(-1, -2))
        b.requires_grad and b.accumulate(a.data.swapaxes(-1, -2) @ g)

    return make_op(out, (a, b), backward)


def transpose(x, axes: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data.transpose(axes))
    inv = np.argsort(axes)

    def backward(g):
        x.requires_grad and x.accumulate(g.transpose(inv))

    return make_op(out, (x,), backward)


def linear(x, w, b=None) -> Tensor:
    """x (N,I) @ w (I,O) + b (O,)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    neg = x.data < 0
    out = np.where(neg, x.data * x.data.dtype.type(alpha), x.data)

    def backward(g):
        x.requires_grad and x.accumulate(
            np.where(neg, g * x.data.dtype.type(alpha), g))

    return make_op(out, (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # clip keeps exp in range; saturated values already round to 0/1
    out = 1.0 / (1.0 + np.exp(-np.clip(x.data, -60.0, 60.0)))
    out = out.astype(x.data.dtype)

    def backward(g):
        x.requires_grad and x.accumulate(g * out * (1.0 - out))

    return make_op(out, (x,), backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        x.requires_grad and x.accumulate(g * (1.0 - out * out))

    return make_op(out, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        x.requires_grad and x.accumulate(g * out)

    return make_op(out, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def backward(g):
        x.requires_grad and x.accumulate(g / x.data)

    return make_op(out, (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def backward(g):
        x.requires_grad and x.accumulate(g.reshape(x.data.shape))

    return make_op(out, (x,), backward)


def slice_cols(x, lo: int, hi: int) -> Tensor:
    """Columns [lo, hi) of a 2D tensor; gradient scatters back into place."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"slice_cols expects 2D, got {x.data.shape}")
    out = x.data[:, lo:hi].copy()

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, lo:hi] = g
            x.accumulate(full)

    return make_op(out, (x,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, splits, axis=axis)
        for p, gp in zip(parts, pieces):
            p.requires_grad and p.accumulate(gp)

    return make_op(out, tuple(parts), backward)


def stop_gradient(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data)


def mean(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.mean(), dtype=x.data.dtype)
    n = x.data.size

    def backward(g):
        x.requires_grad and x.accumulate(np.full_like(x.data, g / n))

    return make_op(out, (x,), backward)


def sum_(x) -> Tensor:
    x = as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def backward(g):
        x.requires_grad and x.accumulate(np.full_like(x.data, g))

    return make_op(out, (x,), backward)


def l1_loss(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    diff = a.data - b.data
    out = np.asarray(np.abs(diff).mean(), dtype=a.data.dtype)
    n = diff.size

    def backward(g):
        s = np.sign(diff) * (g / n)
        a.requires_grad and a.accumulate(s)
        b.requires_grad and b.accumulate(-s)

    return make_op(out, (a, b), backward)


def l2_loss(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean(), dtype=a.data.dtype)
    n = diff.size

    def backward(g):
        s = diff * (2.0 * g / n)
        a.requires_grad and a.accumulate(s)
        b.requires_grad and b.accumulate(-s)

    return make_op(out, (a, b), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            x.accumulate(out * (g - dot))

    return make_op(out, (x,), backward)


def embedding(table, idx: np.ndarray) -> Tensor:
    """table (K,D); idx any int shape -> (*idx.shape, D)."""
    table = as_tensor(table)
    idx = np.asarray(idx)
    out = table.data[idx]

    def backward(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table.accumulate(dt)

    return make_op(out, (table,), backward)


def softmax_cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean cross entropy with integer targets over the class axis (axis 1).

    logits: (N, K) or (N, K, H, W); targets: (N,) or (N, H, W).
    """
    logits = as_tensor(logits)
    x = logits.data
    targets = np.asarray(targets)
    if x.ndim == 2:
        xm = x
        tg = targets.reshape(-1)
    elif x.ndim == 4:
        n, k, h, w = x.shape
        xm = x.transpose(0, 2, 3, 1).reshape(-1, k)
        tg = targets.reshape(-1)
    else:
        raise ValueError(f"logits must be (N,K) or (N,K,H,W), got {x.shape}")
    zm = xm - xm.max(axis=1, keepdims=True)
    lse = np.log(np.exp(zm).sum(axis=1, keepdims=True))
    logp = zm - lse
    rows = np.arange(xm.shape[0])
    out = np.asarray(-logp[rows, tg].mean(), dtype=x.dtype)

    def backward(g):
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[rows, tg] -= 1.0
            grad *= g / xm.shape[0]
            if x.ndim == 4:
                n, k, h, w = x.shape
                grad = grad.reshape(n, h, w, k).transpose(0, 3, 1, 2)
            logits.accumulate(grad.astype(x.dtype, copy=False))

    return make_op(out, (logits,), backward)


# ---------------------------------------------------------------------------
# convolutions (NCHW)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x, shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(n * ho * wo, c * kh * kw), ho, wo


def _col2im(dcols: np.ndarray, xshape, kh: int, kw: int, stride: int, pad: int,
            ho: int, wo: int) -> np.ndarray:
    n, c, h, w = xshape
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d6[:, :, i, j]
    if pad:
        return dxp[:, :, pad:pad + h, pad:pad + w]
    return dxp


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """x (N,C,H,W), w (O,C,kh,kw), b (O,)."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    n, c, h, wd = x.data.shape
    o, c2, kh, kw = w.data.shape
    if c != c2:
        raise ValueError(f"channel mismatch: input {c}, weight {c2}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, pad)
    wflat = w.data.reshape(o, -1)
    out = cols @ wflat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        if w.requires_grad:
            w.accumulate((gflat.T @ cols).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            b.accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            dcols = gflat @ wflat
            x.accumulate(_col2im(dcols, x.data.shape, kh, kw, stride, pad, ho, wo))

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def conv2d_transpose(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """x (N,I,H,W), w (I,O,kh,kw); output spatial (H-1)*stride + kh - 2*pad."""
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    n, i, h, wd = x.data.shape
    i2, o, kh, kw = w.data.shape
    if i != i2:
        raise ValueError(f"channel mismatch: input {i}, weight {i2}")
    ho = (h - 1) * stride + kh - 2 * pad
    wo = (wd - 1) * stride + kw - 2 * pad
    xf = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(-1, i)
    prod = (xf @ w.data.reshape(i, -1)).reshape(n, h, wd, o, kh, kw)
    prod = prod.transpose(0, 3, 4, 5, 1, 2)  # n,o,kh,kw,h,w
    outp = np.zeros((n, o, ho + 2 * pad, wo + 2 * pad), dtype=x.data.dtype)
    for ki in range(kh):
        for kj in range(kw):
            outp[:, :, ki:ki + stride * h:stride, kj:kj + stride * wd:stride] += prod[:, :, ki, kj]
    out = outp[:, :, pad:pad + ho, pad:pad + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        dprod = np.empty((n, o, kh, kw, h, wd), dtype=g.dtype)
        for ki in range(kh):
            for kj in range(kw):
                dprod[:, :, ki, kj] = gp[:, :, ki:ki + stride * h:stride,
                                         kj:kj + stride * wd:stride]
        dflat = np.ascontiguousarray(dprod.transpose(0, 4, 5, 1, 2, 3)).reshape(
            n * h * wd, -1)
        if w.requires_grad:
            w.accumulate((xf.T @ dflat).reshape(w.data.shape))
        if x.requires_grad:
            dx = (dflat @ w.data.reshape(i, -1).T).reshape(n, h, wd, i)
            x.accumulate(dx.transpose(0, 3, 1, 2))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def causal_mask(kh: int, kw: int, mask_type: str) -> np.ndarray:
    """Raster-order kernel mask: rows above free, same row strictly left;
    type B also passes the center, type A blocks it."""
    if mask_type not in ("A", "B"):
        raise ValueError("mask_type must be 'A' or 'B'")
    m = np.zeros((kh, kw), dtype=np.float32)
    ci, cj = kh // 2, kw // 2
    m[:ci, :] = 1.0
    m[ci, :cj] = 1.0
    if mask_type == "B":
        m[ci, cj] = 1.0
    return m


def masked_conv2d(x, w, b=None, mask_type: str = "B") -> Tensor:
    """Spatially masked same-size convolution (stride 1, odd kernel).

    Composed as conv2d(x, w * mask): masked weight entries therefore get
    exactly zero gradient.
    """
    w = as_tensor(w)
    o, c, kh, kw = w.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("masked conv needs odd kernel sizes")
    m = causal_mask(kh, kw, mask_type).astype(w.data.dtype)
    weff = mul(w, Tensor(m[None, None]))
    return conv2d(x, weff, b, stride=1, pad=kh // 2)


def upsample_nearest(x, factor: int) -> Tensor:
    x = as_tensor(x)
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(g):
        if x.requires_grad:
            n, c, h, w = x.data.shape
            gs = g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
            x.accumulate(gs)

    return make_op(out, (x,), backward)


def gather_pixels(x, pidx: np.ndarray, yidx: np.ndarray, xidx: np.ndarray) -> Tensor:
    """x (P,C,H,W) -> (n,C) rows at (p, :, y, x)."""
    x = as_tensor(x)
    out = np.ascontiguousarray(x.data[pidx, :, yidx, xidx])

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            np.add.at(dx, (pidx, slice(None), yidx, xidx), g)
            x.accumulate(dx)

    return make_op(out, (x,), backward)
