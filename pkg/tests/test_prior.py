import numpy as np
import pytest

from boxtex.prior import (PriorSpec, cond_map, forward, init_prior, nll,
                          sample_prior, train_prior)


def _tiny_spec(**over):
    base = dict(k=8, height=6, width=3, channels=8, blocks=2)
    base.update(over)
    return PriorSpec(**base)


def test_receptive_rows():
    spec = _tiny_spec(first_kernel=5, blocks=3)
    assert spec.receptive_rows == 5


def test_initial_ce_near_uniform(rng):
    spec = _tiny_spec(k=16)
    params = init_prior(spec, rng)
    idx = rng.integers(0, 16, size=(4, 6, 3))
    ce = nll(params, spec, idx)
    assert ce == pytest.approx(np.log(16.0), rel=0.05)


def test_forward_causality_exact(rng):
    spec = _tiny_spec()
    params = init_prior(spec, rng)
    idx = rng.integers(0, spec.k, size=(1, 6, 3))
    base = forward(params, spec, idx).data
    # perturb the symbol at raster position (3, 1): logits at positions
    # up to and including (3, 1) must not move
    pert = idx.copy()
    pert[0, 3, 1] = (pert[0, 3, 1] + 3) % spec.k
    out = forward(params, spec, pert).data
    flat_base = base.reshape(1, spec.k, -1)
    flat_out = out.reshape(1, spec.k, -1)
    cut = 3 * spec.width + 1
    assert np.array_equal(flat_base[..., :cut + 1], flat_out[..., :cut + 1])
    assert np.abs(flat_base[..., cut + 1:] - flat_out[..., cut + 1:]).max() > 0


def test_forward_causality_with_attention(rng):
    spec = _tiny_spec(use_attention=True)
    params = init_prior(spec, rng)
    idx = rng.integers(0, spec.k, size=(1, 6, 3))
    base = forward(params, spec, idx).data
    pert = idx.copy()
    pert[0, 2, 2] = (pert[0, 2, 2] + 1) % spec.k
    out = forward(params, spec, pert).data
    cut = 2 * spec.width + 2
    fb = base.reshape(1, spec.k, -1)
    fo = out.reshape(1, spec.k, -1)
    assert np.array_equal(fb[..., :cut + 1], fo[..., :cut + 1])


def test_train_reduces_ce_and_conditioning_steers(rng):
    # two symbols, each tied to a one-hot condition
    spec = _tiny_spec(k=4, height=4, width=4, cond_dim=2, cond_channels=4)
    data = np.zeros((32, 4, 4), dtype=np.int64)
    conds = np.zeros((32, 2), dtype=np.float32)
    for i in range(32):
        s = i % 2
        data[i] = 1 if s == 0 else 2
        conds[i, s] = 1.0
    params, hist = train_prior(data, spec, rng, conds=conds, iters=220, lr=2e-3,
                               batch=8)
    assert hist.ce[-1] < hist.ce[0] * 0.2
    for s, want in ((0, 1), (1, 2)):
        c = np.zeros((4, 2), dtype=np.float32)
        c[:, s] = 1.0
        out = sample_prior(params, spec, 4, np.random.default_rng(1), cond=c,
                           temperature=0.2)
        frac = (out == want).mean()
        assert frac > 0.9, (s, want, frac)


def test_sample_deterministic_at_zero_temperature(rng):
    spec = _tiny_spec()
    params = init_prior(spec, rng)
    a = sample_prior(params, spec, 2, np.random.default_rng(3), temperature=0.0)
    b = sample_prior(params, spec, 2, np.random.default_rng(99), temperature=0.0)
    assert np.array_equal(a, b)  # argmax ignores the stream
    c = sample_prior(params, spec, 2, np.random.default_rng(3), temperature=1.0)
    d = sample_prior(params, spec, 2, np.random.default_rng(3), temperature=1.0)
    assert np.array_equal(c, d)  # same seed, same stream


def test_sample_shape_and_range(rng):
    spec = _tiny_spec()
    params = init_prior(spec, rng)
    out = sample_prior(params, spec, 3, rng)
    assert out.shape == (3, 6, 3)
    assert out.dtype == np.int64 or out.dtype == np.int32
    assert out.min() >= 0 and out.max() < spec.k


def test_row_crop_matches_full_context(rng):
    # sampling uses a cropped window of past rows; its logits at the frontier
    # row must match the full-image forward pass
    spec = _tiny_spec(height=12, width=4, blocks=2, first_kernel=5)
    params = init_prior(spec, rng)
    idx = rng.integers(0, spec.k, size=(1, 12, 4))
    full = forward(params, spec, idx).data
    rows_back = spec.receptive_rows
    y = 9
    lo = y - rows_back
    crop = forward(params, spec, idx[:, lo:y + 1]).data
    assert np.abs(crop[0, :, y - lo, :] - full[0, :, y, :]).max() < 1e-5


def test_coarse_conditioning_shapes(rng):
    # bottom-level setup: condition on a half-resolution index grid
    spec = _tiny_spec(k=8, height=8, width=4, cond_codes=8, cond_channels=4)
    params = init_prior(spec, rng)
    coarse = rng.integers(0, 8, size=(2, 4, 2))
    cm = cond_map(params, spec, None, coarse)
    assert cm.data.shape == (2, 4, 8, 4)
    idx = rng.integers(0, spec.k, size=(2, 8, 4))
    logits = forward(params, spec, idx, coarse=coarse)
    assert logits.data.shape == (2, 8, 8, 4)
    out = sample_prior(params, spec, 2, rng, coarse=coarse)
    assert out.shape == (2, 8, 4)


def test_vector_cond_map_shape(rng):
    spec = _tiny_spec(cond_dim=5, cond_channels=3)
    params = init_prior(spec, rng)
    cond = rng.normal(size=(2, 5)).astype(np.float32)
    cm = cond_map(params, spec, cond, None)
    assert cm.data.shape == (2, 3, 6, 3)
    assert cond_map(params, _tiny_spec(), None, None) is None


def test_nll_improves_on_constant_data(rng):
    spec = _tiny_spec(k=4, height=4, width=4)
    data = np.full((16, 4, 4), 3, dtype=np.int64)
    params, hist = train_prior(data, spec, rng, iters=120, lr=2e-3, batch=4)
    assert nll(params, spec, data[:4]) < 0.1
    out = sample_prior(params, spec, 2, rng, temperature=0.0)
    assert (out == 3).all()
