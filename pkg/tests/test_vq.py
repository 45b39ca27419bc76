import numpy as np
import pytest

from boxtex.autodiff import Tensor, ops
from boxtex.vq import (Codebook, embedding_loss, ema_update, init_codebook,
                       perplexity, quantize, straight_through)


def _brute_nearest(entries, z):
    # independent per-vector scan with the same tie rule (first minimum)
    idx = np.empty(z.shape[0], dtype=np.int32)
    for i, v in enumerate(z):
        d = ((entries - v[None, :]) ** 2).sum(axis=1)
        idx[i] = int(np.argmin(d))
    return idx


def test_quantize_matches_brute_force(rng):
    cb = init_codebook(32, 8, rng)
    z = rng.normal(size=(1000, 8)).astype(np.float32)
    zq, idx = quantize(cb, z)
    assert np.array_equal(idx, _brute_nearest(cb.entries, z))
    assert np.array_equal(zq, cb.entries[idx])


def test_quantize_tie_rule_duplicate_entries(rng):
    cb = init_codebook(8, 4, rng)
    cb.entries[5] = cb.entries[2]  # exact duplicate: index 2 must win
    z = cb.entries[2][None, :].repeat(3, axis=0)
    _, idx = quantize(cb, z)
    assert np.array_equal(idx, [2, 2, 2])


def test_quantize_shape_validation(rng):
    cb = init_codebook(8, 4, rng)
    with pytest.raises(ValueError):
        quantize(cb, rng.normal(size=(5, 3)).astype(np.float32))


def test_ema_two_cluster_convergence(rng):
    # acceptance-grade oracle: entries reach the k-means means of two
    # well-separated blobs within 1e-2 in at most 200 updates
    k, d = 2, 3
    mean_a = np.array([2.0, 0.0, 0.0], dtype=np.float32)
    mean_b = np.array([-2.0, 1.0, 0.5], dtype=np.float32)
    cb = Codebook(entries=np.stack([mean_a + 0.5, mean_b - 0.5]),
                  ema_counts=np.ones(k, np.float32),
                  ema_sums=np.stack([mean_a + 0.5, mean_b - 0.5]))
    samples_a = mean_a + rng.normal(size=(4000, d)).astype(np.float32) * 0.05
    samples_b = mean_b + rng.normal(size=(4000, d)).astype(np.float32) * 0.05
    data = np.concatenate([samples_a, samples_b])
    oracle = np.stack([samples_a.mean(axis=0), samples_b.mean(axis=0)])
    for step in range(200):
        batch = data[rng.integers(0, data.shape[0], size=256)]
        _, idx = quantize(cb, batch)
        ema_update(cb, batch, idx)
    err = np.abs(cb.entries - oracle).max()
    assert err < 1e-2


def test_ema_unassigned_entry_drifts_nowhere(rng):
    cb = init_codebook(4, 2, rng)
    before = cb.entries.copy()
    z = cb.entries[0][None, :].repeat(16, axis=0)
    ema_update(cb, z, np.zeros(16, dtype=np.int64))
    # entries 1..3 got no assignments: count and sum decay together, the
    # normalized entry stays put
    assert np.allclose(cb.entries[1:], before[1:], atol=1e-6)


def test_straight_through_values_and_gradient(rng):
    z = rng.normal(size=(6, 4)).astype(np.float32)
    z_e = Tensor(z.copy())
    z_e.requires_grad = True
    cb = init_codebook(8, 4, rng)
    z_q, _ = quantize(cb, z)
    out = straight_through(z_e, z_q)
    # value is z_q up to one float32 ulp (z_e + (z_q - z_e) re-rounds)
    assert np.allclose(out.data, z_q, atol=1e-6)
    upstream = rng.normal(size=z.shape).astype(np.float32)
    ops.sum_(ops.mul(out, Tensor(upstream))).backward()
    # elementwise exact: the quantizer is invisible to the gradient
    assert np.array_equal(z_e.grad, upstream)


def test_embedding_loss_value_and_gradient(rng):
    z = rng.normal(size=(5, 3)).astype(np.float64)
    zq = rng.normal(size=(5, 3)).astype(np.float64)
    z_e = Tensor(z.copy())
    z_e.requires_grad = True
    loss = embedding_loss(z_e, zq, beta1=0.25)
    expect = (1.0 + 0.25) * ((z - zq) ** 2).sum()
    assert float(loss.data) == pytest.approx(expect, rel=1e-6)
    loss.backward()
    assert np.allclose(z_e.grad, 2.0 * 0.25 * (z - zq), atol=1e-10)


def test_embedding_loss_mean_reduction(rng):
    z = rng.normal(size=(4, 2))
    zq = rng.normal(size=(4, 2))
    z_e = Tensor(z.copy())
    loss = embedding_loss(z_e, zq, beta1=0.25, reduction="mean")
    expect = (1.25 * ((z - zq) ** 2).sum()) / z.size
    assert float(loss.data) == pytest.approx(expect, rel=1e-6)
    with pytest.raises(ValueError):
        embedding_loss(z_e, zq, reduction="max")


def test_perplexity_bounds():
    assert perplexity(np.arange(16) % 16, 16) == pytest.approx(16.0)
    assert perplexity(np.zeros(100, dtype=np.int64), 16) == pytest.approx(1.0)
    mid = perplexity(np.array([0, 0, 1, 1, 2, 3]), 16)
    assert 1.0 < mid < 16.0
