import numpy as np
import pytest

from boxtex.autodiff import Tensor, no_grad
from boxtex.geom import DeformedBox, fit_deformed_box, geometry_vector, template_box
from boxtex.geomvae import (STRUCT_SLOT, StructureCode, init_vae, kl_term,
                            encode_mean, decode_values, realize_box,
                            spvae_decode_vec, spvae_input, spvae_split,
                            spvae_target, structure_code, train_spvae,
                            train_vae, vae_decode, vae_encode)
from boxtex.synthetic import box_part_mesh


def _boxes(labels, rng):
    out = {}
    for i, lbl in enumerate(labels):
        part = box_part_mesh(lbl, (0.3 * i, 0.0, 0.0), (0.2, 0.3, 0.2))
        out[lbl] = fit_deformed_box(part, 4, iters=10)
    return out


def test_structure_code_slots(rng):
    labels = ["back", "seat"]
    boxes = _boxes(labels, rng)
    sc = structure_code("chair", boxes)
    assert sc.flags.shape == (6,)  # chair has six canonical slots
    assert sc.centers.shape == (6, 3)
    assert sc.half_extents.shape == (6, 3)
    # back and seat are the first two canonical labels; the rest are absent
    assert np.array_equal(sc.flags, [1, 1, 0, 0, 0, 0])
    for s in range(2, 6):
        assert np.array_equal(sc.centers[s], np.zeros(3))
        assert np.array_equal(sc.half_extents[s], np.zeros(3))
    vec = sc.to_vector()
    assert vec.shape == (6 * STRUCT_SLOT,)
    back = StructureCode.from_vector(vec, 6)
    assert np.array_equal(back.flags, sc.flags)
    assert np.array_equal(back.centers, sc.centers)
    assert np.array_equal(back.half_extents, sc.half_extents)


def test_vae_encode_decode_shapes(rng):
    params = init_vae(in_dim=12, hidden=16, z_dim=4, rng=rng)
    x = Tensor(rng.normal(size=(3, 12)).astype(np.float32))
    with no_grad():
        mu, logvar = vae_encode(params, x)
        out = vae_decode(params, mu)
    assert mu.data.shape == (3, 4)
    assert logvar.data.shape == (3, 4)
    assert out.data.shape == (3, 12)


def test_kl_term_zero_at_standard_normal():
    mu = Tensor(np.zeros((2, 4)))
    logvar = Tensor(np.zeros((2, 4)))
    assert float(kl_term(mu, logvar).data) == pytest.approx(0.0, abs=1e-9)
    off = Tensor(np.ones((2, 4)))
    assert float(kl_term(off, logvar).data) > 0.0


def test_train_vae_reduces_loss(rng):
    data = rng.normal(size=(64, 10)).astype(np.float32) * 0.3
    params, hist = train_vae(data, hidden=32, z_dim=4, rng=rng, iters=300)
    assert len(hist.recon) == 300
    assert np.mean(hist.recon[-30:]) < np.mean(hist.recon[:30]) * 0.8


def test_encode_mean_deterministic(rng):
    data = rng.normal(size=(16, 8)).astype(np.float32)
    params, _ = train_vae(data, hidden=16, z_dim=3, rng=rng, iters=50)
    mu1, lv1 = encode_mean(params, data[:4])
    mu2, _ = encode_mean(params, data[:4])
    assert np.array_equal(mu1, mu2)
    assert mu1.shape == (4, 3)
    assert lv1.shape == (4, 3)
    out = decode_values(params, mu1)
    assert out.shape == (4, 8)


def test_part_vector_roundtrip_through_vae(rng):
    # overfit a tiny geometry set: decoded displacement vectors stay close
    vecs = []
    for i in range(6):
        part = box_part_mesh("seat", (0, 0, 0),
                             (0.3 + 0.05 * i, 0.2, 0.25 + 0.03 * i))
        box = fit_deformed_box(part, 4, iters=10)
        vecs.append(geometry_vector(box).values)
    data = np.stack(vecs)
    params, _ = train_vae(data, hidden=64, z_dim=4, rng=rng, iters=600,
                          kl_weight=1e-4)
    mu, _ = encode_mean(params, data)
    out = decode_values(params, mu)
    assert np.abs(out - data).mean() < 0.05


def test_spvae_input_target_split_roundtrip(rng):
    labels = ["back", "seat"]
    boxes = _boxes(labels, rng)
    sc = structure_code("chair", boxes)
    z = {lbl: rng.normal(size=4).astype(np.float32) for lbl in labels}
    vec = spvae_input("chair", z, sc, z_dim=4)
    assert vec.shape == (6 * (STRUCT_SLOT + 4),)
    target = spvae_target("chair", z, sc, z_dim=4)
    assert np.array_equal(vec, target)
    # saturate the flag channel so the sigmoid in spvae_split recovers 0/1
    raw = vec.astype(np.float64).reshape(6, 4 + STRUCT_SLOT).copy()
    raw[:, 4] = np.where(raw[:, 4] > 0.5, 60.0, -60.0)
    dec = spvae_split(raw.reshape(-1), slots=6, z_dim=4)
    assert np.array_equal(dec.structure.flags, sc.flags)
    assert np.allclose(dec.part_latents[0], z["back"], atol=1e-6)
    assert np.allclose(dec.part_latents[1], z["seat"], atol=1e-6)
    assert np.allclose(dec.structure.centers, sc.centers, atol=1e-6)
    assert np.allclose(dec.structure.half_extents, sc.half_extents, atol=1e-6)
    assert dec.raw_flags.min() >= 0.0 and dec.raw_flags.max() <= 1.0


def test_train_spvae_and_decode(rng):
    labels = ["back", "seat"]
    rows = []
    for i in range(8):
        boxes = _boxes(labels, rng)
        sc = structure_code("chair", boxes)
        z = {lbl: rng.normal(size=4).astype(np.float32) * 0.2 for lbl in labels}
        rows.append(spvae_input("chair", z, sc, z_dim=4))
    data = np.stack(rows)
    params, hist = train_spvae(data, slots=6, z_dim=4, hidden=64, latent=8,
                               rng=rng, iters=300)
    assert np.mean(hist.recon[-30:]) < np.mean(hist.recon[:30])
    mu, _ = encode_mean(params, data[:2])
    dec = spvae_decode_vec(params, mu[0], slots=6, z_dim=4)
    assert dec.structure.flags.shape == (6,)
    assert dec.part_latents.shape == (6, 4)


def test_realize_box_and_sample_shape(rng):
    vecs = []
    for i in range(4):
        part = box_part_mesh("seat", (0, 0, 0), (0.3, 0.2, 0.25))
        box = fit_deformed_box(part, 4, iters=8)
        vecs.append(geometry_vector(box).values)
    data = np.stack(vecs)
    pvae, _ = train_vae(data, hidden=32, z_dim=4, rng=rng, iters=80)
    mu, _ = encode_mean(pvae, data[:1])
    box = realize_box(pvae, mu[0], grid_n=4,
                      center=np.array([1.0, 2.0, 3.0]),
                      half=np.array([0.5, 0.25, 0.4]))
    assert isinstance(box, DeformedBox)
    c = 0.5 * (box.vertices.min(axis=0) + box.vertices.max(axis=0))
    assert np.allclose(c, [1.0, 2.0, 3.0], atol=0.2)
