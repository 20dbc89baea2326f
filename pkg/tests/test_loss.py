import math

import numpy as np
import pytest

from cpn import autodiff as ad
from cpn.efd import FourierDescriptor, descriptor_dim, sample_contour, uniform_ts
from cpn.loss import (
    LossWeights,
    contour_loss,
    coord_loss,
    cpn_loss,
    default_beta,
    detection_loss,
    object_terms,
    refine_loss,
    repr_loss,
)
from cpn.refine import refine


def rand_desc(rng, order, scale=4.0, centre=(16.0, 16.0)):
    d = FourierDescriptor(rng.normal(size=order + 1) * scale, rng.normal(size=order) * scale,
                          rng.normal(size=order + 1) * scale, rng.normal(size=order) * scale)
    return d.translated(*centre)


def test_detection_loss_at_half():
    o = np.array([[0, 1], [1, 0]])
    assert detection_loss(np.zeros((2, 2)), o).item() == pytest.approx(math.log(2), abs=1e-12)


def test_detection_loss_decreases_to_zero():
    o = np.array([0, 1, 1, 0])
    vals = [detection_loss((2 * o - 1) * m, o).item() for m in (0.0, 2.0, 10.0, 50.0)]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] < 1e-20


def test_detection_loss_direct_oracle():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 5)) * 2
    o = (rng.random((4, 5)) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-z))
    ref = np.mean(-(o * np.log(p) + (1 - o) * np.log(1 - p)))
    assert abs(detection_loss(z, o).item() - ref) < 1e-9


def test_detection_loss_rejects_soft_targets():
    with pytest.raises(ValueError):
        detection_loss(np.zeros(3), [0, 0.5, 1])


def test_coord_loss_examples():
    assert coord_loss(1.0, 2.0, 1.0, 2.0) == 0
    assert coord_loss(0.0, 0.0, 1.0, 0.0) == 0.5
    assert coord_loss(2.0, 3.0, 5.0, -1.0) == 3.5


def test_contour_loss_examples():
    rng = np.random.default_rng(1)
    d = rand_desc(rng, 4)
    ts = uniform_ts(64)
    assert contour_loss(d, d, ts).item() == 0.0
    shifted = d.translated(1.0, 0.0)
    for ts in (uniform_ts(64), np.sort(rng.uniform(0, 1, 17))):
        assert contour_loss(d, shifted, ts).item() == pytest.approx(0.5, abs=1e-12)


def test_contour_loss_direct_summation():
    rng = np.random.default_rng(2)
    t, p = rand_desc(rng, 5), rand_desc(rng, 5)
    ts = uniform_ts(64)
    a = sample_contour(t, ts)
    b = sample_contour(p, ts)
    ref = sum(0.5 * (abs(a[s, 0] - b[s, 0]) + abs(a[s, 1] - b[s, 1])) for s in range(64)) / 64
    assert contour_loss(t, p, ts).item() == pytest.approx(ref, abs=1e-10)


def test_contour_loss_batch_and_errors():
    rng = np.random.default_rng(3)
    T = np.stack([rand_desc(rng, 2).to_vector() for _ in range(3)])
    P = np.stack([rand_desc(rng, 2).to_vector() for _ in range(3)])
    ts = uniform_ts(8)
    batch = contour_loss(T, P, ts).data
    for k in range(3):
        assert batch[k] == pytest.approx(contour_loss(T[k], P[k], ts).item(), abs=1e-14)
    with pytest.raises(ValueError):
        contour_loss(T, P, [])
    with pytest.raises(ValueError):
        contour_loss(T, P[:, :-4], ts)


def test_refine_loss_zero_field_integer_targets():
    target = FourierDescriptor.zeros(2, offset=(10.0, 12.0))
    pred = FourierDescriptor([10.3, 0.05, -0.1], [0.1, 0.0], [11.8, 0.0, 0.1], [-0.1, 0.05])
    assert refine_loss(target, pred, np.zeros((2, 24, 24)), uniform_ts(16), 2).item() == 0.0


def test_refine_loss_perfect_offset_field():
    sigma = 2.0
    tx, ty = 9.0, 7.0
    target = FourierDescriptor.zeros(1, offset=(tx, ty))
    pred = FourierDescriptor([tx + 0.8, 0.4], [-0.3], [ty - 0.6, 0.2], [0.3])
    jj, ii = np.meshgrid(np.arange(20), np.arange(20))
    field = np.stack([np.arctanh(np.clip(tx - jj, -1.5, 1.5) / sigma),
                      np.arctanh(np.clip(ty - ii, -1.5, 1.5) / sigma)])
    assert refine_loss(target, pred, field, uniform_ts(16), 3, sigma).item() == pytest.approx(0.0, abs=1e-12)


def test_refine_loss_composes_refine_and_coord_loss():
    rng = np.random.default_rng(4)
    t, p = rand_desc(rng, 3), rand_desc(rng, 3)
    field = rng.normal(size=(2, 32, 32))
    ts = uniform_ts(32)
    pts = sample_contour(p, ts)
    rx, ry = refine(pts[:, 0], pts[:, 1], field, 4, 2.0)
    tgt = sample_contour(t, ts)
    ref = np.mean(coord_loss(tgt[:, 0], tgt[:, 1], rx, ry))
    assert refine_loss(t, p, field, ts, 4, 2.0).item() == pytest.approx(ref, abs=1e-12)


def test_refine_loss_gradient_only_reaches_field():
    rng = np.random.default_rng(5)
    t = rand_desc(rng, 2).to_vector()
    p = ad.Tensor(rand_desc(rng, 2).to_vector()[None], requires_grad=True)
    v = ad.Tensor(rng.normal(size=(1, 2, 32, 32)), requires_grad=True)
    ad.backward(refine_loss(t, p, v, uniform_ts(16), 2).sum())
    assert p.grad is None
    assert np.any(v.grad != 0)


def test_repr_loss_examples():
    a = FourierDescriptor([1.0, 2.0], [3.0], [4.0, 5.0], [6.0])
    assert repr_loss(a, a, [1, 1]).item() == 0.0
    moved = FourierDescriptor([3.0, 2.0], [3.0], [4.0, 5.0], [6.0])
    assert repr_loss(a, moved, [1, 1]).item() == 2.0
    b = FourierDescriptor([0.0, 1.0, 2.0], [1.0, 5.0], [0.0, 0.0, 0.0], [0.0, 0.0])
    b_hat = FourierDescriptor([0.0, 1.0, 2.0], [1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0])
    assert repr_loss(b, b_hat, [1, 0.5, 0.25]).item() == 1.0
    with pytest.raises(ValueError):
        repr_loss(a, a, [1, 1, 1])


def test_repr_loss_direct_oracle():
    rng = np.random.default_rng(6)
    t, p = rand_desc(rng, 4), rand_desc(rng, 4)
    beta = default_beta(4)
    ref = (np.sum(beta * np.abs(t.a - p.a)) + np.sum(beta[1:] * np.abs(t.b - p.b))
           + np.sum(beta * np.abs(t.c - p.c)) + np.sum(beta[1:] * np.abs(t.d - p.d)))
    assert repr_loss(t, p, beta).item() == pytest.approx(ref, abs=1e-12)


def test_loss_weights():
    w = LossWeights(3)
    np.testing.assert_array_equal(w.beta, [1, 0.5, 0.25, 0.125])
    assert w.lam == 1.0
    with pytest.raises(ValueError):
        LossWeights(3, beta=[1, 1])
    with pytest.raises(ValueError):
        LossWeights(3, lam=-1)


def test_cpn_loss_all_negative_is_detection_loss():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(6, 6))
    o = np.zeros((6, 6))
    assert cpn_loss(z, o, None).item() == detection_loss(z, o).item()


def test_cpn_loss_single_positive_lambda_zero():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(4, 4))
    o = np.zeros((4, 4))
    o[2, 1] = 1
    t, p = rand_desc(rng, 2), rand_desc(rng, 2)
    field = rng.normal(size=(2, 32, 32))
    ts = uniform_ts(16)
    terms = object_terms(t, p, field, ts, LossWeights(2, lam=0.0))
    expect = detection_loss(z, o).item() + contour_loss(t, p, ts).item() + refine_loss(t, p, field, ts).item()
    assert cpn_loss(z, o, terms).item() == pytest.approx(expect, abs=1e-12)


def test_cpn_loss_per_pixel_oracle():
    rng = np.random.default_rng(9)
    order, H = 3, 5
    z = rng.normal(size=(H, H))
    o = (rng.random((H, H)) > 0.6).astype(float)
    pos = np.flatnonzero(o)
    T = np.stack([rand_desc(rng, order).to_vector() for _ in pos])
    P = np.stack([rand_desc(rng, order).to_vector() for _ in pos])
    field = rng.normal(size=(2, 32, 32))
    ts = uniform_ts(24)
    w = LossWeights(order, lam=0.7)
    got = cpn_loss(z, o, object_terms(T, P, field, ts, w)).item()

    # Per-pixel evaluation with scalar arithmetic.
    flat_z, flat_o = z.reshape(-1), o.reshape(-1)
    inst = 0.0
    for zi, oi in zip(flat_z, flat_o):
        p = 1 / (1 + math.exp(-zi))
        inst += -(oi * math.log(p) + (1 - oi) * math.log(1 - p))
    inst /= flat_z.size
    obj = 0.0
    for k in range(len(pos)):
        td = FourierDescriptor.from_vector(T[k], order)
        pd = FourierDescriptor.from_vector(P[k], order)
        a = sample_contour(td, ts)
        b = sample_contour(pd, ts)
        rx, ry = refine(b[:, 0], b[:, 1], field, 4, 2.0)
        lc = np.mean(0.5 * (np.abs(a[:, 0] - b[:, 0]) + np.abs(a[:, 1] - b[:, 1])))
        lr = np.mean(0.5 * (np.abs(a[:, 0] - rx) + np.abs(a[:, 1] - ry)))
        beta = w.beta
        lrep = (np.sum(beta * np.abs(td.a - pd.a)) + np.sum(beta[1:] * np.abs(td.b - pd.b))
                + np.sum(beta * np.abs(td.c - pd.c)) + np.sum(beta[1:] * np.abs(td.d - pd.d)))
        obj += lc + lr + 0.7 * lrep
    assert got == pytest.approx(inst + obj / len(pos), abs=1e-9)


def test_cpn_loss_shape_errors():
    with pytest.raises(ValueError):
        cpn_loss(np.zeros((3, 3)), np.zeros((3, 4)), None)
    o = np.zeros((2, 2))
    o[0, 0] = 1
    with pytest.raises(ValueError):
        cpn_loss(np.zeros((2, 2)), o, ad.Tensor(np.ones(3)))


def test_losses_non_negative_and_zero_at_perfect():
    rng = np.random.default_rng(10)
    for _ in range(20):
        t, p = rand_desc(rng, 3), rand_desc(rng, 3)
        ts = uniform_ts(16)
        field = rng.normal(size=(2, 32, 32))
        assert contour_loss(t, p, ts).item() >= 0
        assert refine_loss(t, p, field, ts).item() >= 0
        assert repr_loss(t, p, default_beta(3)).item() >= 0
        assert repr_loss(t, t, default_beta(3)).item() == 0


def test_object_terms_gradcheck():
    rng = np.random.default_rng(11)
    order = 2
    T = np.stack([rand_desc(rng, order).to_vector() for _ in range(3)])
    P = np.stack([rand_desc(rng, order).to_vector() for _ in range(3)])
    ts = uniform_ts(12)
    w = LossWeights(order)
    # refinement off so every term is smooth in the prediction away from kinks
    err = ad.grad_check(lambda t: object_terms(T, t, np.zeros((2, 32, 32)), ts, w, iterations=0).sum(), P)
    assert err < 1e-3
    assert descriptor_dim(order) == P.shape[1]
