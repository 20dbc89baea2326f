import numpy as np
import pytest

from cpn import autodiff as ad
from cpn.autodiff import Tensor, backward, grad_check


def rng(seed=0):
    return np.random.default_rng(seed)


def away_from_zero(x, margin=0.05):
    # Nudge values off relu/abs kinks so finite differences stay on one side.
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def test_relu_sigmoid_tanh_values():
    assert ad.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    assert ad.tanh(Tensor(0.0)).item() == 0.0


def test_sigmoid_is_stable_for_large_inputs():
    out = ad.sigmoid(Tensor([-1000.0, 1000.0])).data
    assert out.tolist() == [0.0, 1.0]


def test_conv2d_identity_kernel():
    x = rng().normal(size=(2, 3, 5, 4))
    k = np.zeros((3, 3, 1, 1))
    k[np.arange(3), np.arange(3)] = 1.0
    out = ad.conv2d(Tensor(x), Tensor(k))
    np.testing.assert_array_equal(out.data, x)


def test_conv2d_matches_direct_loops():
    g = rng(1)
    x = g.normal(size=(2, 2, 6, 5))
    k = g.normal(size=(3, 2, 3, 3))
    b = g.normal(size=3)
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        Ho = (xp.shape[2] - 3) // stride + 1
        Wo = (xp.shape[3] - 3) // stride + 1
        ref = np.zeros((2, 3, Ho, Wo))
        for n in range(2):
            for co in range(3):
                for i in range(Ho):
                    for j in range(Wo):
                        patch = xp[n, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
                        ref[n, co, i, j] = np.sum(patch * k[co]) + b[co]
        np.testing.assert_allclose(out, ref, atol=1e-12)


def test_shape_errors_are_descriptive():
    with pytest.raises(ad.ShapeError, match="input channels"):
        ad.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ad.ShapeError, match="smaller than kernel"):
        ad.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))
    with pytest.raises(ad.ShapeError):
        ad.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ad.ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_nan_input_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        Tensor([1.0, np.nan])


def test_sum_gives_ones():
    x = Tensor(rng().normal(size=(3, 4, 2)), requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4, 2)))


def test_sigmoid_grad_at_zero():
    x = Tensor(0.0, requires_grad=True)
    backward(ad.sigmoid(x))
    assert x.grad == pytest.approx(0.25, abs=1e-15)


def test_reuse_accumulates_exactly():
    x = Tensor(rng().normal(size=5), requires_grad=True)
    y = x + x
    backward((y * Tensor(np.arange(5.0))).sum())
    np.testing.assert_array_equal(x.grad, 2 * np.arange(5.0))


def test_diamond_graph_visits_each_node_once():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    h = ad.tanh(x)
    y = (h * h + h).sum()
    backward(y)
    t = np.tanh(x.data)
    np.testing.assert_allclose(x.grad, (2 * t + 1) * (1 - t * t), rtol=1e-14)


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(x * 2.0)
    with pytest.raises(RuntimeError, match="detached"):
        backward(Tensor(np.ones(3)).sum())


def test_grad_check_rejects_vector_output():
    with pytest.raises(ValueError):
        grad_check(lambda t: t * 2.0, np.ones(3))


def test_grad_check_sum_of_squares():
    x = rng(2).normal(size=(4, 3))
    assert grad_check(lambda t: (t * t).sum(), x) < 1e-6


def test_grad_check_conv_relu_sum():
    g = rng(3)
    k = Tensor(g.normal(size=(2, 1, 3, 3)))
    x = g.normal(size=(1, 1, 6, 6))
    pre = ad.conv2d(Tensor(x), k, padding=1).data
    assert np.min(np.abs(pre)) > 1e-3  # no kink within epsilon
    assert grad_check(lambda t: ad.relu(ad.conv2d(t, k, padding=1)).sum(), x) < 1e-4


def test_grad_check_negative_control():
    def bad_square(t):
        # Forward t^2, but the backward rule pretends the derivative is t.
        return ad._node(t.data ** 2, (t,), lambda g: (g * t.data,), "bad").sum()

    x = rng(4).normal(size=6) + 2.0
    assert grad_check(bad_square, x) > 1e-2


# One entry per op: (name, scalar function of the probe tensor, probe value).
# Every random weight is drawn up front so each case is a fixed function.
def _op_cases():
    g = rng(5)
    img = g.normal(size=(2, 3, 4, 4))
    other = g.normal(size=(2, 3, 4, 4))
    k = g.normal(size=(2, 3, 3, 3))
    w = g.normal(size=(4, 5))
    mat = g.normal(size=(5, 3))
    scale = g.normal(size=3)
    shift = g.normal(size=3)
    field = g.normal(size=(2, 2, 4, 4))
    # distinct values so each pooled maximum is unambiguous
    pool_in = g.permutation(32).reshape(1, 2, 4, 4) * 0.1
    r_conv = Tensor(g.normal(size=(2, 2, 4, 4)))
    r_lin = Tensor(g.normal(size=(3, 4)))
    r_mm = Tensor(g.normal(size=(4, 3)))
    r_cat = Tensor(g.normal(size=(2, 9, 4, 4)))
    r_up = Tensor(g.normal(size=(2, 3, 8, 8)))
    r_pool = Tensor(g.normal(size=(1, 2, 2, 2)))
    r_rows = Tensor(g.normal(size=(4, 3)))
    r_mean = Tensor(g.normal(size=(2, 4, 4)))
    o = Tensor(other)
    targets = (other > 0).astype(float)
    return [
        ("conv2d_input", lambda t: (ad.conv2d(t, Tensor(k), padding=1) * r_conv).sum(), img),
        ("conv2d_kernel_strided", lambda t: ad.conv2d(Tensor(img), t, Tensor(np.ones(2)), stride=2, padding=1).sum(), k),
        ("linear", lambda t: (ad.linear(t, Tensor(w), Tensor(np.arange(4.0))) * r_lin).sum(), g.normal(size=(3, 5))),
        ("linear_weight", lambda t: (ad.linear(Tensor(mat.T), t) * r_lin).sum(), w),
        ("relu", lambda t: (ad.relu(t) * o).sum(), away_from_zero(img)),
        ("sigmoid", lambda t: (ad.sigmoid(t) * o).sum(), img),
        ("tanh", lambda t: (ad.tanh(t) * o).sum(), img),
        ("abs", lambda t: (ad.absolute(t) * o).sum(), away_from_zero(img)),
        ("add_broadcast", lambda t: ((t + o) * o).sum(), g.normal(size=(1, 3, 1, 4))),
        ("mul", lambda t: (t * o * t).sum(), img),
        ("sub", lambda t: ((o - t) * o).sum(), img),
        ("matmul", lambda t: ((t @ Tensor(mat)) * r_mm).sum(), g.normal(size=(4, 5))),
        ("concat_channels", lambda t: (ad.concat_channels([t, o, t]) * r_cat).sum(), img),
        ("upsample_nearest", lambda t: (ad.upsample_nearest(t, 2) * r_up).sum(), img),
        ("maxpool2d", lambda t: (ad.maxpool2d(t, 2) * r_pool).sum(), pool_in),
        ("instance_normalize", lambda t: (ad.instance_normalize(t, Tensor(scale), Tensor(shift)) * o).sum(), img),
        ("instance_norm_scale", lambda t: (ad.instance_normalize(Tensor(img), t, Tensor(shift)) * o).sum(), scale),
        ("instance_norm_shift", lambda t: (ad.instance_normalize(Tensor(img), Tensor(scale), t) * o).sum(), shift),
        ("transpose_reshape", lambda t: (t.transpose(0, 2, 3, 1).reshape(-1, 3) @ Tensor(mat.T)).sum(), img),
        ("take_rows", lambda t: (ad.take_rows(t, [0, 2, 2, 4]) * r_rows).sum(), mat),
        ("gather_pixels", lambda t: (ad.gather_pixels(t, [0, 1, 1], [1, 0, 0], [2, 3, 3], [0, 1, 1]) * Tensor([1.0, 2.0, 3.0])).sum(), field),
        ("bce_with_logits", lambda t: ad.bce_with_logits(t, targets), img),
        ("mean_axis", lambda t: (t.mean(axis=1) * r_mean).sum(), img),
    ]


OP_CASES = _op_cases()


@pytest.mark.parametrize("name,fn,x", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_every_op_passes_grad_check(name, fn, x):
    assert grad_check(fn, x, eps=1e-5) < 1e-4


def test_bce_matches_direct_formula():
    g = rng(6)
    z = g.normal(size=50) * 3
    t = (g.random(50) > 0.5).astype(float)
    p = 1 / (1 + np.exp(-z))
    direct = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert ad.bce_with_logits(Tensor(z), t).item() == pytest.approx(direct, abs=1e-12)


def test_determinism_bit_identical():
    def run():
        g = rng(7)
        x = Tensor(g.normal(size=(2, 1, 8, 8)), requires_grad=True)
        k = Tensor(g.normal(size=(3, 1, 3, 3)), requires_grad=True)
        y = ad.instance_normalize(ad.relu(ad.conv2d(x, k, padding=1)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        loss = ad.maxpool2d(y, 2).sum()
        backward(loss)
        return loss.data.copy(), x.grad.copy(), k.grad.copy()

    a, b = run(), run()
    for u, v in zip(a, b):
        assert u.tobytes() == v.tobytes()


def test_instance_normalize_statistics_and_batch_independence():
    g = rng(11)
    x = g.normal(size=(3, 2, 5, 4)) * 4 + 7
    scale, shift = np.array([1.0, 2.0]), np.array([0.0, -1.0])
    y = ad.instance_normalize(Tensor(x), Tensor(scale), Tensor(shift)).data
    z = (y - shift[None, :, None, None]) / scale[None, :, None, None]
    np.testing.assert_allclose(z.mean(axis=(2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(z.var(axis=(2, 3)), 1.0, rtol=1e-5)
    alone = ad.instance_normalize(Tensor(x[1:2]), Tensor(scale), Tensor(shift)).data
    assert alone.tobytes() == y[1:2].tobytes()
