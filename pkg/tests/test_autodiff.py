"""Engine tests: forward values, vjps against finite differences, graph
semantics (fan-out, repeated backward), and the checkpoint format.

Gradient assertions lean on grad_check, so the first tests validate
grad_check itself against hand-derived gradients and make sure it actually
fails when fed a wrong vjp.
"""

import math

import numpy as np
import pytest

from spectrack import autodiff as ad
from spectrack.autodiff import Tensor, backward, grad_check
from spectrack.errors import ContractError, DimensionError


def test_grad_check_agrees_with_hand_gradient():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(4, 3))

    def f(x):
        return ad.sum_all(ad.mul(ad.mul(x, x), ad.constant(c)))

    x0 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    out = f(x0)
    backward(out)
    assert np.allclose(x0.grad, 2.0 * c * x0.data, atol=1e-12)

    report = grad_check(f, Tensor(x0.data), h=1e-6, tol=1e-4)
    assert report.passed
    assert report.checked == 12
    assert report.flagged == 0


def test_grad_check_catches_a_wrong_gradient():
    def broken_square(x):
        out = Tensor(x.data * x.data)
        out._parents = (x,)
        out._vjp = lambda g: (g * 3.0 * x.data,)  # wrong on purpose
        return ad.sum_all(out)

    report = grad_check(broken_square, Tensor(np.array([1.0, -2.0, 0.5])))
    assert not report.passed


def test_grad_check_flags_kinks_instead_of_failing():
    x = np.array([1.0, 0.0, -2.0])  # exact kink at index 1

    def f(t):
        return ad.sum_all(ad.relu(t))

    report = grad_check(f, Tensor(x), h=1e-6)
    assert report.passed
    assert report.flagged == 1
    assert (1,) in report.flagged_indices


def test_grad_check_sampling_limits_coordinates():
    def f(t):
        return ad.sum_all(ad.mul(t, t))

    report = grad_check(f, Tensor(np.arange(100.0).reshape(10, 10)), sample=17)
    assert report.checked + report.flagged == 17


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.mul(x, x))


def test_repeated_backward_accumulates():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.sum_all(ad.mul(x, x))
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    assert np.array_equal(x.grad, 2.0 * first)
    ad.zero_grads([x])
    assert x.grad is None


def test_fan_out_sums_contributions():
    # y = x + x, loss = sum(y * y) => dloss/dx = 8x
    x = Tensor(np.array([1.0, -3.0, 0.25]), requires_grad=True)
    y = ad.add(x, x)
    backward(ad.sum_all(ad.mul(y, y)))
    assert np.allclose(x.grad, 8.0 * x.data, atol=1e-12)


def test_elementwise_ops_reject_shape_mismatch():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.ones((3, 2)))
    for op in (ad.add, ad.sub, ad.mul, ad.div, ad.maximum, ad.minimum):
        with pytest.raises(DimensionError) as err:
            op(a, b)
        assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_matmul_checks_inner_dims():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_pointwise_op_gradients():
    rng = np.random.default_rng(1)
    cases = [
        (ad.relu, rng.normal(size=(3, 4)) + 0.3),
        (ad.gelu, rng.normal(size=(3, 4))),
        (ad.sigmoid, rng.normal(size=(3, 4)) * 3.0),
        (ad.log, np.abs(rng.normal(size=(3, 4))) + 0.5),
        (ad.abs_, rng.normal(size=(3, 4)) + 0.2),
    ]
    for op, x in cases:
        report = grad_check(lambda t, op=op: ad.sum_all(op(t)), Tensor(x))
        assert report.passed, f"{op.__name__}: {report}"


def test_binary_min_max_gradients():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4))
    for op in (ad.maximum, ad.minimum):
        report = grad_check(lambda t, op=op: ad.sum_all(op(t, ad.constant(b))), Tensor(a))
        assert report.passed


def test_affine_layer_norm_softmax_gradients():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=4)
    weight = rng.normal(size=(6, 4))

    def f(x):
        y = ad.affine(x, ad.constant(w), ad.constant(b))
        y = ad.layer_norm(y, ad.constant(np.ones(4) * 1.3), ad.constant(b))
        y = ad.softmax(y)
        return ad.sum_all(ad.mul(y, ad.constant(weight)))

    assert grad_check(f, Tensor(rng.normal(size=(6, 5)))).passed

    gamma = Tensor(rng.normal(size=4) + 1.0)
    x0 = ad.constant(rng.normal(size=(6, 4)))

    def g(gm):
        return ad.sum_all(ad.mul(ad.layer_norm(x0, gm, ad.constant(b)), ad.constant(weight)))

    assert grad_check(g, gamma).passed


def test_layer_norm_of_constant_rows_is_zero():
    x = Tensor(np.full((3, 7), 0.1))
    out = ad.layer_norm(x, ad.constant(np.ones(7)), ad.constant(np.zeros(7)))
    assert np.abs(out.data).max() < 1e-9


def test_softmax_rows_are_a_simplex():
    rng = np.random.default_rng(4)
    for _ in range(20):
        x = Tensor(rng.normal(size=(5, 9)) * rng.uniform(0.1, 30.0))
        y = ad.softmax(x).data
        assert (y >= 0).all()
        assert np.abs(y.sum(axis=-1) - 1.0).max() < 1e-12


def test_mean_sum_reshape_permute_narrow_concat_gradients():
    rng = np.random.default_rng(5)
    weight3 = rng.normal(size=(1, 4, 2))

    def f(x):
        m = ad.mean_over_tokens(x)                      # [1, 8]
        r = ad.reshape(m, (1, 2, 4))
        p = ad.permute(r, (0, 2, 1))                    # [1, 4, 2]
        return ad.sum_all(ad.mul(p, ad.constant(weight3)))

    assert grad_check(f, Tensor(rng.normal(size=(6, 8)))).passed

    def g(x):
        parts = ad.split(x, [2, 3, 1], axis=0)
        rejoined = ad.concat([parts[2], parts[0], parts[1]], axis=0)
        return ad.sum_all(ad.mul(rejoined, ad.constant(rng2)))

    rng2 = rng.normal(size=(6, 3))
    assert grad_check(g, Tensor(rng.normal(size=(6, 3)))).passed


def test_split_concat_round_trip_is_exact():
    rng = np.random.default_rng(6)
    x = Tensor(rng.normal(size=(10, 4)))
    parts = ad.split(x, [3, 3, 4], axis=0)
    back = ad.concat(parts, axis=0)
    assert np.array_equal(back.data, x.data)


def test_narrow_bounds_checked():
    x = Tensor(np.ones((4, 4)))
    with pytest.raises(DimensionError):
        ad.narrow(x, 0, 2, 3)


def test_attention_single_token_is_value_row():
    rng = np.random.default_rng(7)
    q = Tensor(rng.normal(size=(1, 8)))
    k = Tensor(rng.normal(size=(1, 8)))
    v = Tensor(rng.normal(size=(1, 8)))
    out = ad.attention(q, k, v, heads=2)
    assert np.array_equal(out.data, v.data)


def test_attention_gradients():
    rng = np.random.default_rng(8)
    k = ad.constant(rng.normal(size=(5, 6)))
    v = ad.constant(rng.normal(size=(5, 6)))
    weight = rng.normal(size=(5, 6))

    def f(q):
        return ad.sum_all(ad.mul(ad.attention(q, k, v, heads=3), ad.constant(weight)))

    assert grad_check(f, Tensor(rng.normal(size=(5, 6)))).passed


def test_conv2d_matches_a_direct_loop():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 6, 3))
    w = rng.normal(size=(3, 3, 3, 2))
    b = rng.normal(size=2)
    out = ad.conv2d(Tensor(x), Tensor(w), Tensor(b)).data

    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    expected = np.zeros((5, 6, 2))
    for i in range(5):
        for j in range(6):
            for o in range(2):
                acc = b[o]
                for di in range(3):
                    for dj in range(3):
                        for c in range(3):
                            acc += xp[i + di, j + dj, c] * w[di, dj, c, o]
                expected[i, j, o] = acc
    assert np.allclose(out, expected, atol=1e-12)


def test_conv2d_gradients():
    rng = np.random.default_rng(10)
    w = ad.constant(rng.normal(size=(3, 3, 2, 2)))
    b = ad.constant(rng.normal(size=2))
    weight = rng.normal(size=(4, 4, 2))

    def fx(x):
        return ad.sum_all(ad.mul(ad.conv2d(x, w, b), ad.constant(weight)))

    assert grad_check(fx, Tensor(rng.normal(size=(4, 4, 2)))).passed

    x0 = ad.constant(rng.normal(size=(4, 4, 2)))

    def fw(wt):
        return ad.sum_all(ad.mul(ad.conv2d(x0, wt, b), ad.constant(weight)))

    assert grad_check(fw, Tensor(rng.normal(size=(3, 3, 2, 2)))).passed


def test_depthwise_conv1d_matches_a_direct_loop_and_differentiates():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(7, 3))
    taps = rng.normal(size=(3, 3))
    out = ad.depthwise_conv1d(Tensor(x), Tensor(taps)).data

    xp = np.pad(x, ((1, 1), (0, 0)))
    expected = np.zeros_like(x)
    for n in range(7):
        for d in range(3):
            expected[n, d] = sum(xp[n + k, d] * taps[k, d] for k in range(3))
    assert np.allclose(out, expected, atol=1e-12)

    weight = rng.normal(size=(7, 3))

    def f(t):
        return ad.sum_all(ad.mul(ad.depthwise_conv1d(Tensor(x), t), ad.constant(weight)))

    assert grad_check(f, Tensor(taps)).passed


def test_identity_tap_depthwise_conv_is_exact_identity():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(9, 4))
    taps = np.zeros((3, 4))
    taps[1] = 1.0
    out = ad.depthwise_conv1d(Tensor(x), Tensor(taps)).data
    assert np.array_equal(out, x)


def test_gelu_and_sigmoid_anchor_values():
    assert ad.gelu(Tensor(np.array([0.0]))).data[0] == 0.0
    assert ad.sigmoid(Tensor(np.array([0.0]))).data[0] == 0.5
    # gelu approaches identity for large positive inputs
    assert abs(ad.gelu(Tensor(np.array([10.0]))).data[0] - 10.0) < 1e-6


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(13)
    arrays = {
        "layer.w": rng.normal(size=(4, 7)),
        "layer.b": rng.normal(size=7),
        "scalar": np.array(3.5),
        "cube": rng.normal(size=(2, 3, 4)),
    }
    bin_path, json_path = ad.save_checkpoint(arrays, tmp_path / "ckpt")
    assert bin_path.exists() and json_path.exists()
    loaded = ad.load_checkpoint(tmp_path / "ckpt")
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == np.asarray(arr).shape
        assert np.array_equal(loaded[name], arr)


def test_division_gradients():
    rng = np.random.default_rng(14)
    b = np.abs(rng.normal(size=(3, 3))) + 0.5

    def f(a):
        return ad.sum_all(ad.div(a, ad.constant(b)))

    assert grad_check(f, Tensor(rng.normal(size=(3, 3)))).passed

    a0 = ad.constant(rng.normal(size=(3, 3)))

    def g(t):
        return ad.sum_all(ad.div(a0, t))

    assert grad_check(g, Tensor(b)).passed


def test_gradients_accumulate_once_per_path_in_deep_chains():
    # A long chain with fan-out at every stage; analytic vs numeric.
    rng = np.random.default_rng(15)

    def f(x):
        h = x
        for _ in range(6):
            h = ad.add(ad.scale(h, 0.5), ad.mul(h, ad.constant(np.full(h.shape, 0.1))))
        return ad.sum_all(h)

    assert grad_check(f, Tensor(rng.normal(size=(4, 3)))).passed


def test_item_and_detach():
    x = Tensor(np.array([[2.5]]), requires_grad=True)
    assert x.item() == 2.5
    d = x.detach()
    assert not d.requires_grad
    with pytest.raises(ContractError):
        Tensor(np.ones(3)).item()
    assert math.isclose(ad.sum_all(Tensor(np.ones(3))).item(), 3.0)
