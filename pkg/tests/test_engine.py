import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctpnet.engine import (
    SGD,
    Graph,
    GraphError,
    MissingGradientError,
    NonFiniteError,
    RunningStats,
    Tensor,
    add,
    backward,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy_loss,
    pool2d,
    relu,
    softmax_channels,
    tensor_sum,
    weighted_sum,
)
from ctpnet.engine import _pykernels
from ctpnet.engine.gradcheck import check_op, relative_error, numeric_gradient

from oracles import conv2d_loops, cross_entropy_pixels, pool_loops


def T(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# conv2d


def test_conv_identity_kernel():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    out = conv2d(T(x), T(np.ones((1, 1, 1, 1))), T([0.0]))
    np.testing.assert_array_equal(out.data, x)


def test_conv_dilation_two_taps_nine_ones():
    out = conv2d(T(np.ones((1, 1, 5, 5))), T(np.ones((1, 1, 3, 3))), T([0.0]), dilation=2)
    assert out.shape == (1, 1, 1, 1)
    assert out.data.item() == 9.0


def test_conv_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(T(x), T(w), T(b), stride=1, padding=1)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, 1, 1, 1), atol=1e-6)


@pytest.mark.parametrize("stride,dilation,padding", [(1, 1, 0), (2, 1, 1), (1, 2, 2), (2, 2, 1), (3, 1, 2), (1, 1, 1)])
def test_conv_geometries_match_oracle(rng, stride, dilation, padding):
    x = rng.standard_normal((1, 2, 9, 7))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(T(x), T(w), T(b), stride=stride, dilation=dilation, padding=padding)
    np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, stride, dilation, padding), atol=1e-6)


def test_conv_errors():
    with pytest.raises(ValueError, match="channels"):
        conv2d(T(np.ones((1, 2, 4, 4))), T(np.ones((1, 3, 3, 3))), T([0.0]))
    with pytest.raises(ValueError, match="non-positive"):
        conv2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 3, 3))), T([0.0]))


# pooling


@pytest.mark.parametrize("mode", ["max", "avg"])
@pytest.mark.parametrize("k,s,p", [(2, 2, 0), (2, 1, (0, 1, 0, 1)), (3, 1, 1), (3, 2, 1)])
def test_pool_of_constant_is_constant(mode, k, s, p):
    x = np.full((1, 2, 8, 8), 7.0)
    out = pool2d(T(x), mode, k, s, 0)
    assert np.all(out.data == 7.0)


def test_maxpool_blockwise():
    x = np.array([[1, 2, 5, 0], [3, 4, 1, 1], [0, 0, 9, 8], [0, 6, 7, 7]], dtype=np.float64)
    out = pool2d(T(x[None, None]), "max", 2, 2)
    np.testing.assert_array_equal(out.data[0, 0], [[4, 5], [6, 9]])


def test_stride1_pool_keeps_size_and_matches_oracle(rng):
    x = rng.standard_normal((1, 1, 8, 8))
    pads = (0, 1, 0, 1)
    out = pool2d(T(x), "max", 2, 1, pads)
    assert out.shape == (1, 1, 8, 8)
    np.testing.assert_allclose(out.data, pool_loops(x, "max", 2, 1, pads), atol=1e-12)


def test_avgpool_matches_oracle(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    np.testing.assert_allclose(pool2d(T(x), "avg", 2, 2).data, pool_loops(x, "avg", 2, 2, (0,) * 4), atol=1e-12)


def test_maxpool_tie_goes_to_first_in_row_major():
    x = T(np.ones((1, 1, 2, 2)), grad=True)
    backward(tensor_sum(pool2d(x, "max", 2, 2)))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


def test_avgpool_spreads_gradient_uniformly():
    x = T(np.arange(16.0).reshape(1, 1, 4, 4), grad=True)
    backward(tensor_sum(pool2d(x, "avg", 2, 2)))
    np.testing.assert_allclose(x.grad, 0.25)


def test_pool_bad_size():
    with pytest.raises(ValueError):
        pool2d(T(np.ones((1, 1, 1, 1))), "max", 2, 2)
    with pytest.raises(ValueError):
        pool2d(T(np.ones((1, 1, 4, 4))), "median", 2, 2)


# transposed convolution


def test_deconv_nonoverlapping_stamps():
    out = conv_transpose2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 2, 2))), T([0.0]), stride=2)
    np.testing.assert_array_equal(out.data[0, 0], np.ones((4, 4)))


def test_deconv_doubling_shape(rng):
    out = conv_transpose2d(T(rng.standard_normal((1, 1, 4, 4))), T(rng.standard_normal((1, 1, 4, 4))), T([0.0]), 2, 1)
    assert out.shape == (1, 1, 8, 8)


@pytest.mark.parametrize("stride,padding,k,out_pad", [(2, 1, 4, 0), (1, 1, 3, 0), (2, 0, 2, 0), (2, 1, 3, 1)])
def test_deconv_is_conv_input_gradient(rng, stride, padding, k, out_pad):
    # conv2d maps (N,Cout,H',W') -> (N,Cin,H,W) with weight w[Cin, Cout]; its input
    # gradient applied to g must equal conv_transpose2d(g, w).
    cin, cout, h = 3, 2, 5
    w = rng.standard_normal((cin, cout, k, k))
    g = rng.standard_normal((2, cin, h, h))
    ho = (h - 1) * stride - 2 * padding + k + out_pad
    y = T(rng.standard_normal((2, cout, ho, ho)), grad=True)
    out = conv2d(y, T(w), T(np.zeros(cin)), stride=stride, padding=padding)
    assert out.shape == g.shape
    backward(weighted_sum(out, g))
    dec = conv_transpose2d(T(g), T(w), T(np.zeros(cout)), stride, padding, out_pad)
    np.testing.assert_allclose(dec.data, y.grad, atol=1e-6)


def test_deconv_invalid_geometry():
    with pytest.raises(ValueError):
        conv_transpose2d(T(np.ones((1, 1, 2, 2))), T(np.ones((1, 1, 2, 2))), T([0.0]), 2, 0, 2)


# batch norm


def test_bn_train_normalizes(rng):
    x = rng.standard_normal((4, 3, 5, 5)) * 3 + 2
    out = batch_norm(T(x), T(np.ones(3)), T(np.zeros(3))).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_bn_affine_on_normalized_input(rng):
    x = rng.standard_normal((4, 2, 6, 6))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = batch_norm(T(x), T([2.0, 2.0]), T([3.0, 3.0])).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 3, atol=1e-6)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 2, atol=1e-4)


def test_bn_infer_with_identity_stats(rng):
    x = rng.standard_normal((2, 2, 3, 3))
    stats = RunningStats.fresh(2, np.float64)
    out = batch_norm(T(x), T([1.5, -1.0]), T([0.5, 2.0]), train=False, stats=stats).data
    expect = x * np.array([1.5, -1.0])[None, :, None, None] + np.array([0.5, 2.0])[None, :, None, None]
    np.testing.assert_allclose(out, expect, rtol=1e-5, atol=1e-5)


def test_bn_running_stats_update(rng):
    x = rng.standard_normal((2, 1, 4, 4)) + 5
    stats = RunningStats.fresh(1, np.float64, momentum=0.1)
    batch_norm(T(x), T([1.0]), T([0.0]), stats=stats)
    np.testing.assert_allclose(stats.mean, 0.1 * x.mean())
    np.testing.assert_allclose(stats.var, 0.9 + 0.1 * x.var(ddof=1))


def test_bn_degenerate_batch():
    with pytest.raises(ValueError):
        batch_norm(T(np.ones((1, 1, 1, 1))), T([1.0]), T([0.0]))


# relu / add / softmax / cross entropy


def test_relu_values_and_mask(rng):
    np.testing.assert_array_equal(relu(T(np.array([-1.0, 0.0, 2.0]).reshape(1, 1, 1, 3))).data.ravel(), [0, 0, 2])
    assert not relu(T(-rng.random((2, 2)) - 0.1)).data.any()
    x = T(rng.standard_normal((3, 4)), grad=True)
    backward(tensor_sum(relu(x)))
    np.testing.assert_array_equal(x.grad, (x.data > 0).astype(float))


def test_add_identities(rng):
    a = rng.standard_normal((2, 3))
    np.testing.assert_array_equal(add(T(a), T(np.zeros_like(a))).data, a)
    np.testing.assert_array_equal(add(T(a), T(a)).data, 2 * a)
    ta, tb = T(a, True), T(a + 1, True)
    backward(tensor_sum(ta + tb))
    np.testing.assert_array_equal(ta.grad, tb.grad)
    with pytest.raises(ValueError):
        add(T(np.ones(2)), T(np.ones(3)))


def test_softmax_cases(rng):
    p = softmax_channels(T(np.zeros((1, 2, 1, 1)))).data
    np.testing.assert_allclose(p.ravel(), [0.5, 0.5])
    big = np.array([1000.0, 0.0]).reshape(1, 2, 1, 1)
    p = softmax_channels(T(big)).data
    assert p[0, 0, 0, 0] == 1.0 and p[0, 1, 0, 0] < 1e-300 + 1e-12
    p = softmax_channels(T(rng.standard_normal((3, 2, 4, 4)) * 10)).data
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-6)
    assert (p > 0).all()


def test_cross_entropy_cases(rng):
    t = rng.integers(0, 2, (2, 3, 3))
    confident = np.stack([np.where(t == 0, 20.0, -20.0), np.where(t == 1, 20.0, -20.0)], axis=1)
    assert cross_entropy_loss(T(confident), t).data < 1e-3
    assert math.isclose(float(cross_entropy_loss(T(np.zeros((2, 2, 3, 3))), t).data), math.log(2), rel_tol=1e-12)
    logits = rng.standard_normal((2, 2, 3, 3)) * 3
    assert abs(float(cross_entropy_loss(T(logits), t).data) - cross_entropy_pixels(logits, t)) < 1e-6
    with pytest.raises(ValueError):
        cross_entropy_loss(T(logits), t[:, :2])
    with pytest.raises(ValueError):
        cross_entropy_loss(T(logits), t * 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_softmax_sums_and_ce_nonnegative(seed):
    r = np.random.default_rng(seed)
    logits = r.standard_normal((1, 2, 3, 4)) * r.uniform(0.1, 50)
    p = softmax_channels(T(logits)).data
    assert np.allclose(p.sum(axis=1), 1, atol=1e-6)
    assert float(cross_entropy_loss(T(logits), r.integers(0, 2, (1, 3, 4))).data) >= 0


# backward / graph


def test_backward_relu_sum_positive():
    x = T(np.full((2, 3), 0.5), grad=True)
    backward(tensor_sum(relu(x)))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_composed_matches_finite_differences(rng):
    x = T(rng.standard_normal((1, 1, 6, 6)), grad=True)
    w = T(rng.standard_normal((2, 1, 3, 3)), grad=True)
    b = T(rng.standard_normal(2), grad=True)
    target = rng.integers(0, 2, (1, 3, 3))

    def f(x, w, b):
        return cross_entropy_loss(pool2d(conv2d(x, w, b, padding=1), "max", 2, 2), target)

    res = check_op("conv-pool-ce", f, [x, w, b], rng)
    assert res.passed, res


def test_disconnected_parameter_gets_zero_grad(rng):
    from ctpnet.engine.gradcheck import check_op

    x = T(rng.standard_normal((2, 2)), grad=True)
    unused = T(rng.standard_normal(3), grad=True)
    res = check_op("disconnected", lambda a, u: tensor_sum(relu(a)), [x, unused], rng)
    assert res.passed
    assert unused.grad is None  # zero by convention: never touched


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        backward(relu(T(np.ones((2, 2)), grad=True)))


def test_graph_detects_cycle():
    a = T(np.ones(2), grad=True)
    b = add(a, a)
    c = add(b, a)
    b._op.inputs = (c, a)  # forge a cycle
    with pytest.raises(GraphError):
        Graph(tensor_sum(c))


def test_backward_deterministic(rng):
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    grads = []
    for _ in range(2):
        xt, wt = T(x, True), T(w, True)
        feat = pool2d(relu(conv2d(xt, wt, T(np.zeros(4)), padding=1)), "max", 2, 2)
        feat = concat([feat, feat])
        logits = conv2d(feat, T(np.ones((2, 8, 1, 1))), T(np.zeros(2)))
        backward(cross_entropy_loss(logits, np.zeros((2, 4, 4), int)))
        grads.append((xt.grad.tobytes(), wt.grad.tobytes()))
    assert grads[0] == grads[1]


def test_non_finite_raises():
    with pytest.raises(NonFiniteError):
        add(T([np.inf]), T([1.0]))


def test_graph_order_inputs_first():
    a = T(np.ones(2), grad=True)
    out = tensor_sum(relu(a))
    g = Graph(out)
    assert g.order[0] is a and g.order[-1] is out
    assert g.leaves() == [a]


# sgd


def test_sgd_step():
    p = T([1.0], grad=True)
    p.grad = np.array([2.0])
    SGD([p], lr=0.1).step()
    assert math.isclose(p.data[0], 0.8)
    assert p.grad is None


def test_sgd_zero_grad_and_linearity():
    p = T([1.0, -2.0], grad=True)
    opt = SGD([p], lr=0.5)
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    g = np.array([0.25, 1.0])
    q = T([1.0, -2.0], grad=True)
    for _ in range(2):
        p.grad = g.copy()
        opt.step()
    q.grad = 2 * g
    SGD([q], lr=0.5).step()
    np.testing.assert_allclose(p.data, q.data)


def test_sgd_errors():
    with pytest.raises(ValueError):
        SGD([], lr=0)
    with pytest.raises(MissingGradientError):
        SGD([T([1.0], grad=True)], lr=0.1).step()


# kernels


def test_backends_agree_bitwise(rng):
    from ctpnet.engine import kernels

    x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
    cols_a = kernels.im2col(x, 3, 3, 2, 1, 4, 4)
    cols_b = _pykernels.im2col(x, 3, 3, 2, 1, 4, 4)
    assert cols_a.tobytes() == cols_b.tobytes()
    back_a = kernels.col2im(cols_a, 2, 3, 9, 9, 3, 3, 2, 1, 4, 4)
    back_b = _pykernels.col2im(cols_b, 2, 3, 9, 9, 3, 3, 2, 1, 4, 4)
    assert back_a.tobytes() == back_b.tobytes()
    oa, aa = kernels.maxpool_forward(x, 2, 1, 8, 8)
    ob, ab = _pykernels.maxpool_forward(x, 2, 1, 8, 8)
    assert oa.tobytes() == ob.tobytes() and (aa == ab).all()


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9])).item() < 1e-1
    assert relative_error(np.array([1.0]), np.array([1.1])).item() == pytest.approx(0.1 / 1.1)


def test_numeric_gradient_quadratic():
    a = np.array([1.0, 2.0, -3.0])
    g = numeric_gradient(lambda: float((a**2).sum()), a, 1e-3)
    np.testing.assert_allclose(g, 2 * a, rtol=1e-9)
