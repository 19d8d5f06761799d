"""Computation graph: forward values, reverse-mode gradients, shape rules."""

import numpy as np
import pytest

from voxseg import autodiff as ad
from voxseg.autodiff import Tensor, grad_check
from voxseg.errors import ContractError, ShapeError

from oracles import conv3d_loops


def leaf(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------

def test_elementwise_forward_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.uniform(0.5, 2.0, size=(3, 4))
    ta, tb = Tensor(a), Tensor(b)
    np.testing.assert_allclose(ad.add(ta, tb).data, a + b)
    np.testing.assert_allclose(ad.sub(ta, tb).data, a - b)
    np.testing.assert_allclose(ad.mul(ta, tb).data, a * b)
    np.testing.assert_allclose(ad.div(ta, tb).data, a / b)
    np.testing.assert_allclose(ad.scale(ta, -2.5).data, -2.5 * a)
    np.testing.assert_allclose(ad.relu(ta).data, np.maximum(a, 0))
    np.testing.assert_allclose(ad.sigmoid(ta).data, 1 / (1 + np.exp(-a)))
    np.testing.assert_allclose(ad.log(tb).data, np.log(b))
    np.testing.assert_allclose(ad.sum(ta).data, a.sum())
    np.testing.assert_allclose(ad.mean(ta).data, a.mean())


def test_sigmoid_is_stable_at_extreme_logits():
    # the naive 1/(1+exp(-x)) overflows at x = -500; the stable form must not
    x = Tensor(np.array([-500.0, -60.0, 60.0, 500.0]))
    out = ad.sigmoid(x).data
    assert np.all(np.isfinite(out))
    assert np.all(out >= 0.0) and np.all(out <= 1.0)
    assert 0.0 < out[0] < 1e-200 and out[3] == 1.0


def test_operator_sugar_wraps_python_numbers():
    x = leaf([1.0, 2.0])
    y = 1.0 - (2.0 * x + 1.0) / 2.0
    np.testing.assert_allclose(y.data, [-0.5, -1.5])
    ad.sum(y).backward()
    np.testing.assert_allclose(x.grad, [-1.0, -1.0])


def test_scalar_operand_broadcast_and_grad_reduction():
    x = leaf(np.ones((2, 3)), "x")
    s = leaf(2.0, "s")
    out = ad.sum(ad.mul(x, s))
    out.backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3), 2.0))
    np.testing.assert_allclose(s.grad, 6.0)  # sum over the broadcast positions


def test_mismatched_shapes_raise():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_backward_needs_scalar_output():
    x = leaf(np.ones(3))
    with pytest.raises(ContractError):
        ad.mul(x, x).backward()


def test_diamond_graph_accumulates_both_paths():
    # f = x*x + x  =>  df/dx = 2x + 1
    x = leaf([1.5, -2.0], "x")
    f = ad.sum(ad.add(ad.mul(x, x), x))
    f.backward()
    np.testing.assert_allclose(x.grad, [4.0, -3.0])


def test_node_reuse_accumulates():
    # y = sigmoid(x); f = sum(y*y + y) => df/dx = (2y + 1) y (1-y)
    x = leaf([0.3, -1.2], "x")
    y = ad.sigmoid(x)
    f = ad.sum(ad.add(ad.mul(y, y), y))
    f.backward()
    s = 1 / (1 + np.exp(-x.data))
    np.testing.assert_allclose(x.grad, (2 * s + 1) * s * (1 - s), rtol=1e-12)


def test_grad_accumulates_across_backward_calls_until_zeroed():
    x = leaf([1.0], "x")
    ad.sum(ad.mul(x, x)).backward()
    first = x.grad.copy()
    ad.sum(ad.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


# ---------------------------------------------------------------------------
# Pooling / upsampling
# ---------------------------------------------------------------------------

def test_max_pool2_forward_blocks():
    x = np.arange(64, dtype=np.float64).reshape(1, 1, 4, 4, 4)
    out = ad.max_pool2(Tensor(x)).data
    assert out.shape == (1, 1, 2, 2, 2)
    # block maxima of an ascending ramp sit at the high corner of each block
    want = x[0, 0][1::2, 1::2, 1::2]
    np.testing.assert_array_equal(out[0, 0], want)


def test_max_pool2_tie_routes_to_first_voxel():
    x = leaf(np.zeros((1, 1, 2, 2, 2)), "x")  # all equal: 8-way tie
    out = ad.max_pool2(x)
    ad.sum(out).backward()
    grad = x.grad.reshape(-1)
    assert grad[0] == 1.0 and np.all(grad[1:] == 0.0)


def test_max_pool2_requires_even_dims():
    with pytest.raises(ShapeError):
        ad.max_pool2(Tensor(np.zeros((1, 1, 3, 4, 4))))


def test_upsample2x_forward_and_backward():
    x = leaf(np.array([[[[[1.0, 2.0]]]]]), "x")  # (1,1,1,1,2)
    out = ad.upsample2x(x)
    assert out.data.shape == (1, 1, 2, 2, 4)
    np.testing.assert_array_equal(out.data[0, 0, 0, 0], [1, 1, 2, 2])
    ad.sum(out).backward()
    np.testing.assert_array_equal(x.grad, np.full((1, 1, 1, 1, 2), 8.0))


# ---------------------------------------------------------------------------
# Convolution vs the loop oracle
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("shape, wshape, stride", [
    ((1, 1, 3, 3, 3), (1, 1, 3, 3, 3), 1),
    ((2, 3, 4, 5, 6), (4, 3, 3, 3, 3), 1),
    ((1, 2, 4, 4, 4), (3, 2, 1, 1, 1), 1),
    ((1, 2, 4, 4, 4), (2, 2, 3, 3, 3), 2),
    ((2, 1, 5, 4, 3), (2, 1, 5, 5, 5), 1),
])
def test_conv3d_forward_matches_loop_oracle(shape, wshape, stride):
    rng = np.random.default_rng(hash((shape, wshape, stride)) % 2**32)
    x = rng.normal(size=shape)
    w = rng.normal(size=wshape)
    b = rng.normal(size=wshape[0])
    got = ad.conv3d(Tensor(x), Tensor(w), Tensor(b), stride=stride).data
    want = conv3d_loops(x, w, b, stride=stride)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)


def test_conv3d_shape_validation():
    x = Tensor(np.zeros((1, 2, 4, 4, 4)))
    with pytest.raises(ShapeError):
        ad.conv3d(x, Tensor(np.zeros((1, 3, 3, 3, 3))), Tensor(np.zeros(1)))  # channels
    with pytest.raises(ShapeError):
        ad.conv3d(x, Tensor(np.zeros((1, 2, 2, 2, 2))), Tensor(np.zeros(1)))  # even kernel
    with pytest.raises(ShapeError):
        ad.conv3d(x, Tensor(np.zeros((1, 2, 3, 3, 3))), Tensor(np.zeros(2)))  # bias size
    with pytest.raises(ShapeError):
        ad.conv3d(x, Tensor(np.zeros((1, 2, 3, 3, 3))), Tensor(np.zeros(1)), stride=0)


# ---------------------------------------------------------------------------
# Finite-difference gradient checks per operator
# ---------------------------------------------------------------------------

def _fd_case(builder, inputs, tol=1e-3):
    report = grad_check(builder, inputs, tol=tol)
    assert report.passed, report.summary()
    return report


def test_fd_elementwise():
    rng = np.random.default_rng(1)
    a = leaf(rng.normal(size=(2, 3)), "a")
    b = leaf(rng.uniform(0.6, 1.4, size=(2, 3)), "b")
    _fd_case(lambda ts: ad.sum(ts[0] * ts[1] + ts[0] / ts[1] - 0.5 * ts[0]), [a, b])


def test_fd_sigmoid_log_mean():
    rng = np.random.default_rng(2)
    x = leaf(rng.normal(size=(3, 3)), "x")
    _fd_case(lambda ts: ad.mean(ad.log(ad.sigmoid(ts[0]) + 0.05)), [x])


def test_fd_relu_away_from_kink():
    rng = np.random.default_rng(3)
    vals = rng.uniform(0.1, 1.0, size=(2, 4)) * rng.choice([-1.0, 1.0], size=(2, 4))
    x = leaf(vals, "x")
    _fd_case(lambda ts: ad.sum(ad.relu(ts[0])), [x])


def test_fd_max_pool_distinct_values():
    rng = np.random.default_rng(4)
    base = rng.permutation(2 * 4 * 4 * 4).astype(np.float64).reshape(1, 2, 4, 4, 4)
    x = Tensor(base / 7.0, requires_grad=True, name="x")
    mix = rng.normal(size=(1, 2, 2, 2, 2))
    _fd_case(lambda ts: ad.sum(ad.mul(ad.max_pool2(ts[0]), Tensor(mix))), [x])


def test_fd_upsample():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(1, 2, 2, 2, 3)), "x")
    mix = rng.normal(size=(1, 2, 4, 4, 6))
    _fd_case(lambda ts: ad.sum(ad.mul(ad.upsample2x(ts[0]), Tensor(mix))), [x])


@pytest.mark.parametrize("stride", [1, 2])
def test_fd_conv3d_all_three_inputs(stride):
    rng = np.random.default_rng(6 + stride)
    x = leaf(rng.normal(size=(1, 2, 4, 4, 4)) * 0.5, "x")
    w = leaf(rng.normal(size=(3, 2, 3, 3, 3)) * 0.3, "w")
    b = leaf(rng.normal(size=3) * 0.1, "b")
    d = 4 if stride == 1 else 2
    mix = rng.normal(size=(1, 3, d, d, d))
    _fd_case(lambda ts: ad.sum(ad.mul(ad.conv3d(ts[0], ts[1], ts[2], stride=stride),
                                      Tensor(mix))), [x, w, b])


def test_grad_check_rejects_float32_inputs():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda ts: ad.sum(ts[0]), [x])
