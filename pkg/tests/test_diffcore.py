import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from keystego import diffcore as dc
from keystego.diffcore import ParamStore, Tensor
from keystego.errors import ContractError, ShapeError


def conv_loops(x, w, b, pad):
    """Nested-loop cross-correlation used as the conv oracle."""
    x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    out = np.zeros((n, o, h - k + 1, wd - k + 1))
    for bi in range(n):
        for oc in range(o):
            for i in range(h - k + 1):
                for j in range(wd - k + 1):
                    out[bi, oc, i, j] = np.sum(x[bi, :, i:i + k, j:j + k] * w[oc]) + b[oc]
    return out


def conv(x, w, b, pad):
    return dc.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64), pad).data


def test_conv_identity_kernel():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(conv(x, w, np.zeros(1), 1), x)


def test_conv_box_kernel_corner():
    x = np.ones((1, 1, 3, 3))
    out = conv(x, np.ones((1, 1, 3, 3)), np.zeros(1), 1)
    assert out[0, 0, 0, 0] == 4.0
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 1] == 6.0


def test_conv_bias_only():
    out = conv(np.zeros((2, 3, 5, 4)), np.zeros((2, 3, 3, 3)), np.array([1.5, -2.0]), 1)
    assert out.shape == (2, 2, 5, 4)
    assert np.all(out[:, 0] == 1.5) and np.all(out[:, 1] == -2.0)


@pytest.mark.parametrize("k,pad", [(3, 1), (1, 0), (3, 0), (5, 2)])
def test_conv_matches_loop_oracle(rng, k, pad):
    x = rng.normal(size=(2, 3, 7, 6))
    w = rng.normal(size=(4, 3, k, k))
    b = rng.normal(size=4)
    np.testing.assert_allclose(conv(x, w, b, pad), conv_loops(x, w, b, pad), atol=1e-6)


def test_conv_shape_errors():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    with pytest.raises(ShapeError):
        dc.conv2d(x, Tensor(np.zeros((2, 4, 3, 3))), Tensor(np.zeros(2)), 1)
    with pytest.raises(ShapeError):
        dc.conv2d(x, Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(3)), 1)
    with pytest.raises(ShapeError):
        dc.conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(2)), 1)


def test_elementwise_examples():
    a = Tensor([1.0, -2.0])
    b = Tensor([3.0, 4.0])
    assert dc.elementwise("add", a, b).data.tolist() == [4.0, 2.0]
    assert dc.elementwise("mul", a, b).data.tolist() == [3.0, -8.0]
    assert dc.elementwise("sub", a, b).data.tolist() == [-2.0, -6.0]
    assert dc.elementwise("exp", Tensor([0.0])).data.tolist() == [1.0]
    assert dc.elementwise("sigmoid", Tensor([0.0])).data.tolist() == [0.5]
    assert dc.elementwise("leaky_relu", a, alpha=0.2).data.tolist() == pytest.approx([1.0, -0.4])
    with pytest.raises(ShapeError):
        dc.elementwise("add", a, Tensor([1.0, 2.0, 3.0]))


def test_sigmoid_is_stable_for_large_inputs():
    out = dc.sigmoid(Tensor(np.array([-1000.0, 1000.0]), dtype=np.float64)).data
    assert out.tolist() == [0.0, 1.0]


def test_nonfinite_is_an_error():
    with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
        dc.exp(Tensor([1000.0]))


def test_backward_product():
    a = Tensor([2.0], requires_grad=True)
    b = Tensor([3.0], requires_grad=True)
    with dc.recording():
        dc.backward(dc.sum(dc.mul(a, b)))
    assert a.grad.tolist() == [3.0] and b.grad.tolist() == [2.0]


def test_backward_reuse_accumulates():
    a = Tensor([2.0], requires_grad=True)
    with dc.recording():
        dc.backward(dc.sum(dc.add(dc.mul(a, a), a)))
    assert a.grad.tolist() == [5.0]


def test_backward_needs_scalar():
    a = Tensor([1.0, 2.0], requires_grad=True)
    with dc.recording(), pytest.raises(ContractError):
        dc.backward(dc.mul(a, a))


def test_no_graph_outside_recording():
    a = Tensor([1.0], requires_grad=True)
    out = dc.mul(a, a)
    assert not out.requires_grad and out._parents == ()


def test_paramstore_zero_grad_fills_unused():
    ps = ParamStore()
    used = ps.add("used", np.ones(2))
    unused = ps.add("unused", np.ones(3))
    with dc.recording():
        dc.backward(dc.sum(dc.square(used)), ps)
    assert used.grad.tolist() == [2.0, 2.0]
    assert unused.grad.tolist() == [0.0, 0.0, 0.0]
    assert ps.num_parameters() == 5


@pytest.mark.parametrize("op", ["exp", "sigmoid", "square"])
def test_unary_gradients(rng, op):
    x = rng.normal(size=(3, 4))
    assert dc.grad_check(lambda t: dc.sum(dc.elementwise(op, t)), x) < 1e-5


def test_leaky_relu_gradient(rng):
    x = rng.normal(size=20)
    x = np.where(np.abs(x) < 0.05, 0.5, x)  # stay away from the kink
    assert dc.grad_check(lambda t: dc.sum(dc.mul(dc.leaky_relu(t), Tensor(np.arange(20.0), dtype=None))), x) < 1e-5


def test_conv_gradients(rng):
    x = rng.normal(size=(2, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = Tensor(rng.normal(size=(2, 3, 5, 5)), dtype=None)

    def loss(xt, wt, bt):
        return dc.sum(dc.mul(dc.conv2d(xt, wt, bt, 1), r))

    f64 = lambda a: Tensor(a, dtype=np.float64)
    assert dc.grad_check(lambda t: loss(t, f64(w), f64(b)), x) < 1e-5
    assert dc.grad_check(lambda t: loss(f64(x), t, f64(b)), w) < 1e-5
    assert dc.grad_check(lambda t: loss(f64(x), f64(w), t), b) < 1e-5


def test_channel_ops_gradients(rng):
    x = rng.normal(size=(1, 4, 2, 2))
    r = Tensor(rng.normal(size=(1, 6, 2, 2)), dtype=None)

    def f(t):
        a = dc.slice_channels(t, 0, 2)
        c = dc.concat_channels([t, dc.scale(a, 3.0)])
        return dc.mean(dc.mul(c, r))

    assert dc.grad_check(f, x) < 1e-5


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (2, 3), elements=st.floats(-3, 3)))
def test_add_mul_gradients_property(a, b):
    bt = Tensor(b, dtype=None)
    assert dc.grad_check(lambda t: dc.sum(dc.add(dc.mul(t, bt), t)), a) < 1e-4


def test_two_layer_conv_net_gradients(rng):
    from keystego.inn import Subnet
    from gradhelpers import subnet_errors

    net = Subnet(dc.ParamStore(), "net", 4, 4, hidden=4, layers=2, kernel=3, rng=rng)
    net.weights[-1].data = rng.normal(0, 0.3, net.weights[-1].shape).astype(np.float32)
    assert max(subnet_errors(net, rng)) < 1e-3
