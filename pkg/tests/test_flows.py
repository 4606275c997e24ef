import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitscore import flows as F
from vitscore.autograd import Tensor
from vitscore.flows import FlowError
from vitscore.serialize import load_flow_stack, save_flow_stack
from vitscore.verify import _jacobian_logdet, random_spline_stack


def uniform_params(n=4, k=10, bound=5.0):
    w = np.full((n, k), 2 * bound / k)
    return F.SplineParams(w, w.copy(), np.ones((n, k - 1)), bound)


def random_params(rng, n, k=10, bound=5.0):
    return F.spline_params_from_raw(rng.normal(size=(n, 3 * k - 1)), k, bound)


def test_identity_spline():
    x = np.linspace(-4.9, 4.9, 4)
    y, ld = F.rq_spline_apply(x, uniform_params())
    np.testing.assert_allclose(y.data, x, atol=1e-12)
    np.testing.assert_allclose(ld.data, 0.0, atol=1e-12)


def test_linear_tails(rng):
    params = random_params(rng, 4)
    x = np.array([-7.0, 5.5, -5.0001, 100.0])
    y, ld = F.rq_spline_apply(x, params)
    np.testing.assert_array_equal(y.data, x)
    np.testing.assert_array_equal(ld.data, 0.0)


def test_spline_roundtrip_and_fd_slope(rng):
    n = 500
    params = random_params(rng, n)
    x = rng.uniform(-5, 5, size=n)
    y, ld = F.rq_spline_apply(x, params)
    back, ld_inv = F.rq_spline_apply(y.data, params, inverse=True)
    assert np.max(np.abs(back.data - x)) < 1e-8
    np.testing.assert_allclose(ld_inv.data, -ld.data, atol=1e-8)
    h = 1e-5
    slope = (F.rq_spline_apply(x + h, params)[0].data - F.rq_spline_apply(x - h, params)[0].data) / (2 * h)
    assert np.max(np.abs(np.log(slope) - ld.data)) < 1e-5


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_spline_monotone(seed):
    rng = np.random.default_rng(seed)
    raw = np.broadcast_to(rng.normal(size=29), (200, 29))
    params = F.spline_params_from_raw(raw)
    x = np.sort(rng.uniform(-6, 6, size=200))
    y, _ = F.rq_spline_apply(x, params)
    assert np.all(np.diff(y.data) > 0) or np.all(np.diff(x) == 0)


def test_raw_29_channels():
    params = F.spline_params_from_raw(np.zeros((3, 29)))
    assert params.num_bins == 10
    x = np.array([-4.3, 0.1, 3.7])
    y, ld = F.rq_spline_apply(x, params)
    assert np.max(np.abs(y.data - x)) < 1e-8
    assert np.max(np.abs(ld.data)) < 1e-8
    np.testing.assert_allclose(params.derivatives.data, 1.0, atol=1e-15)


def test_raw_28_channels_rejected():
    with pytest.raises(FlowError, match="29"):
        F.spline_params_from_raw(np.zeros((3, 28)))


def test_bad_params_rejected():
    w = np.full((1, 4), 2.5)
    with pytest.raises(FlowError):
        F.SplineParams(w, w, -np.ones((1, 3)))
    with pytest.raises(FlowError):
        F.SplineParams(w, w * 0.5, np.ones((1, 3)))


def test_affine_zero_shift_is_identity(rng):
    x = rng.normal(size=(2, 4, 5))
    layer = F.AffineCoupling(4, 8, rng=rng)
    y, ld = layer(x)
    np.testing.assert_array_equal(y.data, x)
    assert np.all(ld.data == 0)


def test_affine_constant_shift(rng):
    x = rng.normal(size=(1, 4, 3))
    y, _ = F.affine_coupling_forward(x, lambda keep: keep * 0 + 1.0)
    np.testing.assert_array_equal(y.data[:, :2], x[:, :2])
    np.testing.assert_allclose(y.data[:, 2:], x[:, 2:] + 1.0, atol=1e-15)
    y, _ = F.affine_coupling_forward(x, lambda keep: keep * 0 + 1.0, flip=True)
    np.testing.assert_allclose(y.data[:, :2], x[:, :2] + 1.0, atol=1e-15)


def test_affine_roundtrip(rng):
    layer = F.AffineCoupling(4, 8, rng=rng, zero_init=False)
    F.randomize(layer, rng, 0.5)
    x = rng.normal(size=(3, 4, 6))
    y, ld = layer(x)
    back, ld_inv = layer(y.data, reverse=True)
    assert np.max(np.abs(back.data - x)) < 1e-12
    assert np.all(ld.data == 0) and np.all(ld_inv.data == 0)
    fwd, _ = layer(layer(x, reverse=True)[0].data)
    assert np.max(np.abs(fwd.data - x)) < 1e-12


def test_affine_odd_channels_rejected():
    with pytest.raises(FlowError):
        F.AffineCoupling(3, 4)


def test_empty_stack(rng):
    x = rng.normal(size=(2, 2, 3))
    y, ld = F.flow_stack_apply(x, F.FlowStack())
    np.testing.assert_array_equal(y.data, x)
    assert np.all(ld.data == 0)


def test_volume_preserving_stack(rng):
    stack = F.build_affine_stack(2, 4, 4, rng=rng, zero_init=False)
    F.randomize(stack, rng, 0.5)
    _, ld = F.flow_stack_apply(rng.normal(size=(2, 2, 4)), stack)
    assert np.all(ld.data == 0)


def test_spline_stack_roundtrip_and_jacobian(rng):
    stack = random_spline_stack(rng)
    x = rng.normal(size=(1, 2, 1))
    y, ld = F.flow_stack_apply(x, stack)
    back, ld_inv = F.flow_stack_apply(y.data, stack, reverse=True)
    assert np.max(np.abs(back.data - x)) < 1e-7
    assert abs(ld_inv.item() + ld.item()) < 1e-7
    fd = _jacobian_logdet(lambda a: F.flow_stack_apply(a.reshape(x.shape), stack)[0].data.ravel(), x.ravel())
    assert abs(fd - ld.item()) < 1e-4


def test_elementwise_affine(rng):
    layer = F.ElementwiseAffine(2)
    layer.m.data[:] = [[0.5], [-1.0]]
    layer.logs.data[:] = [[0.3], [-0.2]]
    x = rng.normal(size=(2, 2, 3))
    y, ld = layer(x)
    np.testing.assert_allclose(y.data, layer.m.data + np.exp(layer.logs.data) * x, atol=1e-15)
    np.testing.assert_allclose(ld.data, 3 * 0.1, atol=1e-15)
    back, _ = layer(y.data, reverse=True)
    np.testing.assert_allclose(back.data, x, atol=1e-14)


def test_coupling_flip_alternates():
    stack = F.build_spline_stack(2, 4, 4)
    assert [layer.flip for layer in stack.layers] == [False, True, False, True]


def test_conditioned_coupling_roundtrip(rng):
    layer = F.SplineCoupling(2, 6, rng=rng, zero_init=False)
    F.randomize(layer, rng, 0.3)
    g = Tensor(rng.normal(size=(2, 6, 4)))
    x = rng.normal(size=(2, 2, 4))
    y, ld = layer(x, g=g)
    back, ld_inv = layer(y.data, g=g, reverse=True)
    assert np.max(np.abs(back.data - x)) < 1e-8
    np.testing.assert_allclose(ld_inv.data, -ld.data, atol=1e-8)
    y2, _ = layer(x, g=Tensor(g.data + 1.0))
    assert not np.allclose(y2.data, y.data)


def test_stack_serialization_roundtrip(tmp_path, rng):
    stack = random_spline_stack(rng)
    stack.layers.insert(0, F.ElementwiseAffine(2))
    F.randomize(stack.layers[0], rng, 0.2)
    save_flow_stack(tmp_path / "flow", stack)
    back = load_flow_stack(tmp_path / "flow")
    assert back.config() == stack.config()
    x = rng.normal(size=(2, 2, 5))
    np.testing.assert_array_equal(F.flow_stack_apply(x, back)[0].data, F.flow_stack_apply(x, stack)[0].data)
