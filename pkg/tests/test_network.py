import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_pde import autodiff as ad
from hybrid_pde.core import Grid1D
from hybrid_pde.network import LayerSpec, NeuralParams, ShapeMismatch, init_params, layer_specs, net_forward, unpack


def single_layer(kernel):
    k = np.asarray(kernel, dtype=float)
    return NeuralParams((LayerSpec(1, 1, len(k), "identity"),), np.concatenate([k, [0.0]]))


def test_zero_weights_zero_output(rng):
    p = init_params(layer_specs([1, 4, 4, 1]), rng)
    zero = p.with_theta(np.zeros(p.size))
    assert not net_forward(zero, rng.standard_normal(32)).any()


def test_delta_kernel_identity(rng):
    u = rng.standard_normal(16)
    assert np.array_equal(net_forward(single_layer([0.0, 1.0, 0.0]), u), u)


def test_central_difference_kernel():
    errs = []
    for n in (32, 64):
        g = Grid1D(n, 2 * np.pi)
        p = single_layer(np.array([1.0, 0.0, -1.0]) / (2 * g.dx))
        errs.append(np.max(np.abs(net_forward(p, np.sin(g.x)) - np.cos(g.x))))
    assert 3.8 < errs[0] / errs[1] < 4.2


def test_batch_matches_single(rng):
    p = init_params(layer_specs([2, 3, 1]), rng, features=("u", "x"), last_scale=1.0)
    u = rng.standard_normal((3, 16))
    batched = net_forward(p, u)
    for i in range(3):
        assert np.allclose(batched[i], net_forward(p, u[i]), rtol=1e-14, atol=1e-15)


def test_position_feature_breaks_translation_equivariance(rng):
    u = rng.standard_normal(16)
    p = init_params(layer_specs([2, 3, 1]), rng, features=("u", "x"), last_scale=1.0)
    q = init_params(layer_specs([1, 3, 1]), rng, last_scale=1.0)
    assert np.allclose(net_forward(q, np.roll(u, 3)), np.roll(net_forward(q, u), 3))
    assert not np.allclose(net_forward(p, np.roll(u, 3)), np.roll(net_forward(p, u), 3))


def test_shape_errors(rng):
    with pytest.raises(ShapeMismatch):
        LayerSpec(1, 1, 4)
    with pytest.raises(ShapeMismatch):
        NeuralParams((LayerSpec(1, 2, 3),), np.zeros(8))
    with pytest.raises(ShapeMismatch):
        NeuralParams((LayerSpec(1, 1, 3),), np.zeros(5))
    with pytest.raises(ShapeMismatch):
        NeuralParams(layer_specs([1, 2, 1]), np.zeros(100))
    p = init_params(layer_specs([1, 2, 1]), rng)
    with pytest.raises(ShapeMismatch):
        net_forward(p, np.zeros((2, 2, 8)))


def test_init_statistics():
    p = init_params(layer_specs([4, 16, 16, 1], 5), np.random.default_rng(0), features=("u",) * 4, last_scale=1e-2)
    (w0, b0), (w1, b1), (w2, b2) = unpack(p)
    assert not b0.any() and not b1.any() and not b2.any()
    assert abs(w1.std() * np.sqrt(16 * 5) - 1) < 0.1
    assert w2.std() < 0.05 * w1.std()


def test_desk_network_size_limit():
    p = init_params(layer_specs([1, 8, 8, 1], 5), np.random.default_rng(0))
    assert p.size == 417 < 3000


@given(st.integers(0, 1000))
def test_property_tape_forward_bit_equal(seed):
    r = np.random.default_rng(seed)
    p = init_params(layer_specs([2, 4, 1], 5), r, features=("u", "x"), last_scale=1.0)
    u = r.standard_normal(16)
    tape = ad.Tape()
    th = tape.leaf(p.theta)
    assert np.array_equal(ad.value(net_forward(p, tape.leaf(u), th)), net_forward(p, u))
