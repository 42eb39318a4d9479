import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import failure_example
from tightprop.bounds import (InputBox, Interval, affine_interval, blockwise_envelope,
                              expected_bounds_block, ibp_network, mask_from_upper,
                              propagate_blockwise, relu_interval, width)
from tightprop.errors import DimensionError, ParameterError
from tightprop.linalg import make_rng
from tightprop.network import AffineLayer, forward, init_network, network_from_arrays
from tightprop.oracle import two_layer_net


def test_affine_interval_point_box():
    layer = AffineLayer(np.array([[1.0, -2.0], [0.5, 3.0]]), np.array([1.0, -1.0]))
    x = np.array([0.3, -0.7])
    iv = affine_interval(layer, InputBox(x, 0.0))
    assert np.array_equal(iv.lower, iv.upper)
    assert np.array_equal(iv.lower, layer.weights @ x + layer.bias)


def test_affine_interval_identity():
    x = np.array([1.0, -2.0, 0.5])
    iv = affine_interval(AffineLayer(np.eye(3), np.zeros(3)), InputBox(x, 0.25))
    assert np.array_equal(iv.lower, x - 0.25) and np.array_equal(iv.upper, x + 0.25)


@pytest.mark.parametrize("n", [2, 8])
def test_failure_example_first_layer(n):
    A1, b1, _, _ = failure_example(n)
    iv = affine_interval(AffineLayer(A1, b1), InputBox(np.zeros(n), 1.0))
    assert np.array_equal(iv.lower, np.full(n, -1999.0))
    # -999 + 1000 * 1: the upper end is 1, not 1001.
    assert np.array_equal(iv.upper, np.full(n, 1.0))


def test_affine_interval_dimension_mismatch():
    with pytest.raises(DimensionError):
        affine_interval(AffineLayer(np.ones((2, 3)), np.zeros(2)), InputBox(np.zeros(2), 1.0))


def test_relu_interval_cases():
    iv = relu_interval(Interval(np.array([-1.0, 0.5, -3.0]), np.array([1.0, 2.0, -1.0])))
    assert np.array_equal(iv.lower, [0.0, 0.5, 0.0])
    assert np.array_equal(iv.upper, [1.0, 2.0, 0.0])


@pytest.mark.parametrize("n", [2, 8])
def test_failure_example_ibp_and_expected(n):
    net = two_layer_net(*failure_example(n))
    box = InputBox(np.zeros(n), 1.0)
    ibp = ibp_network(net, box)
    m = expected_bounds_block(*failure_example(n), box)
    assert abs(ibp.lower[0] + 10 * n) <= 1e-9 and abs(ibp.upper[0]) <= 1e-9
    assert abs(m.lower[0] + 10 * n) <= 1e-9 and abs(m.upper[0] - 19990 * n) <= 1e-9
    assert width(ibp)[0] - width(m)[0] == pytest.approx(-19990 * n, abs=1e-9)


def test_ibp_all_active_hand_example():
    net = network_from_arrays([[[1.0]], [[1.0]]], [[10.0], [0.0]])
    iv = ibp_network(net, InputBox(np.zeros(1), 1.0))
    assert iv.lower[0] == 9.0 and iv.upper[0] == 11.0


def test_ibp_matches_closed_form_at_depth_two():
    rng = make_rng(5)
    A1, b1 = rng.normal(size=(6, 4)), rng.normal(size=6)
    a2, b2 = rng.normal(size=6), 0.3
    x, eps = rng.normal(size=4), 0.2
    l1 = A1 @ x + b1 - eps * np.abs(A1).sum(axis=1)
    u1 = A1 @ x + b1 + eps * np.abs(A1).sum(axis=1)
    lo_r, hi_r = np.maximum(l1, 0), np.maximum(u1, 0)
    pos, neg = np.maximum(a2, 0), np.minimum(a2, 0)
    L = pos @ lo_r + neg @ hi_r + b2
    U = pos @ hi_r + neg @ lo_r + b2
    iv = ibp_network(two_layer_net(A1, b1, a2, b2), InputBox(x, eps))
    assert iv.lower[0] == pytest.approx(L, abs=1e-12) and iv.upper[0] == pytest.approx(U, abs=1e-12)


def test_ibp_sound_on_samples():
    rng = make_rng(6)
    net = init_network(rng, [5, 8, 8, 3])
    x = rng.normal(size=5)
    box = InputBox(x, 0.3)
    iv = ibp_network(net, box)
    out = forward(net, x + rng.uniform(-0.3, 0.3, size=(10_000, 5)))
    assert iv.contains(out, slack=1e-9)


def test_mask_from_upper():
    assert np.array_equal(mask_from_upper(np.array([-1.0, 0.0, 2.0])), [0.0, 1.0, 1.0])
    assert np.array_equal(mask_from_upper(-np.ones(3)), np.zeros(3))
    assert np.array_equal(mask_from_upper(np.ones(3)), np.ones(3))


def test_abs_example_is_not_sound():
    A1, b1, a2 = np.array([[1.0], [-1.0]]), np.zeros(2), np.array([1.0, 1.0])
    m = expected_bounds_block(A1, b1, a2, 0.0, InputBox(np.zeros(1), 1.0))
    assert m.lower[0] == 0.0 and m.upper[0] == 0.0


def test_expected_bounds_point_box_is_forward():
    rng = make_rng(7)
    A1, b1, a2 = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=5)
    x = rng.normal(size=3)
    m = expected_bounds_block(A1, b1, a2, 0.4, InputBox(x, 0.0))
    y = forward(two_layer_net(A1, b1, a2, 0.4), x)
    assert m.lower[0] == pytest.approx(y[0], abs=1e-12) and m.upper[0] == pytest.approx(y[0], abs=1e-12)


def test_expected_bounds_multi_output_rowwise():
    rng = make_rng(8)
    A1, b1 = rng.normal(size=(6, 3)), rng.normal(size=6)
    A2, b2 = rng.normal(size=(2, 6)), rng.normal(size=2)
    box = InputBox(rng.normal(size=3), 0.1)
    both = expected_bounds_block(A1, b1, A2, b2, box)
    for o in range(2):
        one = expected_bounds_block(A1, b1, A2[o], b2[o], box)
        assert both.lower[o] == pytest.approx(one.lower[0], abs=1e-12)
        assert both.upper[o] == pytest.approx(one.upper[0], abs=1e-12)


def test_blockwise_depth_two_reduces_to_block():
    rng = make_rng(9)
    net = init_network(rng, [4, 10, 2])
    box = InputBox(rng.normal(size=4), 0.2)
    iv, _ = propagate_blockwise(net, box)
    (l1, l2) = net.layers
    ref = expected_bounds_block(l1.weights, l1.bias, l2.weights, l2.bias, box)
    assert np.allclose(iv.lower, ref.lower, atol=1e-12) and np.allclose(iv.upper, ref.upper, atol=1e-12)


def test_blockwise_all_active_linear_chain():
    rng = make_rng(10)
    ws = [np.abs(rng.normal(size=(5, 3))), np.abs(rng.normal(size=(4, 5))), np.abs(rng.normal(size=(2, 4)))]
    net = network_from_arrays(ws, [np.zeros(5), np.zeros(4), np.zeros(2)])
    box = InputBox(np.full(3, 10.0), 0.1)
    iv, env = propagate_blockwise(net, box)
    prod = ws[2] @ ws[1] @ ws[0]
    ref = affine_interval(AffineLayer(prod, np.zeros(2)), box)
    assert np.allclose(env.map, prod, rtol=1e-13)
    assert np.allclose(iv.lower, ref.lower, rtol=1e-13) and np.allclose(iv.upper, ref.upper, rtol=1e-13)


def test_blockwise_bias_free_matches_reference_recursion():
    rng = make_rng(11)
    ws = [rng.normal(size=(6, 4)), rng.normal(size=(6, 6)), rng.normal(size=(1, 6))]
    net = network_from_arrays(ws, [np.zeros(6), np.zeros(6), np.zeros(1)])
    x, eps = rng.normal(size=4), 0.05
    G = ws[0]
    for A in ws[1:]:
        M = np.diag((G @ x + eps * np.abs(G).sum(axis=1) >= 0).astype(float))
        G = A @ M @ G
    iv, _ = propagate_blockwise(net, InputBox(x, eps))
    c, r = G @ x, eps * np.abs(G).sum(axis=1)
    assert np.allclose(iv.lower, c - r, atol=1e-12) and np.allclose(iv.upper, c + r, atol=1e-12)


def test_blockwise_batch_matches_single():
    rng = make_rng(12)
    net = init_network(rng, [3, 7, 7, 2])
    X = rng.normal(size=(4, 3))
    G, h, _ = blockwise_envelope(net, X, 0.1)
    for i, x in enumerate(X):
        g1, h1, _ = blockwise_envelope(net, x, 0.1)
        assert np.allclose(G[i], g1, atol=1e-13) and np.allclose(h[i], h1, atol=1e-13)


def test_blockwise_requires_two_layers():
    with pytest.raises(ParameterError):
        propagate_blockwise(init_network(make_rng(0), [3, 2]), InputBox(np.zeros(3), 0.1))


def test_scaling_equivariance():
    rng = make_rng(13)
    A1, b1, a2, b2 = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=5), 0.7
    box = InputBox(rng.normal(size=3), 0.2)
    base = expected_bounds_block(A1, b1, a2, b2, box)
    scaled = expected_bounds_block(A1, b1, 2.5 * a2, 2.5 * b2, box)
    assert np.allclose(scaled.lower, 2.5 * base.lower, rtol=1e-14)
    assert np.allclose(scaled.upper, 2.5 * base.upper, rtol=1e-14)


def test_all_active_tighter_than_ibp_and_exact():
    rng = make_rng(14)
    for _ in range(20):
        A1 = rng.normal(size=(8, 4))
        x = rng.normal(size=4)
        b1 = np.abs(A1).sum(axis=1) + 1.0 - A1 @ x  # every unit active over the box
        a2 = rng.normal(size=8)
        box = InputBox(x, 0.5)
        m = expected_bounds_block(A1, b1, a2, 0.0, box)
        ibp = ibp_network(two_layer_net(A1, b1, a2, 0.0), box)
        exact = affine_interval(AffineLayer((a2 @ A1)[None, :], np.array([a2 @ b1])), box)
        assert np.allclose(m.lower, exact.lower, atol=1e-12) and np.allclose(m.upper, exact.upper, atol=1e-12)
        assert width(m)[0] <= width(ibp)[0] + 1e-12


def test_width_nondecreasing_in_eps():
    rng = make_rng(15)
    for _ in range(100):
        net = init_network(rng, [5, 10, 1])
        x = rng.normal(size=5)
        for prop in (ibp_network, lambda n, b: propagate_blockwise(n, b)[0]):
            assert width(prop(net, InputBox(x, 0.2)))[0] >= width(prop(net, InputBox(x, 0.1)))[0] - 1e-12


def test_interval_validation():
    with pytest.raises(ParameterError):
        Interval(np.array([1.0]), np.array([0.0]))
    with pytest.raises(ParameterError):
        Interval(np.array([np.nan]), np.array([0.0]))
    with pytest.raises(ParameterError):
        InputBox(np.zeros(2), -1.0)
    assert np.array_equal(width(Interval(np.zeros(1), np.zeros(1))), [0.0])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(2, 5), eps=st.floats(0, 1))
def test_lower_never_exceeds_upper_and_ibp_sound(seed, depth, eps):
    rng = make_rng(seed)
    dims = [int(d) for d in rng.integers(1, 7, size=depth + 1)]
    net = init_network(rng, dims)
    x = rng.normal(size=dims[0])
    box = InputBox(x, eps)
    iv, _ = propagate_blockwise(net, box)
    assert np.all(iv.lower <= iv.upper)
    pts = x + eps * rng.uniform(-1, 1, size=(64, dims[0]))
    assert ibp_network(net, box).contains(forward(net, pts), slack=1e-9)
