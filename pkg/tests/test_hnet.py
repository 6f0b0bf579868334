import numpy as np
import pytest

from redistnet.features import FeatureCombo
from redistnet.hnet import NeuralRedistribution, SumHPass, init_h_network
from redistnet.mechanism import h_values, sum_h

ALL = list(FeatureCombo)


def net(n, combo, seed=0, hidden=(7, 6)):
    return NeuralRedistribution(init_h_network(n, combo, np.random.default_rng(seed), hidden), n, combo)


def test_default_architecture():
    p = init_h_network(6, FeatureCombo.C8, np.random.default_rng(0))
    assert p.layer_sizes == (3, 100, 100, 100, 100, 100, 100, 1)
    assert init_h_network(4, FeatureCombo.RAW, np.random.default_rng(0)).layer_sizes[0] == 3


def test_shape_mismatch_rejected():
    p = init_h_network(4, FeatureCombo.RAW, np.random.default_rng(0), (5,))
    with pytest.raises(ValueError):
        NeuralRedistribution(p, 5, FeatureCombo.RAW)
    with pytest.raises(ValueError):
        SumHPass(NeuralRedistribution(p, 4), np.zeros((2, 5)))


@pytest.mark.parametrize("combo", ALL)
def test_sum_pass_matches_mechanism(combo):
    h = net(5, combo)
    P = np.random.default_rng(1).random((30, 5))
    fwd = SumHPass(h, P)
    np.testing.assert_allclose(fwd.h_values, h_values(h, P), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(fwd.sum_h, sum_h(h, P), rtol=1e-12, atol=1e-12)


def test_h_ignores_own_type_and_order():
    h = net(4, FeatureCombo.RAW)
    a = h([0.2, 0.7, 0.1])
    assert h([0.7, 0.1, 0.2]) == a
    P = np.array([[0.9, 0.2, 0.7, 0.1], [0.05, 0.2, 0.7, 0.1]])
    hv = h_values(h, P)
    assert hv[0, 0] == hv[1, 0]
    # batched and single-row matmuls may round differently
    assert hv[0, 0] == pytest.approx(a, rel=1e-12)


@pytest.mark.parametrize("combo", ALL)
def test_parameter_and_profile_gradients(combo):
    rng = np.random.default_rng(2)
    h = net(5, combo, seed=3)
    P = rng.random((4, 5))
    g = rng.normal(size=4)
    gw, gb, gp = SumHPass(h, P).backward(g, want_input=True)
    eps = 1e-6

    def f(profiles):
        return float(SumHPass(h, profiles).sum_h @ g)

    numeric = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        up, down = P.copy(), P.copy()
        up[idx] += eps
        down[idx] -= eps
        numeric[idx] = (f(up) - f(down)) / (2 * eps)
    np.testing.assert_allclose(gp, numeric, rtol=1e-5, atol=1e-8)
    # spot-check a few weights of the first and last layers
    for arr, grad in ((h.params.weights[0], gw[0]), (h.params.biases[-1], gb[-1])):
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for j in range(min(4, flat.size)):
            keep = flat[j]
            flat[j] = keep + eps
            up = f(P)
            flat[j] = keep - eps
            down = f(P)
            flat[j] = keep
            assert gflat[j] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-8)


def test_backward_without_input_gradient():
    h = net(3, FeatureCombo.RAW)
    gw, gb, gp = SumHPass(h, np.random.default_rng(0).random((5, 3))).backward(np.ones(5))
    assert gp is None and len(gw) == len(h.params.weights)
