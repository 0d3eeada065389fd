"""MLP forward against a straight-line oracle, backward against differences."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import max_rel_err, numeric_grad
from splatforest.mlp import Mlp, mlp_backward, mlp_eval


def straight_line(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Reference forward: explicit matmul/relu chain, no shared code paths."""
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w.T + b, 0.0)
    return h @ net.weights[-1].T + net.biases[-1]


def make_net(seed: int, d_in: int = 5, d_out: int = 4, hidden: int = 8) -> Mlp:
    return Mlp.init_random(np.random.default_rng(seed), d_in, d_out,
                           hidden_dim=hidden)


def test_zero_weights_give_zero_output():
    net = Mlp(3, 2, hidden_dim=4)
    y, _ = net.forward(np.ones(3))
    np.testing.assert_array_equal(y, np.zeros(2))


def test_identity_path_passes_positive_values():
    # one-hot weights wired straight through; relu is a no-op on positives
    net = Mlp(2, 2, hidden_dim=2)
    for w in net.weights:
        w[:] = np.eye(2)
    y, _ = net.forward(np.array([0.5, 1.5]))
    np.testing.assert_allclose(y, [0.5, 1.5])


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_straight_line_oracle(seed):
    net = make_net(seed)
    x = np.random.default_rng(100 + seed).normal(size=(7, 5))
    y, _ = net.forward(x)
    np.testing.assert_allclose(y, straight_line(net, x), rtol=0, atol=1e-12)


def test_single_vector_squeezes():
    net = make_net(0)
    x = np.random.default_rng(1).normal(size=5)
    y, _ = net.forward(x)
    assert y.shape == (4,)
    np.testing.assert_allclose(y, straight_line(net, x[None])[0])


def test_wrong_input_dim_raises():
    with pytest.raises(ValueError):
        make_net(0).forward(np.zeros(6))


def test_output_is_linear_in_last_layer():
    # y depends linearly on the last weight matrix: doubling it (bias zero)
    # doubles the output
    net = make_net(3)
    net.biases[-1][:] = 0.0
    x = np.random.default_rng(2).normal(size=(4, 5))
    y1, _ = net.forward(x)
    net.weights[-1] *= 2.0
    y2, _ = net.forward(x)
    np.testing.assert_allclose(y2, 2.0 * y1)


def test_zero_upstream_gradient_zeroes_everything():
    net = make_net(4)
    x = np.random.default_rng(3).normal(size=(3, 5))
    y, tape = net.forward(x)
    dx, grads = net.backward(tape, np.zeros_like(y))
    assert not dx.any()
    for dw, db in grads:
        assert not dw.any() and not db.any()


def test_backward_rejects_foreign_tape_or_bad_shape():
    net = make_net(5)
    x = np.random.default_rng(4).normal(size=(2, 5))
    y, tape = net.forward(x)
    with pytest.raises(ValueError):
        net.backward(tape, np.zeros((2, 3)))


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = make_net(seed)
    x = rng.normal(size=(3, 5))
    g_out = rng.normal(size=(3, 4))

    def objective() -> float:
        return float(np.sum(mlp_eval(net, x)[0] * g_out))

    y, tape = net.forward(x)
    dx, grads = mlp_backward(net, tape, g_out)

    assert max_rel_err(dx, numeric_grad(objective, x)) < 1e-3
    for li, (dw, db) in enumerate(grads):
        assert max_rel_err(dw, numeric_grad(objective, net.weights[li])) < 1e-3
        assert max_rel_err(db, numeric_grad(objective, net.biases[li])) < 1e-3
