import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorflow.nn import (
    MlpParams,
    adam_init,
    adam_step,
    autodiff as ad,
    count_evaluations,
    grad,
    init_mlp,
    load_checkpoint,
    mlp_forward,
    polyak_update,
    save_checkpoint,
    tree_leaves,
    tree_map,
    value_and_grad,
    zeros_like_mlp,
)
from factorflow.nn.mlp import _forward_numpy

from .oracles import central_difference_grads, dense_forward


def test_zero_net_outputs_zero():
    net = zeros_like_mlp(init_mlp(np.random.default_rng(0), 3, 2, (5, 4)))
    out = mlp_forward(net, np.random.default_rng(1).standard_normal((7, 3)))
    assert np.array_equal(out.data, np.zeros((7, 2)))


def test_identity_linear_layer():
    net = MlpParams((np.eye(2),), (np.zeros(2),), (), (), layer_norm=False)
    assert np.array_equal(mlp_forward(net, np.array([[1.0, 2.0]])).data, [[1.0, 2.0]])


@pytest.mark.parametrize("layer_norm", [False, True])
def test_forward_matches_dense_oracle(layer_norm):
    rng = np.random.default_rng(3)
    net = init_mlp(rng, 2, 1, (4,), layer_norm=layer_norm)
    if layer_norm:
        net = net.with_arrays([a + 0.1 * rng.standard_normal(a.shape) for a in net.arrays()])
    x = rng.standard_normal((5, 2))
    np.testing.assert_allclose(mlp_forward(net, x).data, dense_forward(net, x), rtol=0, atol=1e-12)


def test_traced_and_graph_free_forward_agree_bitwise():
    rng = np.random.default_rng(4)
    net = init_mlp(rng, 6, 3, (8, 8))
    x = rng.standard_normal((11, 6))
    traced = mlp_forward(net, ad.Tensor(x, requires_grad=True)).data
    assert np.array_equal(traced, _forward_numpy(net, x))


def test_input_dimension_error_names_both_sizes():
    net = init_mlp(np.random.default_rng(0), 3, 1, (4,))
    with pytest.raises(ValueError, match="expected 3, got 5"):
        mlp_forward(net, np.zeros((2, 5)))


def test_forward_is_deterministic():
    net = init_mlp(np.random.default_rng(0), 3, 2)
    x = np.random.default_rng(1).standard_normal((4, 3))
    assert np.array_equal(mlp_forward(net, x).data, mlp_forward(net, x).data)


def test_grad_of_single_squared_weight():
    net = init_mlp(np.random.default_rng(0), 2, 1, (3,), layer_norm=False)
    w0 = net.weights[0].copy()
    w0[1, 2] = 3.0
    net = net.with_arrays([w0, *net.arrays()[1:]])
    g = grad(lambda p: ad.square(p.weights[0][1, 2]), net)
    expected = np.zeros_like(w0)
    expected[1, 2] = 6.0
    assert np.array_equal(g.weights[0], expected)
    for leaf in tree_leaves(g)[1:]:
        assert not np.any(leaf)


def test_constant_loss_has_zero_grad():
    net = init_mlp(np.random.default_rng(0), 2, 1, (3,))
    g = grad(lambda p: ad.as_tensor(5.0), net)
    assert all(not np.any(leaf) for leaf in tree_leaves(g))


def test_non_scalar_loss_rejected():
    net = init_mlp(np.random.default_rng(0), 2, 3, (3,))
    with pytest.raises(ValueError, match="scalar"):
        grad(lambda p: mlp_forward(p, np.ones((1, 2))), net)


@pytest.mark.parametrize("seed", range(20))
def test_random_net_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    depth = int(rng.integers(1, 4))
    hidden = tuple(int(h) for h in rng.integers(2, 9, size=depth - 1))
    act = ["gelu", "tanh", "relu"][seed % 3] if seed % 3 != 2 else "gelu"
    net = init_mlp(rng, 3, 2, hidden, layer_norm=bool(seed % 2), activation=act)
    x = rng.standard_normal((6, 3))
    y = rng.standard_normal((6, 2))

    def loss(p):
        return ad.square(mlp_forward(p, x) - y).sum(axis=-1).mean()

    _, g = value_and_grad(loss, net)
    fd = central_difference_grads(lambda p: float(loss(p).data), net, 1e-5)
    for a, b in zip(tree_leaves(g), tree_leaves(fd)):
        np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-7)


def test_layer_norm_standardizes():
    x = np.random.default_rng(0).standard_normal((50, 9)) * 4 + 2
    y = ad.layer_norm(x).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-6)  # eps=1e-6 shifts the variance slightly
    y0 = ad.layer_norm(x, eps=0.0).data
    np.testing.assert_allclose(y0.var(axis=-1), 1.0, atol=1e-9)


def test_nfe_counter():
    net = init_mlp(np.random.default_rng(0), 2, 1, (3,))
    with count_evaluations() as c:
        for _ in range(4):
            mlp_forward(net, np.zeros((1, 2)))
    assert c.count == 4


# -------------------------------------------------------------------- Adam


def _scalar_params(value):
    return {"w": np.array([value])}


def test_adam_zero_grad_changes_only_step():
    p = _scalar_params(1.5)
    s = adam_init(p, lr=0.1)
    p2, s2 = adam_step(p, {"w": np.zeros(1)}, s)
    assert np.array_equal(p2["w"], p["w"]) and s2.step == 1


def test_adam_lr_zero_is_identity():
    p = _scalar_params(1.5)
    p2, _ = adam_step(p, {"w": np.array([3.0])}, adam_init(p, lr=0.0))
    assert np.array_equal(p2["w"], p["w"])


def _adam_oracle(p, grads, lr, eps=1e-5, b1=0.9, b2=0.999):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return p


def test_adam_single_step_matches_scalar_recursion():
    p = _scalar_params(0.0)
    p2, s2 = adam_step(p, {"w": np.array([1.0])}, adam_init(p, lr=0.1))
    assert abs(p2["w"][0] - (-0.1 / (1 + 1e-5))) < 1e-12
    assert abs(p2["w"][0] - _adam_oracle(0.0, [1.0], 0.1)) < 1e-12


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8), st.floats(1e-4, 0.5))
@settings(max_examples=50, deadline=None)
def test_adam_matches_recursion_over_steps(gs, lr):
    p = _scalar_params(0.3)
    s = adam_init(p, lr=lr)
    for g in gs:
        p, s = adam_step(p, {"w": np.array([g])}, s)
    assert s.step == len(gs)
    assert abs(p["w"][0] - _adam_oracle(0.3, gs, lr)) < 1e-12


def test_adam_rejects_nan_gradient():
    p = _scalar_params(0.0)
    with pytest.raises(FloatingPointError, match="non-finite"):
        adam_step(p, {"w": np.array([np.nan])}, adam_init(p))


# ------------------------------------------------------------------ Polyak


def test_polyak_limits_and_midpoint():
    t, o = {"w": np.array([2.0])}, {"w": np.array([4.0])}
    assert polyak_update(t, o, 0.0)["w"][0] == 2.0
    assert polyak_update(t, o, 1.0)["w"][0] == 4.0
    assert polyak_update(t, o, 0.5)["w"][0] == 3.0
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError):
            polyak_update(t, o, bad)


def test_tree_map_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        tree_map(lambda a, b: a + b, {"w": np.zeros(2)}, {"w": np.zeros(3)})


# -------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    nets = {"a": init_mlp(rng, 3, 2, (4, 5)), "b": init_mlp(rng, 2, 1, (3,), layer_norm=False, activation="tanh")}
    path = tmp_path / "x.ffck"
    save_checkpoint(path, nets, {"step": 7})
    loaded, meta = load_checkpoint(path)
    assert meta == {"step": 7}
    for name in nets:
        assert loaded[name].activation == nets[name].activation
        assert loaded[name].layer_norm == nets[name].layer_norm
        for a, b in zip(loaded[name].arrays(), nets[name].arrays()):
            assert np.array_equal(a, b)


def test_checkpoint_refuses_non_finite(tmp_path):
    net = init_mlp(np.random.default_rng(0), 2, 1, (3,))
    bad = net.with_arrays([np.full_like(a, np.nan) for a in net.arrays()])
    with pytest.raises(ValueError, match="non-finite"):
        save_checkpoint(tmp_path / "bad.ffck", {"n": bad})
    assert not (tmp_path / "bad.ffck").exists()


def test_checkpoint_detects_truncation(tmp_path):
    path = tmp_path / "t.ffck"
    save_checkpoint(path, {"n": init_mlp(np.random.default_rng(0), 2, 1, (3,))})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)
