import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorflow.flow import (
    ActionSpace,
    JointFlowPolicy,
    decode_discrete,
    euler_sample,
    flow_bc_loss,
    sample_joint_action,
    sample_noise,
)
from factorflow.metrics import coupling_rms, w2_exact
from factorflow.nn import MlpParams, adam_init, adam_step, count_evaluations, init_mlp, mlp_forward, value_and_grad
from factorflow.nn import zeros_like_mlp

from .oracles import euler_oracle


def linear_flow(weight, bias, obs_dim, act_dims, steps):
    """A velocity field that is one affine layer on [t, obs, x]."""
    net = MlpParams((np.asarray(weight, float),), (np.asarray(bias, float),), (), (), layer_norm=False)
    return JointFlowPolicy(net, (obs_dim,), ActionSpace("continuous", act_dims), steps)


def constant_flow(c, obs_dim=2, steps=4):
    c = np.asarray(c, float)
    return linear_flow(np.zeros((1 + obs_dim + len(c), len(c))), c, obs_dim, (len(c),), steps)


def identity_field_flow(steps):
    # v(t, o, x) = x for scalar x and 1-d obs
    return linear_flow(np.array([[0.0], [0.0], [1.0]]), np.zeros(1), 1, (1,), steps)


def small_flow(seed=0, obs_dims=(3, 3), dims=(2, 2), kind="continuous", steps=10):
    space = ActionSpace(kind, dims)
    return JointFlowPolicy.create(np.random.default_rng(seed), obs_dims, space, (16, 16), steps)


def test_velocity_net_dimensions():
    flow = small_flow(obs_dims=(3, 4), dims=(2, 5))
    assert flow.velocity.in_dim == 1 + 7 + 7
    assert flow.velocity.out_dim == 7


def test_oracle_velocity_gives_zero_loss():
    # a field that returns exactly a - x0 on the sampled path: v = (x_t - x0) / t
    # is nonlinear, so instead fix t = 1 where x_t = a and v = a - x0 with v(x) = x - x0
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 1))
    x0 = rng.standard_normal((5, 1))
    # with t = 0, x_t = x0 and the target a - x0 must come from the obs channel
    obs = a - x0
    flow = linear_flow(np.array([[0.0], [1.0], [0.0]]), np.zeros(1), 1, (1,), 10)
    loss = flow_bc_loss(flow, obs, a, noise=x0, t=np.zeros((5, 1)))
    assert float(loss.data) == 0.0


def test_single_sample_loss_is_squared_residual():
    flow = constant_flow([0.5, -1.0])
    a, x0 = np.array([[1.0, 2.0]]), np.array([[0.2, -0.3]])
    loss = flow_bc_loss(flow, np.zeros((1, 2)), a, noise=x0, t=np.array([[0.3]]))
    w = a - x0
    assert float(loss.data) == pytest.approx(float(np.sum((np.array([0.5, -1.0]) - w) ** 2)), abs=1e-15)


def test_loss_matches_standalone_reimplementation():
    flow = small_flow(1)
    rng = np.random.default_rng(2)
    obs, a = rng.standard_normal((9, 6)), rng.standard_normal((9, 4))
    x0, t = rng.standard_normal((9, 4)), rng.uniform(size=(9, 1))
    got = float(flow_bc_loss(flow, obs, a, noise=x0, t=t).data)
    # straight-line path built row by row
    total = 0.0
    for k in range(9):
        xt = (1 - t[k, 0]) * x0[k] + t[k, 0] * a[k]
        v = mlp_forward(flow.velocity, np.concatenate([[t[k, 0]], obs[k], xt])[None]).data[0]
        total += float(np.sum((v - (a[k] - x0[k])) ** 2))
    assert got == pytest.approx(total / 9, abs=1e-12)


def test_seeded_rng_loss_is_reproducible():
    flow = small_flow(1)
    obs, a = np.ones((4, 6)), np.zeros((4, 4))
    l1 = flow_bc_loss(flow, obs, a, np.random.default_rng(5)).data
    l2 = flow_bc_loss(flow, obs, a, np.random.default_rng(5)).data
    assert l1 == l2


def test_empty_batch_rejected():
    with pytest.raises(ValueError, match="non-empty"):
        flow_bc_loss(small_flow(), np.zeros((0, 6)), np.zeros((0, 4)), np.random.default_rng(0))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_loss_invariant_to_batch_order(seed):
    rng = np.random.default_rng(seed)
    flow = small_flow(3)
    obs, a = rng.standard_normal((8, 6)), rng.standard_normal((8, 4))
    x0, t = rng.standard_normal((8, 4)), rng.uniform(size=(8, 1))
    perm = rng.permutation(8)
    base = float(flow_bc_loss(flow, obs, a, noise=x0, t=t).data)
    shuffled = float(flow_bc_loss(flow, obs[perm], a[perm], noise=x0[perm], t=t[perm]).data)
    assert shuffled == pytest.approx(base, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.floats(-3, 3), st.floats(-3, 3))
def test_euler_exact_for_constant_field(steps, c1, c2):
    flow = constant_flow([c1, c2], steps=steps)
    z = np.random.default_rng(steps).standard_normal((5, 2))
    assert np.allclose(euler_sample(flow, np.zeros((5, 2)), z), z + np.array([c1, c2]), atol=1e-12)


def test_euler_hand_recursion_two_steps():
    out = euler_sample(identity_field_flow(2), np.zeros((1, 1)), np.ones((1, 1)))
    assert out[0, 0] == 2.25


@pytest.mark.parametrize("steps", [1, 3, 10])
def test_euler_matches_loop_oracle(steps):
    out = euler_sample(identity_field_flow(steps), np.zeros((1, 1)), np.full((1, 1), 0.7))
    assert out[0, 0] == pytest.approx(euler_oracle(lambda t, x: x, 0.7, steps), abs=1e-12)


def test_single_step_is_noise_plus_velocity_at_zero():
    flow = small_flow(4, steps=1)
    rng = np.random.default_rng(0)
    obs, z = rng.standard_normal((3, 6)), rng.standard_normal((3, 4))
    v0 = mlp_forward(flow.velocity, np.concatenate([np.zeros((3, 1)), obs, z], axis=1)).data
    assert np.allclose(euler_sample(flow, obs, z), z + v0, atol=1e-14)


def test_noise_dimension_checked():
    with pytest.raises(ValueError, match="noise dimension"):
        euler_sample(small_flow(), np.zeros((2, 6)), np.zeros((2, 3)))


def test_joint_sample_counts_m_evaluations():
    flow = small_flow(steps=10)
    with count_evaluations() as c:
        euler_sample(flow, np.zeros((1, 6)), np.zeros((1, 4)))
    assert c.count == 10


def test_zero_net_returns_drawn_noise():
    flow = small_flow()
    flow = flow.with_velocity(zeros_like_mlp(flow.velocity))
    act, z = sample_joint_action(flow, np.zeros((3, 6)), np.random.default_rng(0))
    assert np.array_equal(act, z)


def test_same_seed_same_sample():
    flow = small_flow(2)
    a1, z1 = sample_joint_action(flow, np.ones(6), np.random.default_rng(9))
    a2, z2 = sample_joint_action(flow, np.ones(6), np.random.default_rng(9))
    assert np.array_equal(a1, a2) and np.array_equal(z1, z2)


def test_decode_argmax_and_mask():
    space = ActionSpace("discrete", (3,))
    assert decode_discrete(np.array([[0.1, 2.0, -1.0]]), space)[0, 0] == 1
    mask = np.array([True, False, True])
    assert decode_discrete(np.array([[0.1, 2.0, -1.0]]), space, mask=mask)[0, 0] == 0


def test_decode_all_masked_is_error():
    space = ActionSpace("discrete", (2, 2))
    mask = np.array([True, True, False, False])
    with pytest.raises(ValueError, match="agent 1"):
        decode_discrete(np.zeros((1, 4)), space, mask=mask)


def test_decode_uniform_block_samples_uniformly():
    space = ActionSpace("discrete", (3,))
    idx = decode_discrete(np.zeros((10_000, 3)), space, temperature=0.7, rng=np.random.default_rng(0))
    freq = np.bincount(idx[:, 0], minlength=3) / 10_000
    assert np.all(np.abs(freq - 1 / 3) <= 0.03)


def test_decode_temperature_sampling_frequencies():
    space = ActionSpace("discrete", (2,))
    block = np.tile([0.0, np.log(3.0)], (20_000, 1))
    idx = decode_discrete(block, space, temperature=1.0, rng=np.random.default_rng(1))
    assert np.mean(idx[:, 0] == 1) == pytest.approx(0.75, abs=0.015)


def test_encode_one_hot_blocks():
    space = ActionSpace("discrete", (2, 3))
    enc = space.encode(np.array([[1, 2], [0, 0]]))
    assert enc.tolist() == [[0, 1, 0, 0, 1], [1, 0, 1, 0, 0]]


def test_shared_noise_coupling_upper_bounds_w2():
    flow = small_flow(5)
    other = small_flow(6)
    rng = np.random.default_rng(0)
    obs = np.tile(rng.standard_normal(6), (64, 1))
    z = sample_noise(flow, 64, rng)
    a, b = euler_sample(flow, obs, z), euler_sample(other, obs, z)
    assert w2_exact(a, b) <= coupling_rms(a, b) + 1e-12


def _train(flow, obs, act, steps, lr, seed):
    rng = np.random.default_rng(seed)
    opt = adam_init(flow.velocity, lr)
    v = flow.velocity
    for _ in range(steps):
        idx = rng.integers(len(obs), size=64)
        x0 = rng.standard_normal((64, act.shape[1]))
        t = rng.uniform(size=(64, 1))
        _, g = value_and_grad(lambda p: flow_bc_loss(flow.with_velocity(p), obs[idx], act[idx], noise=x0, t=t), v)
        v, opt = adam_step(v, g, opt)
    return flow.with_velocity(v)


def test_point_target_loss_drops_tenfold():
    # target a = 0 has the zero-loss field -x / (1 - t)
    net = init_mlp(np.random.default_rng(0), 1 + 1 + 1, 1, (32,), layer_norm=False, activation="tanh")
    flow = JointFlowPolicy(net, (1,), ActionSpace("continuous", (1,)), 10)
    obs = np.zeros((256, 1))
    act = np.zeros((256, 1))
    rng = np.random.default_rng(1)
    x0, t = rng.standard_normal((2000, 1)), rng.uniform(0.0, 0.9, size=(2000, 1))

    def held_out(f):
        return float(flow_bc_loss(f, np.zeros((2000, 1)), np.zeros((2000, 1)), noise=x0, t=t).data)

    before = held_out(flow)
    after = held_out(_train(flow, obs, act, 1500, 1e-2, 0))
    assert after <= 0.1 * before


def test_two_mode_toy_keeps_both_modes():
    rng = np.random.default_rng(0)
    act = np.where(rng.uniform(size=(2000, 1)) < 0.5, -1.0, 1.0) + 0.05 * rng.standard_normal((2000, 1))
    obs = np.ones((2000, 1))
    flow = JointFlowPolicy.create(np.random.default_rng(1), (1,), ActionSpace("continuous", (1,)), (64, 64))
    flow = _train(flow, obs, act, 1500, 3e-3, 2)
    samples, _ = sample_joint_action(flow, np.ones((1000, 1)), np.random.default_rng(3))
    assert np.mean(samples[:, 0] < 0) >= 0.3 and np.mean(samples[:, 0] > 0) >= 0.3
