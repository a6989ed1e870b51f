from __future__ import annotations

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlsl.agent import (
    MAGIC,
    AdamState,
    Batch,
    CheckpointMismatch,
    DQNAgent,
    EmptySafeSet,
    Hyperparams,
    NonFiniteLoss,
    QNetwork,
    ReplayBuffer,
    Transition,
    agent_from_bytes,
    checkpoint_bytes,
    forward,
    load_checkpoint,
    save_checkpoint,
    schedule,
    select_action,
    sgd_step,
    sync_target,
    td_targets,
)
from drlsl.road import Action

from helpers import grad_rel_error, numeric_grads

RNG = np.random.default_rng


def small_hp(**kw):
    base = dict(hidden=(8, 8), buffer_capacity=64, batch_size=4, target_sync_C=5, episodes=10)
    base.update(kw)
    return Hyperparams(**base)


def batch(n, rng, dim=10, done=None):
    return Batch(
        s=rng.normal(size=(n, dim)),
        a=rng.integers(0, 3, size=n),
        r=rng.normal(size=n),
        s_next=rng.normal(size=(n, dim)),
        done=np.zeros(n) if done is None else np.asarray(done, dtype=float),
        tau=np.ones(n),
    )


# -- network ----------------------------------------------------------------------


def test_zero_output_layer_returns_biases():
    net = QNetwork(rng=RNG(0))
    net.params[-2][...] = 0.0
    net.params[-1][...] = [0.5, -1.0, 2.0]
    assert forward(net, np.ones(10)).tolist() == [0.5, -1.0, 2.0]


def test_hand_computed_toy_net():
    net = QNetwork((2, 1, 3))
    net.load_params(
        [np.array([[1.0], [-2.0]]), np.array([0.5]), np.array([[1.0, 2.0, -1.0]]), np.array([0.0, 0.1, 0.2])]
    )
    # hidden pre-activation 1 - 0.5 + 0.5 = 1
    assert net.forward(np.array([1.0, 0.25])) == pytest.approx([1.0, 2.1, -0.8])
    # negative pre-activation is rectified away
    assert net.forward(np.array([-1.0, 0.0])) == pytest.approx([0.0, 0.1, 0.2])


def test_default_shape_and_determinism():
    a, b = DQNAgent(seed=5), DQNAgent(seed=5)
    assert a.net.sizes == (10, 256, 256, 3)
    x = RNG(1).random(10)
    assert np.array_equal(a.q_values(x), b.q_values(x))
    assert not np.array_equal(a.q_values(x), DQNAgent(seed=6).q_values(x))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    assert grad_rel_error(seed) < 1e-4


def test_tanh_gradients_too():
    rng = RNG(3)
    net = QNetwork((3, 4, 3), "tanh", rng)
    s, a, y = rng.normal(size=(3, 3)), np.array([0, 2, 1]), rng.normal(size=3)
    _, analytic = net.loss_and_grads(s, a, y)
    for ga, gn in zip(analytic, numeric_grads(net, s, a, y)):
        assert ga == pytest.approx(gn, rel=1e-5, abs=1e-8)


def test_only_taken_action_gets_gradient():
    net = QNetwork((4, 5, 3), rng=RNG(0))
    s = RNG(1).normal(size=(2, 4))
    _, grads = net.loss_and_grads(s, np.array([1, 1]), np.zeros(2))
    assert np.all(grads[-2][:, [0, 2]] == 0.0) and np.all(grads[-1][[0, 2]] == 0.0)


# -- action selection -----------------------------------------------------------------


def test_masked_argmax():
    q = np.array([0.5, 0.9, 0.1])
    assert select_action(q, {0, 2}, 0.0, RNG(0)) is Action.LANE_KEEPING
    assert select_action(q, {0, 1, 2}, 0.0, RNG(0)) is Action(1)
    assert select_action(q, {0}, 1.0, RNG(0)) is Action.LANE_KEEPING


def test_ties_go_to_the_lowest_index():
    assert select_action(np.array([1.0, 1.0, 1.0]), {1, 2}, 0.0, RNG(0)) is Action(1)


def test_empty_safe_set():
    with pytest.raises(EmptySafeSet):
        select_action(np.zeros(3), set(), 0.0, RNG(0))


def test_exploration_is_uniform_over_the_safe_set():
    rng = RNG(7)
    picks = [int(select_action(np.array([9.0, 0.0, 0.0]), {1, 2}, 1.0, rng)) for _ in range(4000)]
    assert set(picks) == {1, 2}
    assert abs(picks.count(1) - 2000) < 3 * np.sqrt(4000 * 0.25)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3),
    st.sets(st.integers(0, 2), min_size=1),
    st.sampled_from([lambda z: 3 * z + 1, np.exp, lambda z: np.tanh(z / 1e3), lambda z: z**3]),
)
def test_greedy_choice_survives_monotone_transforms(q, safe, f):
    q = np.array(q)
    a = select_action(q, safe, 0.0, RNG(0))
    assert int(a) in safe
    with np.errstate(over="ignore"):
        fq = f(q)
    if len(set(fq[sorted(safe)])) == len(set(q[sorted(safe)])):
        assert select_action(fq, safe, 0.0, RNG(0)) == a


# -- targets and updates ----------------------------------------------------------------


def test_td_target_cases():
    net = QNetwork((2, 3, 3), rng=RNG(0))
    net.params[-2][...] = 0.0
    net.params[-1][...] = [2.0, 1.0, -1.0]
    b = Batch(np.zeros((2, 2)), np.array([0, 0]), np.array([-100.0, 1.0]), np.zeros((2, 2)), np.array([1.0, 0.0]), np.ones(2))
    assert td_targets(b, net, 0.95).tolist() == pytest.approx([-100.0, 2.9])
    assert td_targets(b, net, 0.0).tolist() == [-100.0, 1.0]


def test_semi_markov_discount():
    net = QNetwork((2, 3, 3), rng=RNG(0))
    net.params[-2][...] = 0.0
    net.params[-1][...] = [2.0, 0.0, 0.0]
    b = Batch(np.zeros((1, 2)), np.array([0]), np.array([0.0]), np.zeros((1, 2)), np.array([0.0]), np.array([2.5]))
    assert td_targets(b, net, 0.95)[0] == pytest.approx(2.0 * 0.95**2.5)


def test_zero_error_leaves_parameters_nearly_still():
    net = QNetwork((3, 4, 3), rng=RNG(0))
    b = batch(4, RNG(1), dim=3)
    before = [p.copy() for p in net.params]
    y = net.forward(b.s)[np.arange(4), b.a]
    loss = sgd_step(net, AdamState(net.params), b, y, 0.01)
    assert loss == 0.0
    for p, q in zip(before, net.params):
        assert np.array_equal(p, q)


def test_one_step_reduces_loss():
    net = QNetwork((3, 4, 3), rng=RNG(0))
    b = batch(1, RNG(2), dim=3)
    y = np.array([5.0])
    first = sgd_step(net, AdamState(net.params), b, y, 1e-3)
    again, _ = net.loss_and_grads(b.s, b.a, y)
    assert again < first


def test_non_finite_loss_aborts():
    net = QNetwork((3, 4, 3), rng=RNG(0))
    b = batch(2, RNG(1), dim=3)
    with pytest.raises(NonFiniteLoss), np.errstate(invalid="ignore"):
        sgd_step(net, AdamState(net.params), b, np.array([np.inf, 0.0]), 0.01)


def test_sync_makes_networks_identical():
    agent = DQNAgent(small_hp(), seed=0)
    agent.net.params[0] += 1.0
    x = RNG(3).random((4, 10))
    assert not np.array_equal(agent.net.forward(x), agent.target.forward(x))
    sync_target(agent.net, agent.target)
    assert np.array_equal(agent.net.forward(x), agent.target.forward(x))
    assert all(np.array_equal(p, q) for p, q in zip(agent.net.params, agent.target.params))


def test_target_syncs_every_C_updates():
    agent = DQNAgent(small_hp(target_sync_C=3), seed=0)
    rng = RNG(0)
    for _ in range(4):
        agent.remember(Transition(rng.random(10), 1, 1.0, rng.random(10), False))
    for k in range(1, 7):
        agent.learn()
        same = all(np.array_equal(p, q) for p, q in zip(agent.net.params, agent.target.params))
        assert same == (k % 3 == 0)


def test_targets_ignore_online_updates_between_syncs():
    agent = DQNAgent(small_hp(target_sync_C=1000), seed=0)
    b = batch(8, RNG(4))
    before = td_targets(b, agent.target, 0.95)
    sgd_step(agent.net, agent.adam, b, before, 0.05)
    assert np.array_equal(before, td_targets(b, agent.target, 0.95))


def test_schedule_points():
    assert schedule(0, 100, 0.01, 1e-4) == 0.01
    assert schedule(100, 100, 0.01, 1e-4) == 1e-4
    assert schedule(500, 100, 0.01, 1e-4) == 1e-4
    assert schedule(50, 100, 0.01, 1e-4) == pytest.approx((0.01 + 1e-4) / 2)
    with pytest.raises(ValueError):
        schedule(1, 0, 1.0, 0.0)


def test_agent_schedules_follow_episodes():
    agent = DQNAgent(small_hp(episodes=4), seed=0)
    assert agent.epsilon == 0.1 and agent.alpha == 0.01
    for _ in range(4):
        agent.end_episode()
    assert agent.epsilon == 0.001 and agent.alpha == 1e-4


def test_published_hyperparameters_are_the_defaults():
    hp = Hyperparams()
    assert (hp.gamma, hp.alpha_init, hp.alpha_final, hp.epsilon_init, hp.epsilon_final) == (0.95, 0.01, 1e-4, 0.1, 0.001)
    assert (hp.buffer_capacity, hp.batch_size, hp.target_sync_C, hp.episodes) == (100_000, 128, 1000, 1500)


# -- replay ------------------------------------------------------------------------------


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(10, obs_dim=1, rng=RNG(0))
    for i in range(10):
        buf.add(Transition(np.array([float(i)]), 0, 0.0, np.zeros(1), False))
    n = 100_000
    counts = np.bincount(buf.indices(n), minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n * 0.1) < 3 * sigma)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(0, 40))
def test_buffer_keeps_the_newest(capacity, extra):
    buf = ReplayBuffer(capacity, obs_dim=1)
    total = capacity + extra
    for i in range(total):
        buf.add(Transition(np.array([float(i)]), 0, float(i), np.zeros(1), False))
    assert len(buf) == capacity
    kept = sorted(buf.r.tolist())
    assert kept == [float(i) for i in range(extra, total)]
    for i in range(extra):
        assert buf.slot_of(i) is None
    assert buf.r[buf.slot_of(total - 1)] == total - 1


def test_transition_rejects_bad_actions():
    with pytest.raises(ValueError):
        Transition(np.zeros(10), 3, 0.0, np.zeros(10), False)


# -- checkpoints ---------------------------------------------------------------------------


def trained_agent():
    agent = DQNAgent(small_hp(), seed=2)
    rng = RNG(2)
    for k in range(12):
        agent.remember(Transition(rng.random(10), k % 3, float(k), rng.random(10), k % 5 == 0))
        agent.learn()
        agent.act(rng.random(10))
    agent.end_episode()
    return agent


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    agent = trained_agent()
    blob = checkpoint_bytes(agent)
    again = checkpoint_bytes(agent_from_bytes(blob))
    assert again == blob
    path = tmp_path / "a.ckpt"
    save_checkpoint(agent, str(path))
    assert checkpoint_bytes(load_checkpoint(str(path))) == blob


def test_restored_agent_behaves_identically():
    agent = trained_agent()
    twin = agent_from_bytes(checkpoint_bytes(agent))
    x = RNG(9).random(10)
    assert np.array_equal(agent.q_values(x), twin.q_values(x))
    assert [agent.act(x, epsilon=0.5) for _ in range(20)] == [twin.act(x, epsilon=0.5) for _ in range(20)]
    assert agent.alpha == twin.alpha and agent.epsilon == twin.epsilon


def test_checkpoint_layout():
    agent = trained_agent()
    blob = checkpoint_bytes(agent)
    assert blob[:8] == MAGIC
    version, hlen = struct.unpack("<II", blob[8:16])
    assert version == 1
    n_values = sum(a.size for _, a in agent.state_arrays())
    assert len(blob) == 16 + hlen + 8 * n_values
    # first payload value is the first online weight, little-endian float64
    (first,) = struct.unpack("<d", blob[16 + hlen : 24 + hlen])
    assert first == agent.net.params[0].ravel()[0]


def test_checkpoint_mismatches():
    blob = checkpoint_bytes(trained_agent())
    with pytest.raises(CheckpointMismatch):
        agent_from_bytes(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointMismatch):
        agent_from_bytes(blob[:-8])
    with pytest.raises(CheckpointMismatch):
        agent_from_bytes(blob + b"\0")
    with pytest.raises(CheckpointMismatch):
        agent_from_bytes(blob, expect_sizes=(10, 256, 256, 3))
