import numpy as np
import pytest
from scipy.stats import chisquare

from fairvolt import ddpg, nn_core
from fairvolt.ddpg import DdpgConfig, Experience, ReplayBuffer, actor_update, critic_update, make_agent, select_action
from fairvolt.env import FeederEnv
from fairvolt.errors import EmptyBatch, ShapeError
from fairvolt.grid_model import generate_default_feeder

SMALL = DdpgConfig(hidden=(32, 32), lr_actor=1e-3, lr_critic=1e-3, batch_size=16, capacity=5000)


@pytest.fixture(scope="module")
def small_env():
    spec, series, _ = generate_default_feeder(2, seed=5, n_days=3)
    return FeederEnv(spec, series)


def snapshot(net):
    return [p.copy() for p in net.params()]


def same(a, b):
    return all(x.tobytes() == y.tobytes() for x, y in zip(a, b))


def test_replay_ring_overwrites_oldest():
    buf = ReplayBuffer(3, 1, 1)
    for k in range(5):
        buf.push([k], [0.0], float(k), [k + 1])
    assert len(buf) == 3
    assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]
    s, a, r, s2 = buf.sample(50, np.random.default_rng(0))
    assert set(r.tolist()) <= {2.0, 3.0, 4.0}
    np.testing.assert_array_equal(s2[:, 0], s[:, 0] + 1)


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(10, 1, 1)
    for k in range(14):
        buf.push([k], [0.0], 0.0, [0])
    idx = buf.sample_indices(20_000, np.random.default_rng(1))
    counts = np.bincount(idx, minlength=10)
    assert chisquare(counts).pvalue > 1e-3


def test_replay_empty_sample():
    with pytest.raises(EmptyBatch):
        ReplayBuffer(4, 2, 1).sample(8, np.random.default_rng(0))
    with pytest.raises(EmptyBatch):
        critic_update(make_agent(2, 1, np.random.default_rng(0), SMALL), [])


def test_replay_shape_check():
    with pytest.raises(ShapeError):
        ReplayBuffer(4, 2, 1).push([0.0], [0.0], 0.0, [0.0, 0.0])


def test_initial_actions_are_near_zero(small_env):
    agent = make_agent(small_env.n_obs, small_env.n_act, np.random.default_rng(0))
    for t in range(0, small_env.n_steps, 7):
        a = select_action(agent, small_env.build_state(t).observation())
        assert np.max(np.abs(a)) < 0.01


def test_critic_update_leaves_actor_untouched():
    rng = np.random.default_rng(2)
    agent = make_agent(3, 2, rng, SMALL)
    batch = (rng.normal(size=(8, 3)), rng.uniform(-1, 1, (8, 2)), rng.normal(size=8), rng.normal(size=(8, 3)))
    actor, targets = snapshot(agent.actor), snapshot(agent.actor_target) + snapshot(agent.critic_target)
    critic = snapshot(agent.critic)
    critic_update(agent, batch)
    assert same(actor, snapshot(agent.actor))
    assert same(targets, snapshot(agent.actor_target) + snapshot(agent.critic_target))
    assert not same(critic, snapshot(agent.critic))


def test_actor_update_leaves_critic_untouched():
    rng = np.random.default_rng(3)
    agent = make_agent(3, 2, rng, SMALL)
    batch = (rng.normal(size=(8, 3)), rng.uniform(-1, 1, (8, 2)), rng.normal(size=8), rng.normal(size=(8, 3)))
    critic = snapshot(agent.critic)
    actor = snapshot(agent.actor)
    actor_update(agent, batch)
    assert same(critic, snapshot(agent.critic))
    assert not same(actor, snapshot(agent.actor))


def test_gamma_zero_loss_is_plain_regression():
    rng = np.random.default_rng(4)
    agent = make_agent(3, 1, rng, SMALL)
    agent.gamma = 0.0
    s, a, r = rng.normal(size=(6, 3)), rng.uniform(-1, 1, (6, 1)), rng.normal(size=6)
    q, _ = nn_core.forward(agent.critic, np.hstack([s, a]))
    loss = critic_update(agent, (s, a, r, rng.normal(size=(6, 3))))
    assert loss == pytest.approx(np.mean((q[:, 0] - r) ** 2), rel=1e-12)


def test_bellman_target_uses_target_networks():
    rng = np.random.default_rng(5)
    agent = make_agent(2, 1, rng, SMALL)
    s, a, r, s2 = rng.normal(size=(4, 2)), rng.uniform(-1, 1, (4, 1)), rng.normal(size=4), rng.normal(size=(4, 2))
    a2, _ = nn_core.forward(agent.actor_target, s2)
    q2, _ = nn_core.forward(agent.critic_target, np.hstack([s2, a2]))
    q, _ = nn_core.forward(agent.critic, np.hstack([s, a]))
    y = r + 0.99 * q2[:, 0]
    assert critic_update(agent, (s, a, r, s2)) == pytest.approx(np.mean((q[:, 0] - y) ** 2), rel=1e-12)


def test_critic_overfits_single_transition():
    agent = make_agent(2, 1, np.random.default_rng(6), SMALL)
    agent.gamma = 0.0
    exp = [Experience(np.array([0.5, -0.2]), np.array([0.1]), -3.0, np.array([0.0, 0.0]))]
    for _ in range(1500):
        loss = critic_update(agent, exp)
    assert loss < 1e-4


def test_actor_step_increases_q():
    rng = np.random.default_rng(7)
    agent = make_agent(3, 2, rng, DdpgConfig(hidden=(16, 16), lr_actor=1e-4))
    s = rng.normal(size=(32, 3))
    batch = (s, np.zeros((32, 2)), np.zeros(32), s)
    q0 = actor_update(agent, batch)
    a, _ = nn_core.forward(agent.actor, s)
    q1 = float(np.mean(nn_core.forward(agent.critic, np.hstack([s, a]))[0]))
    assert q1 > q0


def parabola_critic(peak=0.3, h=0.05):
    """Frozen ReLU critic interpolating -(a - peak)^2 on knots that include ``peak``."""
    knots = peak + h * np.arange(-int(round((1 + peak) / h)), int(round((1 - peak) / h)) + 1)
    f = -((knots - peak) ** 2)
    slopes = np.diff(f) / h
    # unit 0 carries the first slope from a = knots[0]; unit j adds the slope change at knots[j]
    w_in = np.zeros((len(slopes), 2))
    w_in[:, 1] = 1.0
    b_in = -knots[:-1]
    w_out = np.concatenate([[slopes[0]], np.diff(slopes)])[None, :]
    return nn_core.MlpNet((2, len(slopes), 1), [w_in, w_out], [b_in, np.array([f[0]])])


def test_parabola_critic_is_exact_on_knots():
    net = parabola_critic()
    a = np.array([-1.0, -0.2, 0.3, 0.35, 1.0])
    q, _ = nn_core.forward(net, np.column_stack([np.ones(5), a]))
    np.testing.assert_allclose(q[:, 0], -((a - 0.3) ** 2), atol=1e-12)


def test_toy_actor_reaches_frozen_critic_optimum():
    """One state, critic fixed at -(a - 0.3)^2: actor updates drive mu(s) to 0.3."""
    agent = make_agent(1, 1, np.random.default_rng(8), DdpgConfig(hidden=(32, 32), lr_actor=1e-3))
    agent.critic = parabola_critic()
    frozen = snapshot(agent.critic)
    s = np.ones((16, 1))
    batch = (s, np.zeros((16, 1)), np.zeros(16), s)
    for _ in range(2000):
        actor_update(agent, batch)
    assert same(frozen, snapshot(agent.critic))
    assert select_action(agent, np.ones(1))[0] == pytest.approx(0.3, abs=0.01)


def test_training_is_deterministic(small_env):
    def run():
        agent = make_agent(small_env.n_obs, small_env.n_act, np.random.default_rng(0), SMALL)
        log = ddpg.train(agent, small_env, 2, np.random.default_rng(1), (0, 60), cfg=SMALL, replay_rng=np.random.default_rng(2))
        return agent, log

    (a1, l1), (a2, l2) = run(), run()
    assert same(snapshot(a1.actor) + snapshot(a1.critic), snapshot(a2.actor) + snapshot(a2.critic))
    assert l1.to_csv() == l2.to_csv()


def test_training_log_rewards_are_consistent(small_env):
    agent = make_agent(small_env.n_obs, small_env.n_act, np.random.default_rng(0), SMALL)
    log = ddpg.train(agent, small_env, 2, np.random.default_rng(1), (10, 50), cfg=SMALL)
    w = small_env.weights
    for ep, rows in enumerate(log.step_rewards):
        assert rows.shape == (40, 4)
        np.testing.assert_array_equal(rows[:, 3], w.alpha * rows[:, 0] + w.beta * rows[:, 1] + w.omega * rows[:, 2])
        assert log.episode_return[ep] == pytest.approx(rows[:, 3].sum(), rel=1e-12)
    assert log.noise_sigma[-1] == pytest.approx(SMALL.noise_end, abs=1e-3)
    assert log.to_csv().count("\n") == 3


@pytest.mark.parametrize("seed", range(3))
def test_smoke_training_improves_return(seed):
    """Two customers, 200 training steps, 30 episodes: late returns beat the first episode."""
    spec, series, _ = generate_default_feeder(2, seed=10 + seed, n_days=4)
    env = FeederEnv(spec, series)
    start = 96 + 20  # 05:00 on day two through 07:00 on day three
    agent = make_agent(env.n_obs, env.n_act, np.random.default_rng(seed), SMALL)
    log = ddpg.train(agent, env, 30, np.random.default_rng(100 + seed), (start, start + 200), cfg=SMALL)
    assert np.mean(log.episode_return[-5:]) > log.episode_return[0]


def test_zero_actor_reproduces_baseline(small_env):
    agent = make_agent(small_env.n_obs, small_env.n_act, np.random.default_rng(0))
    agent.actor.weights[-1][:] = 0.0
    agent.actor.biases[-1][:] = 0.0
    a = ddpg.evaluate(agent, small_env, (0, 100))
    b = ddpg.evaluate(None, small_env, (0, 100))
    np.testing.assert_array_equal(a.v_mag, b.v_mag)
    np.testing.assert_array_equal(a.curtail, b.curtail)
    assert not np.any(b.curtail) and not np.any(b.actions)


def test_evaluate_range_checked(small_env):
    with pytest.raises(ValueError):
        ddpg.evaluate(None, small_env, (0, small_env.n_steps))


def test_checkpoint_round_trip(tmp_path, small_env):
    agent = make_agent(small_env.n_obs, small_env.n_act, np.random.default_rng(0), SMALL)
    ddpg.train(agent, small_env, 1, np.random.default_rng(1), (0, 40), cfg=SMALL)
    path = tmp_path / "agent.npz"
    ddpg.save_agent(agent, path)
    back = ddpg.load_agent(path)
    for name in ("actor", "critic", "actor_target", "critic_target"):
        assert same(snapshot(getattr(agent, name)), snapshot(getattr(back, name)))
    assert back.actor_opt.step_count == agent.actor_opt.step_count
    assert (back.gamma, back.tau, back.noise_sigma) == (agent.gamma, agent.tau, agent.noise_sigma)
    obs = small_env.build_state(30).observation()
    assert select_action(agent, obs).tobytes() == select_action(back, obs).tobytes()


def test_exploration_needs_rng_and_clips():
    agent = make_agent(2, 3, np.random.default_rng(0), SMALL)
    with pytest.raises(ValueError):
        select_action(agent, np.zeros(2), explore=True)
    agent.noise_sigma = 10.0
    a = select_action(agent, np.zeros(2), explore=True, rng=np.random.default_rng(1))
    assert np.all(np.abs(a) <= 1.0)
