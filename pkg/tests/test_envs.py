import time

import numpy as np
import pytest

from paraq.envs import (
    GRID_SIZE,
    GridWorld,
    SyntheticLatencyEnv,
    encode_state,
    evaluate_policy,
    gridworld_step,
    make_env,
)
from paraq.nn import Parameters

GAMMA = 0.99


def value_iteration(gamma=GAMMA, tol=1e-14):
    """Independent oracle: exact optimal values of the 25-state gridworld."""
    v = np.zeros((GRID_SIZE, GRID_SIZE))
    while True:
        delta = 0.0
        for x in range(GRID_SIZE):
            for y in range(GRID_SIZE):
                if (x, y) == (GRID_SIZE - 1, GRID_SIZE - 1):
                    continue
                best = -np.inf
                for a in range(4):
                    nxt, r, term = gridworld_step((x, y), a)
                    best = max(best, r + (0.0 if term else gamma * v[nxt]))
                delta = max(delta, abs(best - v[x, y]))
                v[x, y] = best
        if delta < tol:
            return v


def optimal_q_table(gamma=GAMMA):
    v = value_iteration(gamma)
    q = np.zeros((GRID_SIZE * GRID_SIZE, 4))
    for x in range(GRID_SIZE):
        for y in range(GRID_SIZE):
            idx = y * GRID_SIZE + x
            if (x, y) == (GRID_SIZE - 1, GRID_SIZE - 1):
                continue
            for a in range(4):
                nxt, r, term = gridworld_step((x, y), a)
                q[idx, a] = r + (0.0 if term else gamma * v[nxt])
    return q


def table_network(q_table: np.ndarray) -> Parameters:
    """Linear one-hot lookup network reproducing a tabular Q exactly."""
    return Parameters([q_table.T.copy()], [np.zeros(q_table.shape[1])])


# ---------------------------------------------------------------------------
# encoding


def test_encode_corners():
    assert encode_state((0, 0))[0] == 1.0
    assert encode_state((4, 4))[24] == 1.0


def test_encode_is_one_hot_everywhere():
    for x in range(GRID_SIZE):
        for y in range(GRID_SIZE):
            vec = encode_state((x, y))
            assert vec.sum() == 1.0 and vec.max() == 1.0


def test_encode_rejects_off_grid():
    with pytest.raises(ValueError):
        encode_state((5, 0))


# ---------------------------------------------------------------------------
# gridworld dynamics


def test_wall_clamp_keeps_position():
    nxt, reward, terminal = gridworld_step((0, 0), 2)  # left
    assert nxt == (0, 0) and reward == 0.0 and not terminal


def test_goal_entry_pays_one_and_terminates():
    nxt, reward, terminal = gridworld_step((4, 3), 0)  # up
    assert nxt == (4, 4) and reward == 1.0 and terminal


def test_step_from_goal_is_an_error():
    with pytest.raises(RuntimeError):
        gridworld_step((4, 4), 0)


def test_invalid_action_is_an_error():
    with pytest.raises(ValueError):
        gridworld_step((1, 1), 4)


def test_episode_cap_at_fifty_steps():
    env = GridWorld()
    rng = np.random.default_rng(0)
    env.reset(rng)
    for k in range(50):  # bounce off the left wall forever
        _, _, terminal = env.step(2, rng)
    assert terminal
    with pytest.raises(RuntimeError):
        env.step(2, rng)


def test_cap_is_flagged_as_truncation_goal_is_not():
    env = GridWorld()
    rng = np.random.default_rng(0)
    env.reset(rng)
    for _ in range(50):
        env.step(2, rng)
    assert env.truncated
    env.reset(rng)
    for action in [3, 3, 3, 3, 0, 0, 0, 0]:  # right x4, up x4
        _, reward, terminal = env.step(action, rng)
    assert terminal and reward == 1.0 and not env.truncated


def test_gridworld_trajectories_are_seed_deterministic():
    def roll(seed):
        env = GridWorld()
        rng = np.random.default_rng(seed)
        s = env.reset(rng)
        out = [s.tobytes()]
        for a in (3, 3, 0, 0, 1, 2):
            s, r, term = env.step(a, rng)
            out.append((s.tobytes(), r, term))
        return out

    assert roll(9) == roll(9)


def test_value_iteration_start_state_matches_shortest_path():
    v = value_iteration()
    # eight moves to the corner; reward discounted seven steps
    assert abs(v[0, 0] - GAMMA**7) < 1e-12
    assert abs(v[0, 0] - 0.9320653479069899) < 1e-12


def test_greedy_policy_from_optimal_table_earns_discounted_gamma7():
    q = optimal_q_table()
    env = GridWorld()
    rng = np.random.default_rng(0)
    state = env.reset(rng)
    discounted = 0.0
    for k in range(50):
        idx = int(np.argmax(state))
        action = int(np.argmax(q[idx]))
        state, reward, terminal = env.step(action, rng)
        discounted += GAMMA**k * reward
        if terminal:
            break
    assert terminal and k == 7
    assert abs(discounted - GAMMA**7) < 1e-12


# ---------------------------------------------------------------------------
# evaluate_policy


def test_evaluate_optimal_policy_mean_one_std_zero():
    net = table_network(optimal_q_table())
    mean, std = evaluate_policy(GridWorld(), net, epsilon=0.0, episodes=30, seed=5)
    assert mean == 1.0 and std == 0.0


def test_evaluate_single_episode_has_zero_std():
    net = table_network(optimal_q_table())
    _, std = evaluate_policy(GridWorld(), net, epsilon=0.05, episodes=1, seed=1)
    assert std == 0.0


def test_evaluate_is_deterministic_given_seed():
    net = table_network(optimal_q_table())
    a = evaluate_policy(GridWorld(), net, epsilon=0.3, episodes=10, seed=11)
    b = evaluate_policy(GridWorld(), net, epsilon=0.3, episodes=10, seed=11)
    assert a == b


def test_evaluate_uses_population_std():
    # two episodes with returns {1, 0} -> mean 0.5, population std 0.5
    class FlipEnv:
        action_count = 2
        state_dim = 2

        def __init__(self):
            self._episode = -1
            self._done = True

        def reset(self, rng):
            self._episode += 1
            self._done = False
            return np.zeros(2)

        def step(self, action, rng):
            self._done = True
            return np.zeros(2), float(self._episode % 2 == 0), True

    net = Parameters([np.zeros((2, 2))], [np.zeros(2)])
    mean, std = evaluate_policy(FlipEnv(), net, epsilon=0.0, episodes=2, seed=0)
    assert mean == 0.5 and std == 0.5


def test_evaluate_rejects_zero_episodes():
    net = table_network(optimal_q_table())
    with pytest.raises(ValueError):
        evaluate_policy(GridWorld(), net, 0.0, 0, 0)


# ---------------------------------------------------------------------------
# synthetic latency env


def test_synthetic_trajectory_content_is_seed_deterministic():
    def roll(seed):
        env = SyntheticLatencyEnv(latency_s=0.0, episode_length=5, state_dim=3)
        rng = np.random.default_rng(seed)
        out = [env.reset(rng).tobytes()]
        for _ in range(5):
            s, r, term = env.step(0, rng)
            out.append((s.tobytes(), r, term))
        return out

    assert roll(3) == roll(3)
    assert roll(3) != roll(4)


def test_synthetic_episode_length_and_terminal_protocol():
    env = SyntheticLatencyEnv(latency_s=0.0, episode_length=3)
    rng = np.random.default_rng(0)
    env.reset(rng)
    flags = [env.step(0, rng)[2] for _ in range(3)]
    assert flags == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(0, rng)


def test_synthetic_rewards_in_unit_interval():
    env = SyntheticLatencyEnv(latency_s=0.0, episode_length=100)
    rng = np.random.default_rng(1)
    env.reset(rng)
    rewards = [env.step(0, rng)[1] for _ in range(100)]
    assert all(0.0 <= r < 1.0 for r in rewards)


def test_synthetic_step_burns_at_least_configured_latency():
    latency = 100e-6
    env = SyntheticLatencyEnv(latency_s=latency, episode_length=10_000)
    rng = np.random.default_rng(2)
    env.reset(rng)
    times = np.empty(1000)
    for i in range(1000):
        t0 = time.perf_counter()
        _, _, term = env.step(0, rng)
        times[i] = time.perf_counter() - t0
        if term:
            env.reset(rng)
    assert float(np.median(times)) >= latency


def test_make_env_selects_by_name():
    assert isinstance(make_env("gridworld"), GridWorld)
    env = make_env("synthetic", {"latency_s": 0.0, "state_dim": 7})
    assert isinstance(env, SyntheticLatencyEnv) and env.state_dim == 7
    with pytest.raises(ValueError):
        make_env("atari")
