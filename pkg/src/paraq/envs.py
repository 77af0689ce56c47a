"""Deterministic, seedable environments behind one small interface.

Contract for every environment:

* ``reset(rng) -> state`` starts a fresh episode.
* ``step(action, rng) -> (next_state, reward, terminal)``; stepping after a
  terminal transition without reset is an error.
* ``action_count`` and ``state_dim`` describe the spaces.
* The same rng stream and action sequence always reproduce the same
  (state, reward, terminal) stream. Wall-clock cost never feeds back into
  trajectory content.

Each instance is exclusively owned by one worker; instances share nothing.
"""

from __future__ import annotations

import time

import numpy as np

from .backend import kernels as K
from .nn import Parameters, forward

GRID_SIZE = 5
GRID_STEP_CAP = 50
_GOAL = (GRID_SIZE - 1, GRID_SIZE - 1)

# up, down, left, right
_MOVES = ((0, 1), (0, -1), (-1, 0), (1, 0))


def encode_state(position: tuple[int, int]) -> np.ndarray:
    """One-hot length-25 encoding of a grid position, index = y*5 + x."""
    x, y = position
    if not (0 <= x < GRID_SIZE and 0 <= y < GRID_SIZE):
        raise ValueError(f"position {position} is off the grid")
    vec = np.zeros(GRID_SIZE * GRID_SIZE, dtype=np.float64)
    vec[y * GRID_SIZE + x] = 1.0
    return vec


def gridworld_step(
    position: tuple[int, int], action: int
) -> tuple[tuple[int, int], float, bool]:
    """Single deterministic move with wall clamping.

    Reward is 1.0 exactly on the transition entering the goal corner.
    """
    if not 0 <= action < len(_MOVES):
        raise ValueError(f"invalid action {action}")
    if position == _GOAL:
        raise RuntimeError("step() after terminal state; reset the episode")
    dx, dy = _MOVES[action]
    nx = min(max(position[0] + dx, 0), GRID_SIZE - 1)
    ny = min(max(position[1] + dy, 0), GRID_SIZE - 1)
    moved = (nx, ny)
    if moved == _GOAL:
        return moved, 1.0, True
    return moved, 0.0, False


class GridWorld:
    """5x5 gridworld: start (0,0), goal (4,4), 50-step episode cap.

    Hitting the step cap ends the episode but sets ``truncated``: the cap is
    a time limit, not part of the environment, so learners should bootstrap
    through it rather than treat the state as terminal.
    """

    action_count = 4
    state_dim = GRID_SIZE * GRID_SIZE

    def __init__(self):
        self.position = (0, 0)
        self.truncated = False
        self._steps = 0
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.position = (0, 0)
        self.truncated = False
        self._steps = 0
        self._done = False
        return encode_state(self.position)

    def step(self, action: int, rng: np.random.Generator):
        if self._done:
            raise RuntimeError("step() after episode end; call reset()")
        self.position, reward, terminal = gridworld_step(self.position, action)
        self._steps += 1
        self.truncated = not terminal and self._steps >= GRID_STEP_CAP
        terminal = terminal or self.truncated
        self._done = terminal
        return encode_state(self.position), reward, terminal


_spin_rate_cache: dict[str, float] = {}


def _spin_units_per_second() -> float:
    """Calibrate the busy-wait kernel once per process (per backend).

    Uses the fastest of a few trials so a configured latency is a lower
    bound on the CPU time actually burned.
    """
    key = K.BACKEND_NAME
    if key not in _spin_rate_cache:
        K.spin(1)  # warm up (jit compile / first-touch)
        probe = 20_000 if key == "numba" else 50
        best = 0.0
        for _ in range(5):
            t0 = time.perf_counter()
            K.spin(probe)
            dt = time.perf_counter() - t0
            if dt > 0:
                best = max(best, probe / dt)
        _spin_rate_cache[key] = best
    return _spin_rate_cache[key]


class SyntheticLatencyEnv:
    """Environment whose step burns a configured amount of CPU time.

    The cost is a fixed quantum of busy work (not a sleep), so oversubscribed
    worker threads genuinely contend for cores. Rewards are pseudo-random in
    [0, 1); states are pseudo-random vectors. Both come from the rng the
    caller passes in, so trajectory content is seed-deterministic while
    latency only shows up in the clock.
    """

    def __init__(
        self,
        latency_s: float = 250e-6,
        episode_length: int = 200,
        state_dim: int = 32,
        action_count: int = 4,
    ):
        if latency_s < 0:
            raise ValueError("latency must be non-negative")
        if episode_length < 1:
            raise ValueError("episode_length must be at least 1")
        self.latency_s = latency_s
        self.episode_length = episode_length
        self.state_dim = state_dim
        self.action_count = action_count
        self.truncated = False
        self._units = (
            max(1, int(latency_s * _spin_units_per_second())) if latency_s > 0 else 0
        )
        self._steps = 0
        self._done = True

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self._steps = 0
        self._done = False
        self.truncated = False
        return rng.random(self.state_dim)

    def step(self, action: int, rng: np.random.Generator):
        if self._done:
            raise RuntimeError("step() after episode end; call reset()")
        if not 0 <= action < self.action_count:
            raise ValueError(f"invalid action {action}")
        if self._units:
            K.spin(self._units)
        reward = float(rng.random())
        next_state = rng.random(self.state_dim)
        self._steps += 1
        # a fixed horizon is a time limit, not an environment terminal
        terminal = self._steps >= self.episode_length
        self.truncated = terminal
        self._done = terminal
        return next_state, reward, terminal


def evaluate_policy(
    env,
    params: Parameters,
    epsilon: float,
    episodes: int,
    seed: int,
) -> tuple[float, float]:
    """Mean and population std of undiscounted returns over exactly
    ``episodes`` epsilon-greedy episodes, deterministic given seed."""
    from .agent import select_action

    if episodes < 1:
        raise ValueError("episodes must be at least 1")
    rng = np.random.default_rng(seed)
    returns = np.empty(episodes, dtype=np.float64)
    for e in range(episodes):
        state = env.reset(rng)
        total = 0.0
        terminal = False
        while not terminal:
            q = forward(params, state[np.newaxis, :])[0]
            action = select_action(q, epsilon, rng)
            state, reward, terminal = env.step(action, rng)
            total += reward
        returns[e] = total
    return float(returns.mean()), float(returns.std())


def make_env(name: str, options: dict | None = None):
    """Environment selection by name string ('gridworld' or 'synthetic')."""
    options = options or {}
    if name == "gridworld":
        return GridWorld()
    if name == "synthetic":
        return SyntheticLatencyEnv(
            latency_s=options.get("latency_s", 250e-6),
            episode_length=options.get("episode_length", 200),
            state_dim=options.get("state_dim", 32),
            action_count=options.get("action_count", 4),
        )
    raise ValueError(f"unknown environment {name!r}")
