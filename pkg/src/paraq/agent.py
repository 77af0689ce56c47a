"""Decision and learning rules: epsilon schedule, epsilon-greedy selection,
bootstrap targets, the minibatch training step, and the target-network sync.

All functions are pure over caller-owned state. The rng discipline is fixed:
select_action always consumes one explore/exploit draw, and consumes a second
uniform-action draw only when exploring. Schedules and the single-lane
reference depend on that discipline to consume streams identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import (
    Gradients,
    OptConfig,
    OptState,
    Parameters,
    copy_parameters,
    forward,
    gradient,
    rmsprop_step,
)
from .replay import Transition


@dataclass
class EpsilonSchedule:
    """Linear ramp from start (at t=1) to end (at t=anneal_steps), constant after."""

    start: float = 1.0
    end: float = 0.1
    anneal_steps: int = 1

    def validate(self) -> None:
        if not (0.0 <= self.end <= self.start <= 1.0):
            raise ValueError("epsilon schedule must satisfy 0 <= end <= start <= 1")
        if self.anneal_steps < 1:
            raise ValueError("anneal_steps must be at least 1")


def epsilon_at(t: int, sched: EpsilonSchedule) -> float:
    if t < 1:
        raise ValueError("t starts at 1")
    if t >= sched.anneal_steps or sched.anneal_steps == 1:
        return sched.end
    frac = (t - 1) / (sched.anneal_steps - 1)
    return sched.start + (sched.end - sched.start) * frac


def select_action(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy with probability 1-epsilon, uniform otherwise.

    Argmax ties break toward the lowest index.
    """
    q_row = np.asarray(q_row)
    if q_row.size == 0:
        raise ValueError("empty Q-value row")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(q_row.size))
    return int(np.argmax(q_row))


def td_targets(
    batch: list[Transition], target_params: Parameters, gamma: float
) -> np.ndarray:
    """Per sample: r if terminal, else r + gamma * max_a Q(next_state, a)
    under the target network (batched forward)."""
    if not batch:
        raise ValueError("empty batch")
    next_states = np.stack([t.next_state for t in batch])
    q_next = forward(target_params, next_states)
    targets = np.empty(len(batch), dtype=np.float64)
    for i, t in enumerate(batch):
        targets[i] = t.reward if t.terminal else t.reward + gamma * q_next[i].max()
    return targets


def train_minibatch(
    theta: Parameters,
    opt: OptState,
    batch: list[Transition],
    target_params: Parameters,
    gamma: float,
    cfg: OptConfig,
) -> tuple[Parameters, OptState]:
    """Target computation, backprop and one optimizer step; leaves the target
    network untouched.

    The optimizer consumes the batch-summed loss gradient (the scale its
    constants were tuned for); gradient() itself reports the mean-loss
    gradient, so rescale here rather than there.
    """
    targets = td_targets(batch, target_params, gamma)
    states = np.stack([t.state for t in batch])
    actions = np.asarray([t.action for t in batch], dtype=np.int64)
    grad = gradient(theta, states, actions, targets)
    n = float(len(batch))
    summed = Gradients([w * n for w in grad.weights], [b * n for b in grad.biases])
    return rmsprop_step(opt, cfg, theta, summed)


def target_update(theta: Parameters) -> Parameters:
    return copy_parameters(theta)


MODES = ("standard", "concurrent", "synchronized", "both")


@dataclass
class HyperParams:
    """Full run configuration.

    C is the target-update period, F the training period, N the prepopulation
    count and W the sampler worker count; concurrent/synchronized are the two
    execution-mode flags.
    """

    C: int = 500
    F: int = 4
    gamma: float = 0.99
    N: int = 500
    W: int = 4
    batch_size: int = 32
    concurrent: bool = True
    synchronized: bool = True
    total_steps: int = 200_000
    eval_period: int = 10_000  # 0 disables periodic evaluation
    eval_episodes: int = 30
    eval_epsilon: float = 0.05
    schedule: EpsilonSchedule = field(default_factory=lambda: EpsilonSchedule(1.0, 0.1, 4000))
    opt: OptConfig = field(default_factory=OptConfig)
    capacity: int = 10_000
    seed: int = 0
    env: str = "gridworld"
    hidden: int = 32
    # synthetic-env knobs, ignored by gridworld
    latency_s: float = 250e-6
    episode_length: int = 200
    state_dim: int = 32
    action_count: int = 4

    @property
    def mode(self) -> str:
        if self.concurrent and self.synchronized:
            return "both"
        if self.concurrent:
            return "concurrent"
        if self.synchronized:
            return "synchronized"
        return "standard"

    def with_mode(self, mode: str, W: int | None = None) -> "HyperParams":
        from dataclasses import replace

        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        hp = replace(
            self,
            concurrent=mode in ("concurrent", "both"),
            synchronized=mode in ("synchronized", "both"),
        )
        if W is not None:
            hp = replace(hp, W=W)
        return hp

    def validate(self) -> None:
        if self.C < 1:
            raise ValueError("C must be positive")
        if self.F < 1:
            raise ValueError("F must be positive")
        if self.C % self.F != 0:
            raise ValueError("F must divide C")
        if self.W < 1:
            raise ValueError("W must be at least 1")
        if self.C % self.W != 0:
            raise ValueError("W must divide C")
        if self.synchronized and self.W < 2:
            raise ValueError("synchronized execution requires W >= 2")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.N > self.capacity:
            raise ValueError("N must not exceed replay capacity")
        if self.total_steps < 1 or self.total_steps % self.C != 0:
            raise ValueError("total steps must be a positive multiple of C")
        if self.eval_period < 0 or (self.eval_period and self.eval_period % self.C != 0):
            raise ValueError("eval period must be 0 or a multiple of C")
        if self.eval_episodes < 1:
            raise ValueError("eval episodes must be at least 1")
        if not 0.0 <= self.eval_epsilon <= 1.0:
            raise ValueError("eval epsilon must lie in [0, 1]")
        self.schedule.validate()
        self.opt.validate()
