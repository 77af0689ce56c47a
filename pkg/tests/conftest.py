from dataclasses import replace

import pytest

from paraq.agent import EpsilonSchedule, HyperParams


def tiny_hp(mode: str = "both", W: int = 4, **overrides) -> HyperParams:
    """Small, fast configuration used across executor tests."""
    hp = HyperParams(
        C=40,
        F=4,
        gamma=0.99,
        N=40,
        W=W,
        batch_size=8,
        total_steps=200,
        eval_period=40,
        eval_episodes=3,
        eval_epsilon=0.05,
        schedule=EpsilonSchedule(1.0, 0.1, 100),
        capacity=500,
        seed=3,
        env="gridworld",
        hidden=8,
    ).with_mode(mode)
    if overrides:
        hp = replace(hp, **overrides)
    return hp


@pytest.fixture
def hp_factory():
    return tiny_hp
