import numpy as np
import pytest

from swarm_forecast.model import AgentState, Config, Goal, validate_config


@pytest.fixture
def cfg() -> Config:
    return validate_config(Config())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def random_state(rng, pos_scale=5.0, vel_scale=2.0) -> AgentState:
    p = rng.uniform(-pos_scale, pos_scale, 2)
    v = rng.uniform(-vel_scale, vel_scale, 2)
    return AgentState(tuple(p), tuple(v))


def random_goal(rng, scale=6.0) -> Goal:
    return Goal(tuple(rng.uniform(-scale, scale, 2)))
