from dataclasses import replace

import numpy as np
import pytest

from afferent.env import (
    EPISODE_LEN,
    SCENARIOS,
    EnvState,
    damage_increment,
    gen_features,
    optimal_action,
    reset,
    scenario_config,
    step,
    task_reward,
)
from afferent.errors import ConfigError, ValidationError

QUIET = replace(SCENARIOS["normal"], noise_sd=0.0)


def state_at(t, age=20.0, seed=0):
    return EnvState(t=t, x=np.zeros(3), damage=0.0, age=age,
                    years_worked=age - 20.0, rng_seed=seed)


def test_scenario_lookup():
    assert scenario_config("normal").instability == 0.05
    assert scenario_config("acl_deficient").shear_mult == 1.5
    with pytest.raises(ConfigError):
        scenario_config("bionic")


def test_scenario_validation():
    with pytest.raises(ConfigError):
        replace(SCENARIOS["normal"], stress_mult=0.0)
    with pytest.raises(ConfigError):
        replace(SCENARIOS["normal"], instability=1.5)
    with pytest.raises(ConfigError):
        replace(SCENARIOS["normal"], noise_sd=-0.1)


def test_features_quarter_cycle_oracle():
    # t=20 of an 80-step cycle puts the gait phase at pi/2; with unit action,
    # age 20, and zero noise the normal-scenario features are exact.
    x = gen_features(state_at(20), 1.0, QUIET)
    assert x[0] == pytest.approx(0.70, abs=1e-12)
    assert x[1] == pytest.approx(0.50, abs=1e-12)
    assert x[2] == pytest.approx(0.515, abs=1e-12)


def test_features_scale_with_action_and_age():
    half = gen_features(state_at(20), 0.5, QUIET)
    assert half == pytest.approx([0.35, 0.25, 0.2575], abs=1e-12)
    old = gen_features(state_at(20, age=60.0), 1.0, QUIET)
    assert old == pytest.approx([0.7 * 1.4, 0.5 * 1.4, 0.515 * 1.4], abs=1e-12)


def test_features_clipped_to_unit_interval():
    cfg = replace(SCENARIOS["acl_deficient"], noise_sd=0.0)
    x = gen_features(state_at(20, age=90.0), 1.0, cfg)
    assert np.all(x <= 1.0) and np.all(x >= 0.0)
    assert x[2] == 1.0  # raw shear exceeds 1 here


def test_features_action_validated():
    with pytest.raises(ValidationError):
        gen_features(state_at(0), 1.5, QUIET)
    with pytest.raises(ValidationError):
        gen_features(state_at(0), -0.1, QUIET)


def test_noise_is_counter_deterministic():
    cfg = SCENARIOS["normal"]
    a = gen_features(state_at(7, seed=11), 0.6, cfg)
    b = gen_features(state_at(7, seed=11), 0.6, cfg)
    c = gen_features(state_at(8, seed=11), 0.6, cfg)
    d = gen_features(state_at(7, seed=12), 0.6, cfg)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_damage_increment_oracle():
    x = np.array([0.70, 0.50, 0.515])
    # load = 0.6045 against the age-20 safe threshold 0.6
    assert damage_increment(x, 1.0, 20.0) == pytest.approx(0.01 * 0.0045**2, abs=1e-15)
    assert damage_increment(np.array([0.1, 0.1, 0.1]), 1.0, 20.0) == 0.0
    # age-90 threshold shrinks to 0.32 and stays above the 0.2 floor
    assert damage_increment(x, 1.0, 90.0) == pytest.approx(0.01 * (0.6045 - 0.32) ** 2, abs=1e-15)


def test_task_reward_and_optimum():
    assert optimal_action(20.0) == pytest.approx(0.8)
    assert optimal_action(80.0) == pytest.approx(0.62)
    assert task_reward(0.5, 20.0) == 0.5
    assert task_reward(1.0, 20.0) == pytest.approx(0.98, abs=1e-12)
    # below the optimum the penalty is inactive
    assert task_reward(0.61, 80.0) == pytest.approx(0.61, abs=1e-12)


def test_reset_state_and_validation():
    s = reset(QUIET, 40.0, seed=3)
    assert s.t == 0 and s.damage == 0.0
    assert s.years_worked == pytest.approx(20.0)
    assert s.x.shape == (3,)
    with pytest.raises(ValidationError):
        reset(QUIET, 10.0, seed=3)
    with pytest.raises(ValidationError):
        reset(QUIET, 95.0, seed=3)


def test_step_advances_and_accumulates():
    s = reset(QUIET, 60.0, seed=0)
    total = 0.0
    for i in range(5):
        s, res = step(s, 0.9, QUIET)
        total += res.delta_d
        assert s.t == i + 1
        assert np.array_equal(s.x, res.x_next)
        assert res.task_reward == pytest.approx(task_reward(0.9, 60.0))
    assert s.damage == pytest.approx(total, abs=1e-15)


def test_step_done_at_episode_len():
    s = reset(QUIET, 30.0, seed=0)
    s = replace(s, t=EPISODE_LEN - 1)
    _, res = step(s, 0.5, QUIET)
    assert res.done
    _, res2 = step(reset(QUIET, 30.0, seed=0), 0.5, QUIET, episode_len=1)
    assert res2.done
