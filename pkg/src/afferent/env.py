"""Synthetic digital knee twin.

Scenario- and age-parameterized generation of [stress, strain, shear]
features over a gait cycle, cumulative damage accumulation with an
age-shrinking safe-load threshold, and a step interface for policy learning.
Noise is counter-based (Philox keyed by seed with the step index as counter)
so trajectories are bit-for-bit reproducible and trivially parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ValidationError

__all__ = [
    "ScenarioConfig",
    "EnvState",
    "StepResult",
    "SCENARIOS",
    "scenario_config",
    "reset",
    "gen_features",
    "damage_increment",
    "task_reward",
    "optimal_action",
    "step",
    "GAIT_PERIOD",
    "EPISODE_LEN",
    "AGE_MIN",
    "AGE_MAX",
]

GAIT_PERIOD = 80  # steps per simulated gait cycle
EPISODE_LEN = 200
AGE_MIN = 20.0
AGE_MAX = 90.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Pathology preset: feature multipliers plus instability and noise level."""

    name: str
    stress_mult: float
    strain_mult: float
    shear_mult: float
    instability: float
    noise_sd: float = 0.02

    def __post_init__(self):
        if not (self.stress_mult > 0 and self.strain_mult > 0 and self.shear_mult > 0):
            raise ConfigError("scenario multipliers must be positive")
        if not 0.0 <= self.instability <= 1.0:
            raise ConfigError("instability must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be nonnegative")


SCENARIOS = {
    "normal": ScenarioConfig("normal", 1.0, 1.0, 1.0, 0.05),
    "acl_deficient": ScenarioConfig("acl_deficient", 1.15, 1.05, 1.5, 0.4),
    "meniscus_overload": ScenarioConfig("meniscus_overload", 1.4, 1.2, 1.1, 0.15),
}


def scenario_config(name: str) -> ScenarioConfig:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ConfigError("unknown scenario %r" % (name,)) from None


@dataclass(frozen=True)
class EnvState:
    """Value-like environment state; step returns a new instance."""

    t: int
    x: np.ndarray
    damage: float
    age: float
    years_worked: float
    rng_seed: int


@dataclass(frozen=True)
class StepResult:
    x_next: np.ndarray
    delta_d: float
    task_reward: float
    done: bool


def _noise(seed: int, t: int, sd: float) -> np.ndarray:
    if sd == 0.0:
        return np.zeros(3)
    bits = np.random.Generator(np.random.Philox(key=seed, counter=[t, 0, 0, 0]))
    return bits.normal(0.0, sd, size=3)


def gen_features(state: EnvState, action: float, cfg: ScenarioConfig) -> np.ndarray:
    """Generate [stress, strain, shear] at the state's current step index."""
    if not 0.0 <= action <= 1.0:
        raise ValidationError("action must lie in [0, 1]")
    phi = 2.0 * np.pi * (state.t % GAIT_PERIOD) / GAIT_PERIOD
    age_mult = 1.0 + 0.01 * (state.age - 20.0)
    eta = _noise(state.rng_seed, state.t, cfg.noise_sd)
    stress = cfg.stress_mult * age_mult * action * (0.45 + 0.25 * np.sin(phi)) + eta[0]
    strain = cfg.strain_mult * age_mult * action * (0.40 + 0.20 * np.sin(phi + np.pi / 3.0)) + eta[1]
    shear = (
        cfg.shear_mult * age_mult * action * (0.30 + 0.20 * abs(np.sin(phi)) + 0.3 * cfg.instability)
        + eta[2]
    )
    return np.clip(np.array([stress, strain, shear]), 0.0, 1.0)


def damage_increment(x: np.ndarray, action: float, age: float) -> float:
    """Quadratic excess-load damage with an age-shrinking safe threshold."""
    stress, strain, shear = float(x[0]), float(x[1]), float(x[2])
    load = 0.5 * stress + 0.3 * shear + 0.2 * strain
    safe = max(0.2, 0.6 - 0.004 * (age - 20.0))
    return 0.01 * max(0.0, load - safe) ** 2


def optimal_action(age: float) -> float:
    return 0.8 - 0.003 * (age - 20.0)


def task_reward(action: float, age: float) -> float:
    """Reward intensity, softly penalized above the age-dependent optimum."""
    return action - 0.5 * max(0.0, action - optimal_action(age)) ** 2


def reset(cfg: ScenarioConfig, age: float, seed: int) -> EnvState:
    """Fresh state at t=0 with zero damage and features generated at action 0."""
    if not AGE_MIN <= age <= AGE_MAX:
        raise ValidationError("age must lie in [%g, %g]" % (AGE_MIN, AGE_MAX))
    state = EnvState(
        t=0, x=np.zeros(3), damage=0.0, age=float(age),
        years_worked=float(age) - AGE_MIN, rng_seed=int(seed),
    )
    return replace(state, x=gen_features(state, 0.0, cfg))


def step(state: EnvState, action: float, cfg: ScenarioConfig, episode_len: int = EPISODE_LEN):
    """Advance one step: generate features, accumulate damage, increment t."""
    x_next = gen_features(state, action, cfg)
    dd = damage_increment(x_next, action, state.age)
    reward = task_reward(action, state.age)
    new_state = replace(state, t=state.t + 1, x=x_next, damage=state.damage + dd)
    done = new_state.t >= episode_len
    return new_state, StepResult(x_next=x_next, delta_d=dd, task_reward=reward, done=done)
