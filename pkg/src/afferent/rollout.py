"""Agent loop: PPO training and frozen-memory evaluation on the knee twin.

A Runner owns one environment stream plus the afferent array, optional
episodic memory, and optional predictive discrepancy, and advances them one
action at a time.  rl_train drives a Runner through PPO rollouts; evaluation
reuses the same step logic with memory captures frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import env as twin
from .afferents import AfferentArray, compute_cat, reset_state
from .memory import (
    EPS_D,
    K_RET,
    KAPPA_CAT,
    MemoryStore,
    StepRecord,
    apply_memory_bias,
    maybe_capture,
)
from .nets import Adam
from .policy import (
    PolicyParams,
    PPOConfig,
    RewardParams,
    build_observation,
    gae,
    init_policy,
    obs_dim,
    ppo_update,
    sample_action_z,
    shaped_reward,
)
from .predictive import (
    DiscrepancyParams,
    SafeStateModel,
    combine_cat,
    discrepancy,
    fit_safe_model,
    pred_signal,
)
from .util import percentile_95, rng_for

__all__ = [
    "AgentSetup",
    "StepOutput",
    "EpisodeStats",
    "Runner",
    "TrainResult",
    "rl_train",
    "evaluate_policy",
    "calibrate_predictive",
    "gait_context",
]


def gait_context(t: int, age: float) -> np.ndarray:
    """Context vector s_t = [sin phase, cos phase, age_norm] for the safe model."""
    phi = 2.0 * np.pi * (t % twin.GAIT_PERIOD) / twin.GAIT_PERIOD
    return np.array([np.sin(phi), np.cos(phi), (age - 20.0) / 70.0])


@dataclass
class AgentSetup:
    """Everything the agent loop needs besides the policy itself."""

    scenario: twin.ScenarioConfig
    age: float
    array: AfferentArray
    reward: RewardParams = field(default_factory=RewardParams)
    mode: str = "base"
    memory: MemoryStore | None = None
    safe_model: SafeStateModel | None = None
    disc: DiscrepancyParams | None = None
    memory_bias: bool = False
    episode_len: int = twin.EPISODE_LEN
    eps_d: float = EPS_D
    kappa_cat: float = KAPPA_CAT
    k_ret: int = K_RET


@dataclass
class StepOutput:
    obs: np.ndarray
    z: float
    logp: float
    reward: float
    done: bool
    cat: float
    delta_d: float
    action: float
    task: float
    damage: float
    y_hat: float


@dataclass
class EpisodeStats:
    task_mean: float
    d_total: float
    cat_mean: float | None
    action_mean: float
    actions: np.ndarray
    cats: np.ndarray | None
    recalls: np.ndarray | None


class Runner:
    """One agent stream; step_once advances environment, sensors, and memory."""

    def __init__(self, setup: AgentSetup, policy: PolicyParams, seed: int,
                 env_seed_fn=None, capture: bool = True):
        self.setup = setup
        self.policy = policy
        self.capture = capture
        self.action_rng = rng_for(seed, 1)
        if env_seed_fn is None:
            env_seed_fn = lambda i: int(rng_for(seed, 3, i).integers(0, 2**62))
        self.env_seed_fn = env_seed_fn
        self.episode_idx = 0
        self._begin_episode()

    def _begin_episode(self) -> None:
        self.state = twin.reset(self.setup.scenario, self.setup.age,
                                self.env_seed_fn(self.episode_idx))
        reset_state(self.setup.array)
        self.prev = None  # (x, action, context) for the predictive model
        self._compute_current()

    def _compute_current(self) -> None:
        """Sense the current features into the observation bundle."""
        s = self.setup
        x = self.state.x
        if s.mode == "plain":
            cat = 0.0
            acts = np.zeros(s.array.m)
        else:
            cat, acts = compute_cat(s.array, x)
            if s.safe_model is not None and s.disc is not None:
                if self.prev is None:
                    delta = 0.0
                else:
                    px, pa, pc = self.prev
                    delta = discrepancy(x, s.safe_model.predict(px, pa, pc), s.disc)
                cat = combine_cat(cat, pred_signal(delta, s.disc), s.disc)
            if s.memory_bias and s.memory is not None:
                cat = apply_memory_bias(cat, s.memory, s.scenario.name)
        y_hat = d_mean = 0.0
        if s.mode == "epi" and s.memory is not None:
            rr = s.memory.query(x, acts, cat, s.k_ret)
            y_hat, d_mean = rr.y_hat, rr.d_mean
        obs = build_observation(x, acts, cat, y_hat, d_mean, s.mode, age=s.age)
        self.cur = (x, acts, cat, y_hat, obs)

    def step_once(self) -> StepOutput:
        s = self.setup
        x, acts, cat, y_hat, obs = self.cur
        action, logp, z = sample_action_z(self.policy, obs, self.action_rng)
        t_act = self.state.t
        new_state, res = twin.step(self.state, action, s.scenario, s.episode_len)
        reward = shaped_reward(res.task_reward, cat, res.delta_d, y_hat, s.reward)
        if s.memory is not None:
            if self.capture:
                maybe_capture(s.memory, StepRecord(
                    x=x, activations=acts, cat=cat, action=action,
                    delta_d=res.delta_d, t=t_act,
                ), s.eps_d, s.kappa_cat)
            else:
                s.memory.observe(x, acts, cat)
        self.prev = (x, action, gait_context(t_act, s.age))
        out = StepOutput(
            obs=obs, z=z, logp=logp, reward=reward, done=res.done, cat=cat,
            delta_d=res.delta_d, action=action, task=res.task_reward,
            damage=new_state.damage, y_hat=y_hat,
        )
        self.state = new_state
        if res.done:
            if s.memory is not None:
                if self.capture:
                    s.memory.end_episode()
                else:
                    s.memory.window.clear()
            self.episode_idx += 1
            self._begin_episode()
        else:
            self._compute_current()
        return out

    @property
    def bootstrap_obs(self) -> np.ndarray:
        return self.cur[4]

    def collect(self, n: int) -> dict:
        outs = [self.step_once() for _ in range(n)]
        return {
            "obs": np.stack([o.obs for o in outs]),
            "z": np.array([o.z for o in outs]),
            "logp": np.array([o.logp for o in outs]),
            "rewards": np.array([o.reward for o in outs]),
            "dones": np.array([float(o.done) for o in outs]),
            "cats": np.array([o.cat for o in outs]),
            "delta_ds": np.array([o.delta_d for o in outs]),
            "actions": np.array([o.action for o in outs]),
        }


@dataclass
class TrainResult:
    policy: PolicyParams
    history: list


def rl_train(setup: AgentSetup, cfg: PPOConfig, seed: int,
             policy: PolicyParams | None = None) -> TrainResult:
    """Train a policy with PPO for cfg.total_steps environment steps.

    The afferent array parameters are read-only here; only its activation
    state advances, and that is reset per episode.
    """
    if policy is None:
        dim = obs_dim(setup.mode, setup.array.k, setup.array.m)
        policy = init_policy(dim, rng_for(seed, 0), setup.mode, cfg.hidden)
    history: list = []
    if cfg.total_steps <= 0:
        return TrainResult(policy, history)
    runner = Runner(setup, policy, seed)
    optimizer = Adam(policy.n_params, cfg.lr)
    shuffle_rng = rng_for(seed, 2)
    steps_done = 0
    while steps_done < cfg.total_steps:
        n = min(cfg.rollout_len, cfg.total_steps - steps_done)
        batch = runner.collect(n)
        values = policy.value(batch["obs"])
        last_value = float(policy.value(runner.bootstrap_obs[None, :])[0])
        adv, returns = gae(batch["rewards"], values, batch["dones"],
                           cfg.gamma, cfg.gae_lambda, last_value)
        traj = {"obs": batch["obs"], "z": batch["z"], "logp": batch["logp"],
                "adv": adv, "returns": returns}
        stats = ppo_update(policy, traj, cfg, shuffle_rng, optimizer)
        steps_done += n
        history.append({
            "step": steps_done,
            "mean_reward": float(batch["rewards"].mean()),
            "mean_cat": float(batch["cats"].mean()),
            "mean_delta_d": float(batch["delta_ds"].mean()),
            "clip_fraction": stats["clip_fraction"],
            "loss": stats["loss"],
        })
    return TrainResult(policy, history)


def _run_episode(runner: Runner) -> EpisodeStats:
    outs = []
    while True:
        out = runner.step_once()
        outs.append(out)
        if out.done:
            break
    actions = np.array([o.action for o in outs])
    cats = np.array([o.cat for o in outs])
    plain = runner.setup.mode == "plain"
    with_memory = runner.setup.mode == "epi" and runner.setup.memory is not None
    return EpisodeStats(
        task_mean=float(np.mean([o.task for o in outs])),
        d_total=float(outs[-1].damage),
        cat_mean=None if plain else float(cats.mean()),
        action_mean=float(actions.mean()),
        actions=actions,
        cats=None if plain else cats,
        recalls=np.array([o.y_hat for o in outs]) if with_memory else None,
    )


def evaluate_policy(setup: AgentSetup, policy: PolicyParams, eval_seeds,
                    eval_episodes: int) -> list:
    """Run eval_episodes per seed with memory captures frozen."""
    stats = []
    for s in eval_seeds:
        runner = Runner(
            setup, policy, seed=int(s),
            env_seed_fn=lambda i, s=s: int(rng_for(s, 5, i).integers(0, 2**62)),
            capture=False,
        )
        for _ in range(eval_episodes):
            stats.append(_run_episode(runner))
    return stats


def calibrate_predictive(seed: int, n_samples: int = 2000,
                         episode_len: int = twin.EPISODE_LEN):
    """Fit the safe-state model and calibrate delta0 on healthy rollouts.

    Healthy regime: normal scenario at age 20 under uniform random actions.
    delta0 is the 95th percentile of the fit's own discrepancies, so the
    predictive signal crosses 0.5 only for residuals unusual even under
    healthy dynamics.
    """
    cfg = twin.SCENARIOS["normal"]
    age = 20.0
    rng = rng_for(seed, 7)
    samples = []
    ep = 0
    while len(samples) < n_samples:
        state = twin.reset(cfg, age, int(rng_for(seed, 8, ep).integers(0, 2**62)))
        for _ in range(episode_len):
            if len(samples) >= n_samples:
                break
            action = float(rng.uniform(0.0, 1.0))
            ctx = gait_context(state.t, age)
            x_t = state.x
            state, res = twin.step(state, action, cfg, episode_len)
            samples.append((x_t, action, ctx, res.x_next))
        ep += 1
    model = fit_safe_model(samples)
    probe = DiscrepancyParams(w_delta=np.ones(3))
    deltas = [
        discrepancy(x_next, model.predict(x, a, c), probe)
        for x, a, c, x_next in samples
    ]
    disc = DiscrepancyParams(w_delta=np.ones(3), kappa=10.0,
                             delta0=percentile_95(deltas))
    return model, disc
