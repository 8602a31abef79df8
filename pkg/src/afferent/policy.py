"""Observation construction, reward shaping, and the PPO learner core.

The policy is a tanh-squashed Gaussian over a single work-intensity action in
[0, 1], with a small MLP actor (pre-squash mean, state-independent log-std)
and MLP critic.  Updates use the clipped surrogate objective with GAE, all
gradients written out by hand against the nets module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError, ValidationError
from .nets import MLP, Adam, clip_grad
from .util import softplus

__all__ = [
    "OBS_MODES",
    "RewardParams",
    "PPOConfig",
    "PolicyParams",
    "obs_dim",
    "build_observation",
    "shaped_reward",
    "init_policy",
    "sample_action",
    "sample_action_z",
    "gae",
    "ppo_loss_and_grad",
    "ppo_update",
    "LOG_STD_MIN",
    "LOG_STD_MAX",
]

OBS_MODES = ("base", "epi", "reduced", "plain")
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class RewardParams:
    """Penalty weights for shaped reward.

    Defaults are sized against the twin's signal scales: CAT sits in roughly
    [0.2, 0.7] over the useful action range, per-step damage increments reach
    a few 1e-4, and recalled damage estimates a few 1e-3, so the weights below
    put all three penalty terms within an order of magnitude of the task term.
    """

    lambda_cat: float = 2.0
    lambda_d: float = 5.0
    lambda_mem: float = 25.0

    def __post_init__(self):
        if self.lambda_cat < 0 or self.lambda_d < 0 or self.lambda_mem < 0:
            raise ValidationError("penalty weights must be nonnegative")


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    rollout_len: int = 1024
    epochs: int = 4
    minibatch: int = 64
    total_steps: int = 20000
    hidden: tuple = (64, 64)
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not self.clip > 0:
            raise ValidationError("clip must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValidationError("gae_lambda must lie in [0, 1]")


def obs_dim(mode: str, k: int, m: int) -> int:
    if mode == "base":
        return k + m + 1
    if mode == "epi":
        return k + m + 3
    if mode == "reduced":
        return 2
    if mode == "plain":
        return k
    raise ValidationError("unknown observation mode %r" % (mode,))


def build_observation(x, activations, cat, y_hat=0.0, d_mean=0.0, mode="base",
                      age=None) -> np.ndarray:
    """Assemble the policy observation; the damage state is never an input.

    Layouts: base [x, activations, cat]; epi appends [y_hat, d_mean];
    reduced is [cat, age_norm] with age_norm = (age - 20)/70; plain is the
    raw feature vector only.
    """
    x = np.asarray(x, dtype=float)
    activations = np.asarray(activations, dtype=float)
    if mode == "base":
        return np.concatenate([x, activations, [float(cat)]])
    if mode == "epi":
        return np.concatenate([x, activations, [float(cat), float(y_hat), float(d_mean)]])
    if mode == "reduced":
        if age is None:
            raise ValidationError("reduced mode needs the age")
        return np.array([float(cat), (float(age) - 20.0) / 70.0])
    if mode == "plain":
        return x.copy()
    raise ValidationError("unknown observation mode %r" % (mode,))


def shaped_reward(task: float, cat: float, delta_d: float, y_hat: float,
                  p: RewardParams) -> float:
    return task - p.lambda_cat * cat - p.lambda_d * delta_d - p.lambda_mem * y_hat


@dataclass
class PolicyParams:
    """Actor-critic parameter bundle with one flat view for the optimizer."""

    actor: MLP
    critic: MLP
    log_std: float
    mode: str
    obs_dim: int

    @property
    def n_params(self) -> int:
        return self.actor.n_params + 1 + self.critic.n_params

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.actor.get_params(), [self.log_std],
                               self.critic.get_params()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        na = self.actor.n_params
        self.actor.set_params(flat[:na])
        self.log_std = float(np.clip(flat[na], LOG_STD_MIN, LOG_STD_MAX))
        self.critic.set_params(flat[na + 1:])

    def mean(self, obs: np.ndarray) -> np.ndarray:
        out, _ = self.actor.forward(obs)
        return out[:, 0]

    def value(self, obs: np.ndarray) -> np.ndarray:
        out, _ = self.critic.forward(obs)
        return out[:, 0]


def init_policy(dim: int, rng: np.random.Generator, mode: str = "base",
                hidden=(64, 64)) -> PolicyParams:
    """Fresh actor-critic; the actor output layer starts near zero."""
    sizes = [dim, *hidden, 1]
    actor = MLP(sizes, rng, out_gain=0.01)
    critic = MLP(sizes, rng, out_gain=1.0)
    return PolicyParams(actor=actor, critic=critic, log_std=-0.5, mode=mode, obs_dim=dim)


def _squash_log_jacobian(z: np.ndarray) -> np.ndarray:
    # log|da/dz| for a = (tanh(z)+1)/2, written to stay finite for large |z|
    return np.log(2.0) - 2.0 * z - 2.0 * softplus(-2.0 * z)


def _log_prob_z(mu: np.ndarray, log_std: float, z: np.ndarray) -> np.ndarray:
    std = np.exp(log_std)
    gauss = -0.5 * ((z - mu) / std) ** 2 - log_std - _HALF_LOG_2PI
    return gauss - _squash_log_jacobian(z)


def _draw(policy: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    mu = policy.mean(obs)
    std = np.exp(policy.log_std)
    z = mu + std * rng.standard_normal(mu.shape)
    action = 0.5 * (np.tanh(z) + 1.0)
    logp = _log_prob_z(mu, policy.log_std, z)
    return action, logp, z


def sample_action(policy: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """Draw one action in [0, 1] and its log-probability."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (policy.obs_dim,):
        raise ValidationError("observation length %d, expected %d"
                              % (obs.size, policy.obs_dim))
    action, logp, _ = _draw(policy, obs, rng)
    return float(action[0]), float(logp[0])


def sample_action_z(policy: PolicyParams, obs: np.ndarray, rng: np.random.Generator):
    """As sample_action, additionally returning the pre-squash draw z.

    Updates recompute log-probabilities at the stored z, so the squash
    inversion never has to run on saturated actions.
    """
    action, logp, z = _draw(policy, obs, rng)
    return float(action[0]), float(logp[0]), float(z[0])


def gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0,
        normalize: bool = True):
    """Generalized advantage estimation over one collected rollout.

    values aligns with rewards (V(s_t)); last_value bootstraps the step after
    the final one.  Advantages are normalized to mean 0, sd 1 unless disabled.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise ValidationError("gae inputs must have equal lengths")
    T = rewards.shape[0]
    adv = np.zeros(T)
    next_adv = 0.0
    next_value = last_value
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        next_adv = delta + gamma * lam * nonterminal * next_adv
        adv[t] = next_adv
        next_value = values[t]
    returns = adv + values
    if normalize:
        sd = adv.std()
        adv = (adv - adv.mean()) / max(sd, 1e-8)
    return adv, returns


def ppo_loss_and_grad(policy: PolicyParams, obs, z, logp_old, adv, returns,
                      cfg: PPOConfig):
    """Clipped-surrogate loss with value and entropy terms, plus its gradient.

    Gradients are exact for the stored pre-squash samples z: the squash
    Jacobian does not depend on the parameters once z is fixed, so it enters
    only through the stored old log-probabilities.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    z = np.asarray(z, dtype=float)
    logp_old = np.asarray(logp_old, dtype=float)
    adv = np.asarray(adv, dtype=float)
    returns = np.asarray(returns, dtype=float)
    n = obs.shape[0]

    mu_out, actor_cache = policy.actor.forward(obs)
    mu = mu_out[:, 0]
    log_std = policy.log_std
    std = np.exp(log_std)
    logp = _log_prob_z(mu, log_std, z)
    ratio = np.exp(logp - logp_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr1 = ratio * adv
    surr2 = clipped * adv
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))

    v_out, critic_cache = policy.critic.forward(obs)
    v = v_out[:, 0]
    value_loss = float(np.mean((v - returns) ** 2))

    entropy = log_std + 0.5 * (1.0 + np.log(2.0 * np.pi))

    total = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    if not np.isfinite(total):
        raise TrainingError("non-finite PPO loss (policy %r, value %r)"
                            % (policy_loss, value_loss))

    # d(policy_loss)/d(ratio): the min picks the unclipped branch on ties
    use_unclipped = surr1 <= surr2
    inside_clip = (ratio > 1.0 - cfg.clip) & (ratio < 1.0 + cfg.clip)
    dl_dratio = np.where(use_unclipped, adv, np.where(inside_clip, adv, 0.0))
    dl_dlogp = -(dl_dratio * ratio) / n
    zs = (z - mu) / std
    dl_dmu = dl_dlogp * (zs / std)
    dl_dlogstd_policy = float(np.sum(dl_dlogp * (zs**2 - 1.0)))
    actor_grad = policy.actor.backward(actor_cache, dl_dmu[:, None])

    dl_dv = cfg.value_coef * 2.0 * (v - returns) / n
    critic_grad = policy.critic.backward(critic_cache, dl_dv[:, None])

    dl_dlogstd = dl_dlogstd_policy - cfg.entropy_coef
    grad = np.concatenate([actor_grad, [dl_dlogstd], critic_grad])

    clip_fraction = float(np.mean((ratio < 1.0 - cfg.clip) | (ratio > 1.0 + cfg.clip)))
    stats = {
        "loss": float(total),
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": float(entropy),
        "clip_fraction": clip_fraction,
    }
    return float(total), grad, stats


def ppo_update(policy: PolicyParams, traj: dict, cfg: PPOConfig,
               rng: np.random.Generator, optimizer: Adam | None = None) -> dict:
    """Epochs of minibatch Adam steps on one rollout; returns mean loss stats."""
    n = traj["obs"].shape[0]
    if optimizer is None:
        optimizer = Adam(policy.n_params, cfg.lr)
    agg: dict = {}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start : start + cfg.minibatch]
            _, grad, stats = ppo_loss_and_grad(
                policy, traj["obs"][idx], traj["z"][idx], traj["logp"][idx],
                traj["adv"][idx], traj["returns"][idx], cfg,
            )
            grad = clip_grad(grad, cfg.max_grad_norm)
            policy.set_flat(optimizer.step(policy.get_flat(), grad))
            for k_, v_ in stats.items():
                agg[k_] = agg.get(k_, 0.0) + v_
            count += 1
    return {k_: v_ / count for k_, v_ in agg.items()}
