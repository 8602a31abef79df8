from dataclasses import replace

import numpy as np
import pytest

from afferent.afferents import decode_genome, handcrafted_genome
from afferent.env import SCENARIOS
from afferent.memory import MemoryStore
from afferent.policy import PPOConfig, init_policy, obs_dim
from afferent.rollout import (
    AgentSetup,
    Runner,
    calibrate_predictive,
    evaluate_policy,
    gait_context,
    rl_train,
)
from afferent.util import rng_for

M, K = 6, 3


def make_setup(mode="base", memory=None, eps_d=None, episode_len=50, age=60.0):
    array = decode_genome(handcrafted_genome(M, K), dt=1.0)
    kwargs = {}
    if eps_d is not None:
        kwargs["eps_d"] = eps_d
    return AgentSetup(scenario=SCENARIOS["normal"], age=age, array=array,
                      mode=mode, memory=memory, episode_len=episode_len, **kwargs)


def make_policy(mode="base", seed=0):
    return init_policy(obs_dim(mode, K, M), rng_for(seed, 0), mode, hidden=(8,))


def test_gait_context_oracle():
    assert gait_context(0, 20.0) == pytest.approx([0.0, 1.0, 0.0], abs=1e-12)
    assert gait_context(20, 90.0) == pytest.approx([1.0, 0.0, 1.0], abs=1e-12)
    # phase wraps at the gait period
    assert gait_context(80, 55.0) == pytest.approx(gait_context(0, 55.0), abs=1e-12)


def test_collect_shapes_and_episode_boundaries():
    runner = Runner(make_setup(episode_len=5), make_policy(), seed=0)
    batch = runner.collect(12)
    assert set(batch) == {"obs", "z", "logp", "rewards", "dones", "cats",
                          "delta_ds", "actions"}
    assert batch["obs"].shape == (12, obs_dim("base", K, M))
    assert list(np.nonzero(batch["dones"])[0]) == [4, 9]
    assert np.all((batch["actions"] > 0) & (batch["actions"] < 1))
    assert np.all((batch["cats"] >= 0) & (batch["cats"] <= 1))


def test_runner_is_deterministic():
    a = Runner(make_setup(), make_policy(), seed=7).collect(30)
    b = Runner(make_setup(), make_policy(), seed=7).collect(30)
    for key in a:
        assert np.array_equal(a[key], b[key])
    c = Runner(make_setup(), make_policy(), seed=8).collect(30)
    assert not np.array_equal(a["actions"], c["actions"])


def test_plain_mode_hides_cat():
    runner = Runner(make_setup(mode="plain"), make_policy(mode="plain"), seed=0)
    batch = runner.collect(20)
    assert np.all(batch["cats"] == 0.0)
    assert batch["obs"].shape[1] == K


def test_memory_capture_during_training_steps():
    memory = MemoryStore(scenario="normal")
    # zero damage threshold makes every post-warmup step a trigger
    setup = make_setup(mode="epi", memory=memory, eps_d=0.0, episode_len=20)
    runner = Runner(setup, make_policy(mode="epi"), seed=1)
    runner.collect(40)  # two full episodes
    assert len(memory) > 0
    assert all(ep.finalized for ep in memory.episodes)
    assert len(memory.pending) == 0  # end_episode flushed them


def test_frozen_runner_never_captures():
    memory = MemoryStore(scenario="normal")
    setup = make_setup(mode="epi", memory=memory, eps_d=0.0, episode_len=20)
    runner = Runner(setup, make_policy(mode="epi"), seed=1, capture=False)
    runner.collect(40)
    assert len(memory) == 0 and len(memory.pending) == 0


def test_rl_train_history_and_determinism():
    cfg = PPOConfig(total_steps=64, rollout_len=32, minibatch=16, hidden=(8,))
    res = rl_train(make_setup(), cfg, seed=3)
    assert [row["step"] for row in res.history] == [32, 64]
    for row in res.history:
        assert set(row) == {"step", "mean_reward", "mean_cat", "mean_delta_d",
                            "clip_fraction", "loss"}
    res2 = rl_train(make_setup(), cfg, seed=3)
    assert res.history == res2.history
    assert np.array_equal(res.policy.get_flat(), res2.policy.get_flat())


def test_rl_train_zero_steps():
    cfg = PPOConfig(total_steps=0, hidden=(8,))
    res = rl_train(make_setup(), cfg, seed=0)
    assert res.history == []
    assert res.policy.obs_dim == obs_dim("base", K, M)


def test_evaluate_policy_stats():
    policy = make_policy()
    stats = evaluate_policy(make_setup(episode_len=25), policy,
                            eval_seeds=(701, 702), eval_episodes=2)
    assert len(stats) == 4
    for s in stats:
        assert s.actions.shape == (25,)
        assert s.cats is not None and s.recalls is None
        assert s.action_mean == pytest.approx(float(s.actions.mean()))
        assert s.d_total >= 0.0
    again = evaluate_policy(make_setup(episode_len=25), policy,
                            eval_seeds=(701, 702), eval_episodes=2)
    assert [s.d_total for s in stats] == [x.d_total for x in again]


def test_evaluate_policy_epi_reports_recalls():
    memory = MemoryStore(scenario="normal")
    setup = make_setup(mode="epi", memory=memory, eps_d=0.0, episode_len=20)
    Runner(setup, make_policy(mode="epi"), seed=1).collect(40)
    stats = evaluate_policy(setup, make_policy(mode="epi"), (701,), 1)
    assert stats[0].recalls is not None
    assert stats[0].recalls.shape == (20,)
    assert np.any(stats[0].recalls != 0.0)


def test_calibrate_predictive_frozen_seed():
    model, disc = calibrate_predictive(42)
    assert disc.delta0 == pytest.approx(0.13366511944281517, abs=1e-12)
    assert model.residual_rms == pytest.approx(0.045579041130796104, abs=1e-12)
    assert model.A.shape == (3, 7)
    assert disc.kappa == 10.0
    assert np.array_equal(disc.w_delta, np.ones(3))


def test_predictive_blend_changes_cat():
    model, disc = calibrate_predictive(42, n_samples=400, episode_len=50)
    base = make_setup(episode_len=25)
    wired = replace(make_setup(episode_len=25), safe_model=model, disc=disc)
    a = Runner(base, make_policy(), seed=2).collect(25)
    b = Runner(wired, make_policy(), seed=2).collect(25)
    assert not np.array_equal(a["cats"], b["cats"])
    assert np.all((b["cats"] >= 0) & (b["cats"] <= 1))
