"""End-to-end checks of the harness operations at very small budgets."""

import numpy as np
import pytest

from afferent.afferents import handcrafted_genome
from afferent.config import ExperimentConfig
from afferent.errors import ConfigError
from afferent.harness import (
    _resolve_genome,
    evaluate,
    probe_lipschitz,
    simulate,
    train,
    variant_plan,
)
from afferent.policy import PPOConfig, RewardParams
from afferent.storage import read_jsonl, save_genome, validate_rollout_line


def micro_cfg(tmp_path, **kw):
    base = dict(
        m=8, k=3, ages=(60.0,), seeds=(0,), out=str(tmp_path),
        ppo=PPOConfig(total_steps=256, rollout_len=128, minibatch=32, hidden=(8,)),
        episode_len=64, eval_episodes=1, eval_seeds=(701,),
        pred_samples=200, sim_repeats=1, sim_steps=10,
        fitness=ExperimentConfig().fitness,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_variant_plan_wiring():
    cfg = ExperimentConfig()
    full = variant_plan(cfg, "full")
    assert full.mode == "epi" and full.use_memory and full.use_predictive
    assert full.reward == cfg.reward

    no_cat = variant_plan(cfg, "no_cat")
    assert no_cat.mode == "plain"
    assert not no_cat.use_memory and not no_cat.use_predictive
    assert no_cat.reward.lambda_cat == 0.0 and no_cat.reward.lambda_mem == 0.0
    assert no_cat.reward.lambda_d == cfg.reward.lambda_d

    no_evo = variant_plan(cfg, "no_evolution")
    assert no_evo == full  # same wiring, different genome upstream

    no_amm = variant_plan(cfg, "no_amm")
    assert no_amm.mode == "base" and not no_amm.use_memory
    assert no_amm.use_predictive == cfg.use_predictive
    assert no_amm.reward.lambda_mem == 0.0
    assert no_amm.reward.lambda_cat == cfg.reward.lambda_cat

    no_pred = variant_plan(cfg, "no_predictive")
    assert no_pred.mode == cfg.mode and no_pred.use_memory == cfg.use_memory
    assert not no_pred.use_predictive

    with pytest.raises(ConfigError):
        variant_plan(cfg, "no_everything")


def test_variant_plan_respects_config_toggles():
    cfg = ExperimentConfig(use_memory=False, use_predictive=False, mode="base")
    full = variant_plan(cfg, "full")
    assert full.mode == "base" and not full.use_memory and not full.use_predictive
    assert not variant_plan(cfg, "no_amm").use_predictive


def test_resolve_genome_paths(tmp_path):
    cfg = micro_cfg(tmp_path)
    assert np.array_equal(_resolve_genome(cfg).raw, handcrafted_genome(8, 3).raw)
    gpath = tmp_path / "g.bin"
    save_genome(gpath, handcrafted_genome(8, 3))
    loaded = _resolve_genome(micro_cfg(tmp_path, genome=str(gpath)))
    assert loaded.m == 8 and loaded.k == 3
    with pytest.raises(ConfigError, match="not found"):
        _resolve_genome(micro_cfg(tmp_path, genome=str(tmp_path / "nope.bin")))
    save_genome(tmp_path / "wrong.bin", handcrafted_genome(4, 3))
    with pytest.raises(ConfigError, match="does not match"):
        _resolve_genome(micro_cfg(tmp_path, genome=str(tmp_path / "wrong.bin")))


def test_simulate_outputs(tmp_path):
    cfg = micro_cfg(tmp_path, sim_repeats=2, sim_steps=10)
    manifest = simulate(cfg)
    assert manifest["lines_per_file"] == 10
    assert len(manifest["files"]) == 6  # 3 scenarios x 2 repeats
    for rel in manifest["files"]:
        rows = read_jsonl(tmp_path / rel)
        assert len(rows) == 10
        for row in rows:
            validate_rollout_line(row)
    assert (tmp_path / "reports" / "simulate.json").is_file()
    normal = read_jsonl(tmp_path / "runs" / "dkt_normal_rep0.jsonl")
    assert normal[0]["scenario"] == "normal"
    assert normal[0]["load_factor"] == pytest.approx(1.0)
    assert normal[3]["time"] == pytest.approx(3 / 80)
    acl = read_jsonl(tmp_path / "runs" / "dkt_acl_deficient_rep0.jsonl")
    assert acl[0]["load_factor"] == pytest.approx((1.15 + 1.05 + 1.5) / 3)
    assert acl[0]["instability_index"] == pytest.approx(0.4)
    assert len(normal[0]["cat_embedding"]) == cfg.m


def test_simulate_deterministic(tmp_path):
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    simulate(micro_cfg(a_dir))
    simulate(micro_cfg(b_dir))
    rel = "runs/dkt_normal_rep0.jsonl"
    assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes()


def test_train_then_evaluate(tmp_path):
    cfg = micro_cfg(tmp_path)
    report = train(cfg)
    assert report["variant"] == "full" and report["steps"] == 256
    ppath = tmp_path / "genomes" / "policy_normal_age60_seed0.bin"
    assert ppath.is_file()
    assert (tmp_path / "genomes" / "safe_model.bin").is_file()
    assert (tmp_path / "curves" / "train_normal_age60_seed0.csv").is_file()
    episodes = read_jsonl(tmp_path / "runs" / "train_normal_age60_seed0.jsonl")
    assert len(episodes) == 1  # eval_episodes x eval_seeds
    assert {"action_mean", "safe_fraction", "d_total", "cat_mean"} <= set(episodes[0])

    metrics = evaluate(micro_cfg(tmp_path, policy=str(ppath)))
    assert set(metrics.mean_action) == {"60"}
    assert (tmp_path / "reports" / "evaluate_normal.json").is_file()


def test_evaluate_requires_policy(tmp_path):
    with pytest.raises(ConfigError, match="policy"):
        evaluate(micro_cfg(tmp_path))
    with pytest.raises(ConfigError, match="not found"):
        evaluate(micro_cfg(tmp_path, policy=str(tmp_path / "ghost.bin")))


def test_evaluate_rejects_mode_mismatch(tmp_path):
    cfg = micro_cfg(tmp_path)
    train(cfg)
    ppath = tmp_path / "genomes" / "policy_normal_age60_seed0.bin"
    # trained in epi mode; no_cat wires plain observations
    with pytest.raises(ConfigError, match="mode"):
        evaluate(micro_cfg(tmp_path, policy=str(ppath), ablation="no_cat"))
    with pytest.raises(ConfigError, match="observation size"):
        evaluate(micro_cfg(tmp_path, policy=str(ppath), m=4))


def test_probe_lipschitz_report(tmp_path):
    fitness = ExperimentConfig().fitness
    fitness = type(fitness)(eval_episodes=1, eval_seeds=(901,), rl_steps_short=64,
                            rl_steps_long=64, top_fraction=0.5)
    cfg = micro_cfg(tmp_path, probe_pairs=2, probe_radius=10.0, fitness=fitness)
    report = probe_lipschitz(cfg)
    assert report["l_hat"] >= 0.0
    assert report["genome"] == "handcrafted"
    assert report["n_pairs"] == 2
    assert (tmp_path / "reports" / "lipschitz_normal_seed0.json").is_file()
