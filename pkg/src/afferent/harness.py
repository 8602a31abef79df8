"""Batch experiment driver behind the CLI subcommands.

Each operation reads an ExperimentConfig, runs the relevant pipeline, and
writes into a fixed output tree: out/{runs/*.jsonl, reports/*.json,
curves/*.csv, genomes/*.bin}.  Independent (variant, age, seed) cells are
scheduled in parallel when cfg.jobs > 1; every cell derives its randomness
from its own seeds, so worker count never changes results.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import env as twin
from .afferents import (
    Genome,
    compute_cat,
    decode_genome,
    handcrafted_genome,
    reset_state,
)
from .config import ABLATIONS, ExperimentConfig
from .errors import ConfigError, TrainingError
from .evolution import EvalContext, evaluate_fitness, lipschitz_probe, run_evolution
from .memory import MemoryStore
from .metrics import MetricsReport, RunLog, age_key, compute_metrics
from .policy import RewardParams, obs_dim
from .rollout import AgentSetup, calibrate_predictive, evaluate_policy, rl_train
from .stats import welch_test
from .storage import (
    load_genome,
    load_policy,
    save_genome,
    save_policy,
    save_safe_model,
    validate_rollout_line,
    write_csv,
    write_json_report,
    write_jsonl,
)
from .util import rng_for

__all__ = [
    "VariantPlan",
    "variant_plan",
    "resolve_predictive",
    "evolve_genome",
    "simulate",
    "train",
    "evolve",
    "evaluate",
    "run_ablation",
    "probe_lipschitz",
]


@dataclass(frozen=True)
class VariantPlan:
    """How one ablation arm wires observations, memory, predictive, reward."""

    mode: str
    use_memory: bool
    use_predictive: bool
    reward: RewardParams


def variant_plan(cfg: ExperimentConfig, variant: str) -> VariantPlan:
    if variant in ("full", "no_evolution"):
        return VariantPlan(cfg.mode, cfg.use_memory, cfg.use_predictive, cfg.reward)
    if variant == "no_cat":
        return VariantPlan("plain", False, False,
                           replace(cfg.reward, lambda_cat=0.0, lambda_mem=0.0))
    if variant == "no_amm":
        return VariantPlan("base", False, cfg.use_predictive,
                           replace(cfg.reward, lambda_mem=0.0))
    if variant == "no_predictive":
        return VariantPlan(cfg.mode, cfg.use_memory, False, cfg.reward)
    raise ConfigError(f"unknown ablation {variant!r}")


def resolve_predictive(cfg: ExperimentConfig):
    """Calibrated safe-state model with config-selected signal weights."""
    model, disc = calibrate_predictive(cfg.pred_seed, cfg.pred_samples,
                                       cfg.episode_len)
    disc = replace(disc, kappa=cfg.pred_kappa, lambda_env=cfg.pred_lambda_env,
                   lambda_pred=cfg.pred_lambda_pred)
    return model, disc


def _resolve_genome(cfg: ExperimentConfig) -> Genome:
    if cfg.genome:
        path = Path(cfg.genome)
        if not path.is_file():
            raise ConfigError(f"genome file not found: {path}")
        genome, _ = load_genome(path)
        if genome.m != cfg.m or genome.k != cfg.k:
            raise ConfigError(
                f"genome shape ({genome.m}, {genome.k}) does not match config "
                f"({cfg.m}, {cfg.k})")
        return genome
    return handcrafted_genome(cfg.m, cfg.k, cfg.dt)


def evolve_genome(cfg: ExperimentConfig, seed: int | None = None):
    """Run the outer CMA-ES loop under the config's evolution settings."""
    ectx = EvalContext(
        m=cfg.m, k=cfg.k, scenario=twin.SCENARIOS[cfg.scenario],
        age=float(cfg.ages[0]), reward=cfg.reward,
        episode_len=cfg.episode_len, dt=cfg.dt,
    )
    return run_evolution(
        cfg.fitness, cfg.evo_generations, cfg.evo_popsize, ectx, cfg.ppo,
        seed=cfg.seed if seed is None else int(seed), sigma0=cfg.evo_sigma0,
    )


def _build_setup(cfg: ExperimentConfig, plan: VariantPlan, genome: Genome,
                 age: float, model, disc) -> AgentSetup:
    array = decode_genome(genome, cfg.dt)
    memory = (MemoryStore(capacity=cfg.memory_capacity, scenario=cfg.scenario)
              if plan.use_memory else None)
    return AgentSetup(
        scenario=twin.SCENARIOS[cfg.scenario], age=float(age), array=array,
        reward=plan.reward, mode=plan.mode, memory=memory,
        safe_model=model if plan.use_predictive else None,
        disc=disc if plan.use_predictive else None,
        memory_bias=cfg.memory_bias, episode_len=cfg.episode_len,
        eps_d=cfg.memory_eps_d, kappa_cat=cfg.memory_kappa_cat,
        k_ret=cfg.memory_k_ret,
    )


def _episode_rows(stats) -> list:
    rows = []
    for i, ep in enumerate(stats):
        row = {
            "episode": i,
            "action_mean": float(ep.action_mean),
            "safe_fraction": float((ep.actions < 0.3).mean()),
            "task_mean": float(ep.task_mean),
            "d_total": float(ep.d_total),
        }
        if ep.cat_mean is not None:
            row["cat_mean"] = float(ep.cat_mean)
        if ep.recalls is not None:
            row["recall_mean"] = float(ep.recalls.mean())
        rows.append(row)
    return rows


def _run_log(stats, variant: str, age: float, seed: int) -> RunLog:
    has_cat = stats[0].cats is not None
    has_recall = stats[0].recalls is not None
    return RunLog(
        variant=variant, age=float(age), seed=int(seed),
        d_total=float(np.mean([ep.d_total for ep in stats])),
        task_mean=float(np.mean([ep.task_mean for ep in stats])),
        actions=np.concatenate([ep.actions for ep in stats]),
        cats=np.concatenate([ep.cats for ep in stats]) if has_cat else None,
        recalls=(np.concatenate([ep.recalls for ep in stats])
                 if has_recall else None),
    )


def _train_eval_cell(args):
    """One (variant, age, seed) cell: train a policy, evaluate it, summarize."""
    cfg, variant, age, seed, genome, model, disc = args
    plan = variant_plan(cfg, variant)
    setup = _build_setup(cfg, plan, genome, age, model, disc)
    try:
        result = rl_train(setup, cfg.ppo, int(seed))
    except TrainingError as exc:
        return {"failure": {"variant": variant, "age": float(age),
                            "seed": int(seed), "error": str(exc)}}
    stats = evaluate_policy(setup, result.policy, cfg.eval_seeds,
                            cfg.eval_episodes)
    return {
        "run_log": _run_log(stats, variant, age, seed),
        "episodes": _episode_rows(stats),
        "history": result.history,
        "policy": result.policy,
    }


def _parallel_map(fn, items, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=1))


# ---------------------------------------------------------------------------
# Subcommand implementations


def simulate(cfg: ExperimentConfig) -> dict:
    """Emit knee-twin rollout logs: scenarios x repeats, one JSONL each."""
    out = Path(cfg.out)
    array = decode_genome(handcrafted_genome(cfg.m, cfg.k, cfg.dt), cfg.dt)
    manifest = {"files": [], "lines_per_file": int(cfg.sim_steps)}
    for si, name in enumerate(twin.SCENARIOS):
        scen = twin.SCENARIOS[name]
        load_factor = (scen.stress_mult + scen.strain_mult + scen.shear_mult) / 3.0
        for rep in range(cfg.sim_repeats):
            seed = int(rng_for(cfg.seed, 21, si, rep).integers(0, 2**62))
            state = twin.reset(scen, cfg.sim_age, seed)
            reset_state(array)
            rows = []
            for t in range(cfg.sim_steps):
                state, res = twin.step(state, cfg.sim_action, scen,
                                       episode_len=cfg.sim_steps + 1)
                cat, acts = compute_cat(array, res.x_next)
                row = {
                    "time": t / twin.GAIT_PERIOD,
                    "stress": float(res.x_next[0]),
                    "strain": float(res.x_next[1]),
                    "shear": float(res.x_next[2]),
                    "scenario": name,
                    "load_factor": float(load_factor),
                    "instability_index": float(scen.instability),
                    "cat": float(cat),
                    "cat_embedding": [float(a) for a in acts],
                    "damage_increment": float(res.delta_d),
                }
                validate_rollout_line(row)
                rows.append(row)
            rel = f"runs/dkt_{name}_rep{rep}.jsonl"
            write_jsonl(out / rel, rows)
            manifest["files"].append(rel)
    write_json_report(out / "reports" / "simulate.json", manifest)
    return manifest


def train(cfg: ExperimentConfig) -> dict:
    """Train one policy (cfg.seed) under the cfg.ablation wiring and evaluate."""
    out = Path(cfg.out)
    age = float(cfg.ages[0])
    plan = variant_plan(cfg, cfg.ablation)
    genome = (handcrafted_genome(cfg.m, cfg.k, cfg.dt)
              if cfg.ablation == "no_evolution" else _resolve_genome(cfg))
    model = disc = None
    if plan.use_predictive:
        model, disc = resolve_predictive(cfg)
    cell = _train_eval_cell((cfg, cfg.ablation, age, cfg.seed, genome, model, disc))
    if "failure" in cell:
        write_json_report(out / "reports" / "failure_manifest.json",
                          {"failures": [cell["failure"]], "completed": []})
        raise TrainingError(cell["failure"]["error"])
    tag = f"{cfg.scenario}_age{age_key(age)}_seed{cfg.seed}"
    save_policy(out / "genomes" / f"policy_{tag}.bin", cell["policy"])
    if model is not None:
        save_safe_model(out / "genomes" / "safe_model.bin", model, disc)
    write_csv(
        out / "curves" / f"train_{tag}.csv",
        ["step", "mean_reward", "mean_cat", "mean_delta_d", "clip_fraction", "loss"],
        [[h["step"], h["mean_reward"], h["mean_cat"], h["mean_delta_d"],
          h["clip_fraction"], h["loss"]] for h in cell["history"]],
    )
    write_jsonl(out / "runs" / f"train_{tag}.jsonl", cell["episodes"])
    log = cell["run_log"]
    report = {
        "variant": cfg.ablation,
        "scenario": cfg.scenario,
        "age": age,
        "seed": int(cfg.seed),
        "steps": int(cfg.ppo.total_steps),
        "eval": {
            "d_total": log.d_total,
            "task_mean": log.task_mean,
            "action_mean": float(log.actions.mean()),
            "safe_fraction": float((log.actions < 0.3).mean()),
        },
        "policy_file": f"genomes/policy_{tag}.bin",
    }
    if log.cats is not None:
        report["eval"]["cat_mean"] = float(log.cats.mean())
    if log.recalls is not None:
        report["eval"]["recall_mean"] = float(log.recalls.mean())
    write_json_report(out / "reports" / f"train_{tag}.json", report)
    return report


def evolve(cfg: ExperimentConfig) -> dict:
    """Outer-loop search; saves the best genome, curves, and a report."""
    out = Path(cfg.out)
    best, history = evolve_genome(cfg)
    best_fitness = max(h["best"] for h in history)
    tag = f"{cfg.scenario}_seed{cfg.seed}"
    save_genome(out / "genomes" / f"evolved_{tag}.bin", best,
                meta={"generations": cfg.evo_generations,
                      "fitness": best_fitness})
    write_csv(
        out / "curves" / f"evolution_{tag}.csv",
        ["generation", "best", "mean", "std"],
        [[h["generation"], h["best"], h["mean"], h["std"]] for h in history],
    )
    report = {
        "scenario": cfg.scenario,
        "age": float(cfg.ages[0]),
        "seed": int(cfg.seed),
        "generations": int(cfg.evo_generations),
        "popsize": int(cfg.evo_popsize),
        "n_params": int(cfg.m * (cfg.k + 4)),
        "best_fitness": best_fitness,
        "history": history,
        "genome_file": f"genomes/evolved_{tag}.bin",
    }
    write_json_report(out / "reports" / f"evolve_{tag}.json", report)
    return report


def evaluate(cfg: ExperimentConfig) -> MetricsReport:
    """Evaluate a saved policy across cfg.ages; memory starts empty."""
    out = Path(cfg.out)
    if not cfg.policy:
        raise ConfigError("evaluate requires policy = <path to .bin checkpoint>")
    path = Path(cfg.policy)
    if not path.is_file():
        raise ConfigError(f"policy file not found: {path}")
    policy = load_policy(path)
    plan = variant_plan(cfg, cfg.ablation)
    if policy.mode != plan.mode:
        raise ConfigError(
            f"policy was trained in mode {policy.mode!r}; config wires {plan.mode!r}")
    if policy.obs_dim != obs_dim(plan.mode, cfg.k, cfg.m):
        raise ConfigError("policy observation size does not match m/k in config")
    genome = (handcrafted_genome(cfg.m, cfg.k, cfg.dt)
              if cfg.ablation == "no_evolution" else _resolve_genome(cfg))
    model = disc = None
    if plan.use_predictive:
        model, disc = resolve_predictive(cfg)
    logs = []
    for age in cfg.ages:
        setup = _build_setup(cfg, plan, genome, age, model, disc)
        stats = evaluate_policy(setup, policy, cfg.eval_seeds, cfg.eval_episodes)
        logs.append(_run_log(stats, cfg.ablation, age, cfg.seed))
        write_jsonl(
            out / "runs" / f"evaluate_{cfg.scenario}_age{age_key(age)}.jsonl",
            _episode_rows(stats),
        )
    report = compute_metrics(logs)
    write_json_report(out / "reports" / f"evaluate_{cfg.scenario}.json",
                      report.to_dict())
    return report


def run_ablation(cfg: ExperimentConfig, genome: Genome | None = None) -> dict:
    """Train and evaluate every ablation arm across cfg.ages x cfg.seeds.

    Arms other than no_evolution share one genome: the configured file if
    given, otherwise the best genome from a fresh outer-loop run.  Returns
    {variant: MetricsReport}; the aggregate report adds cross-variant Welch
    comparisons against the full system.
    """
    out = Path(cfg.out)
    if genome is None:
        if cfg.genome:
            genome = _resolve_genome(cfg)
        else:
            genome, _ = evolve_genome(cfg)
            save_genome(out / "genomes" / f"ablation_{cfg.scenario}_seed{cfg.seed}.bin",
                        genome, meta={"role": "shared evolved genome"})
    baseline = handcrafted_genome(cfg.m, cfg.k, cfg.dt)
    model, disc = resolve_predictive(cfg)

    cells = [
        (cfg, variant, float(age), int(seed),
         baseline if variant == "no_evolution" else genome, model, disc)
        for variant in ABLATIONS
        for age in cfg.ages
        for seed in cfg.seeds
    ]
    results = _parallel_map(_train_eval_cell, cells, cfg.jobs)

    failures = []
    run_logs = {v: [] for v in ABLATIONS}
    for (c, variant, age, seed, *_), res in zip(cells, results):
        if "failure" in res:
            failures.append(res["failure"])
            continue
        log = res["run_log"]
        run_logs[variant].append(log)
        write_jsonl(
            out / "runs" /
            f"ablation_{variant}_age{age_key(age)}_seed{seed}.jsonl",
            res["episodes"],
        )
    if failures:
        completed = [
            {"variant": log.variant, "age": log.age, "seed": log.seed}
            for v in ABLATIONS for log in run_logs[v]
        ]
        write_json_report(out / "reports" / "failure_manifest.json",
                          {"failures": failures, "completed": completed})
        raise TrainingError(f"{len(failures)} ablation cell(s) failed; "
                            "partial results written")

    reports = {v: compute_metrics(run_logs[v]) for v in ABLATIONS}
    welch = {}
    for age in cfg.ages:
        ak = age_key(age)
        full_d = [log.d_total for log in run_logs["full"] if log.age == float(age)]
        full_cat = [float(log.cats.mean()) for log in run_logs["full"]
                    if log.age == float(age) and log.cats is not None]
        for variant in ABLATIONS:
            if variant == "full":
                continue
            logs = [log for log in run_logs[variant] if log.age == float(age)]
            d = [log.d_total for log in logs]
            if len(full_d) >= 2 and len(d) >= 2:
                res = welch_test(np.array(full_d), np.array(d))
                welch[f"d_total:full_vs_{variant}@age{ak}"] = {
                    "t": res.t, "df": res.df, "p": res.p,
                    "degenerate": res.degenerate,
                }
            cat = [float(log.cats.mean()) for log in logs if log.cats is not None]
            if len(full_cat) >= 2 and len(cat) == len(d) and len(cat) >= 2:
                res = welch_test(np.array(full_cat), np.array(cat))
                welch[f"cat:full_vs_{variant}@age{ak}"] = {
                    "t": res.t, "df": res.df, "p": res.p,
                    "degenerate": res.degenerate,
                }
    aggregate = {
        "variants": {v: reports[v].to_dict() for v in ABLATIONS},
        "welch": welch,
        "bonferroni_multiplier": len(welch),
    }
    write_json_report(out / "reports" / "ablation.json", aggregate)
    write_csv(
        out / "curves" / f"ablation_{cfg.scenario}.csv",
        ["variant", "age", "seed", "d_total", "action_mean", "safe_fraction",
         "cat_mean"],
        [[log.variant, log.age, log.seed, log.d_total,
          float(log.actions.mean()), float((log.actions < 0.3).mean()),
          "" if log.cats is None else float(log.cats.mean())]
         for v in ABLATIONS for log in run_logs[v]],
    )
    return reports


def probe_lipschitz(cfg: ExperimentConfig) -> dict:
    """Empirical fitness-smoothness probe around a genome."""
    out = Path(cfg.out)
    genome = _resolve_genome(cfg)
    ectx = EvalContext(
        m=cfg.m, k=cfg.k, scenario=twin.SCENARIOS[cfg.scenario],
        age=float(cfg.ages[0]), reward=cfg.reward,
        episode_len=cfg.episode_len, dt=cfg.dt,
    )

    def fitness_fn(raw):
        g = Genome(raw=np.asarray(raw, dtype=float), m=cfg.m, k=cfg.k)
        return evaluate_fitness(g, cfg.fitness, ectx, cfg.ppo,
                                cfg.fitness.rl_steps_short, (0,))

    l_hat = lipschitz_probe(genome, fitness_fn, n_pairs=cfg.probe_pairs,
                            radius=cfg.probe_radius, pert_sd=cfg.probe_sd,
                            seed=cfg.seed)
    report = {
        "scenario": cfg.scenario,
        "age": float(cfg.ages[0]),
        "seed": int(cfg.seed),
        "n_pairs": int(cfg.probe_pairs),
        "radius": float(cfg.probe_radius),
        "pert_sd": float(cfg.probe_sd),
        "rl_steps": int(cfg.fitness.rl_steps_short),
        "genome": cfg.genome or "handcrafted",
        "l_hat": float(l_hat),
    }
    write_json_report(
        out / "reports" / f"lipschitz_{cfg.scenario}_seed{cfg.seed}.json", report)
    return report
