"""Outer evolutionary loop: fitness on learning outcomes, two-stage schedule.

A candidate genome is scored by decoding it, training a fresh PPO policy
against it, and evaluating the trained policy: J = mean task reward minus
gamma_d times mean terminal damage.  All candidates are first trained at a
short step budget; the top fraction is re-trained at the long budget with an
extra RL seed before ranks go to CMA-ES.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import env as twin
from .afferents import Genome, decode_genome
from .cmaes import ask, init_evolution, tell
from .errors import TrainingError, ValidationError
from .memory import MemoryStore
from .policy import PPOConfig, RewardParams
from .rollout import AgentSetup, evaluate_policy, rl_train
from .util import percentile_95, rng_for

__all__ = [
    "FitnessSpec",
    "EvalContext",
    "evaluate_fitness",
    "run_evolution",
    "lipschitz_probe",
]


@dataclass
class FitnessSpec:
    gamma_d: float = 1.0
    eval_episodes: int = 2
    eval_seeds: tuple = (901, 902)
    rl_steps_short: int = 2000
    rl_steps_long: int = 5000
    top_fraction: float = 0.25

    def __post_init__(self):
        if not self.gamma_d > 0:
            raise ValidationError("gamma_d must be positive")
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValidationError("top_fraction must lie in (0, 1]")


@dataclass
class EvalContext:
    """Fixed experimental conditions a genome is evaluated under."""

    m: int
    k: int
    scenario: twin.ScenarioConfig
    age: float
    mode: str = "base"
    reward: RewardParams = field(default_factory=RewardParams)
    use_memory: bool = False
    predictive: tuple | None = None  # (SafeStateModel, DiscrepancyParams)
    memory_bias: bool = False
    episode_len: int = twin.EPISODE_LEN
    dt: float = 1.0


def _genome_hash(genome: Genome) -> str:
    return hashlib.sha256(np.ascontiguousarray(genome.raw).tobytes()).hexdigest()


def evaluate_fitness(genome: Genome, spec: FitnessSpec, ectx: EvalContext,
                     ppo_cfg: PPOConfig, rl_steps: int, rl_seeds=(0,)) -> float:
    """J for one genome: train per RL seed, evaluate, average.

    Training failures yield -inf so CMA-ES ranks the candidate last.  The
    genome must come back bit-identical from training (bi-level separation).
    """
    before = _genome_hash(genome)
    scores = []
    for rl_seed in rl_seeds:
        array = decode_genome(genome, ectx.dt)
        memory = MemoryStore(scenario=ectx.scenario.name) if ectx.use_memory else None
        safe_model, disc = ectx.predictive if ectx.predictive is not None else (None, None)
        setup = AgentSetup(
            scenario=ectx.scenario, age=ectx.age, array=array, reward=ectx.reward,
            mode=ectx.mode, memory=memory, safe_model=safe_model, disc=disc,
            memory_bias=ectx.memory_bias, episode_len=ectx.episode_len,
        )
        cfg = replace(ppo_cfg, total_steps=int(rl_steps))
        try:
            result = rl_train(setup, cfg, int(rl_seed))
        except TrainingError:
            return float("-inf")
        stats = evaluate_policy(setup, result.policy, spec.eval_seeds, spec.eval_episodes)
        task = float(np.mean([s.task_mean for s in stats]))
        d_total = float(np.mean([s.d_total for s in stats]))
        scores.append(task - spec.gamma_d * d_total)
    if _genome_hash(genome) != before:
        raise ValidationError("genome mutated during fitness evaluation")
    return float(np.mean(scores))


def run_evolution(spec: FitnessSpec, generations: int, popsize: int,
                  ectx: EvalContext, ppo_cfg: PPOConfig, seed: int = 0,
                  sigma0: float = 0.5):
    """CMA-ES over genomes with the two-stage evaluation schedule.

    Returns (best genome seen, per-generation history of best/mean/std
    fitness).  RL seeds are shared across a generation's candidates so
    within-generation comparisons use common random numbers.
    """
    n = ectx.m * (ectx.k + 4)
    state = init_evolution(n, mean0=np.zeros(n), sigma0=sigma0,
                           popsize=popsize, seed=seed)
    best_genome = Genome(raw=state.mean.copy(), m=ectx.m, k=ectx.k)
    best_fitness = float("-inf")
    history = []
    for gen in range(generations):
        candidates = ask(state)
        genomes = [Genome(raw=c.copy(), m=ectx.m, k=ectx.k) for c in candidates]
        seed_a = int(rng_for(seed, 11, gen, 0).integers(0, 2**31))
        seed_b = int(rng_for(seed, 11, gen, 1).integers(0, 2**31))
        fits = np.array([
            evaluate_fitness(g, spec, ectx, ppo_cfg, spec.rl_steps_short, (seed_a,))
            for g in genomes
        ])
        top_k = int(np.ceil(spec.top_fraction * len(genomes)))
        top_idx = np.argsort(-fits, kind="stable")[:top_k]
        for i in top_idx:
            fits[i] = evaluate_fitness(
                genomes[i], spec, ectx, ppo_cfg, spec.rl_steps_long, (seed_a, seed_b)
            )
        gen_best = int(np.argmax(fits))
        if fits[gen_best] > best_fitness:
            best_fitness = float(fits[gen_best])
            best_genome = genomes[gen_best]
        finite = fits[np.isfinite(fits)]
        history.append({
            "generation": gen,
            "best": float(fits.max()),
            "mean": float(finite.mean()) if finite.size else float("-inf"),
            "std": float(finite.std()) if finite.size else 0.0,
        })
        state = tell(state, candidates, fits)
    return best_genome, history


def lipschitz_probe(genome: Genome, fitness_fn, n_pairs: int = 100,
                    radius: float = 0.1, pert_sd: float = 0.01,
                    seed: int = 0) -> float:
    """Empirical local-smoothness constant of a fitness function at a genome.

    Perturbs the raw vector with isotropic Gaussian noise, keeps pairs within
    the radius, and returns the 95th percentile of |J(g) - J(g')| / distance.
    fitness_fn maps a raw parameter vector to a scalar.
    """
    rng = rng_for(seed, 13)
    base = np.asarray(genome.raw, dtype=float)
    j0 = float(fitness_fn(base))
    ratios = []
    for _ in range(n_pairs):
        u = rng.normal(0.0, pert_sd, size=base.shape)
        dist = float(np.linalg.norm(u))
        if dist > radius or dist == 0.0:
            continue
        j1 = float(fitness_fn(base + u))
        ratios.append(abs(j0 - j1) / dist)
    if not ratios:
        raise ValidationError("no perturbation pairs within the radius")
    return percentile_95(ratios)
