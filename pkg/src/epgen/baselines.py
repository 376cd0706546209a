"""Comparison generators optimizing the same combined reward.

* RSF: best of ``trials`` uniformly random papers.
* GA: tournament selection, uniform crossover with duplicate repair,
  swap mutation, elitism of one.
* SA: single-swap neighbours with Metropolis acceptance and geometric cooling.

Each returns the best paper and a ``BaselineResult`` carrying the number of
reward evaluations spent, so runs can be budget-matched against the agent.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import ExamPaper, ExamSpec, QuestionBank
from .errors import ConfigError
from .objectives import NormalSpec, PaperScorer, RewardWeights
from .tracer import ProficiencyMatrix

METHODS = ("rsf", "ga", "sa")


@dataclass
class BaselineConfig:
    trials: int = 500
    population: int = 50
    generations: int = 100
    tournament: int = 3
    mutation_rate: float = 0.05
    sa_iterations: int = 5000
    sa_t0: float = 0.05
    sa_cooling: float = 0.999
    seed: int = 0

    def __post_init__(self):
        for name in ("trials", "population", "tournament", "sa_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.generations < 0:
            raise ConfigError("generations must be non-negative")
        if not 0.0 < self.sa_cooling < 1.0:
            raise ConfigError("sa_cooling must lie in (0, 1)")
        if not self.sa_t0 > 0:
            raise ConfigError("sa_t0 must be positive")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ConfigError("mutation_rate must lie in [0, 1]")

    def replace(self, **kw) -> "BaselineConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class BaselineResult:
    best_reward: float
    evaluations: int
    history: list[float] = field(default_factory=list)  # best-so-far per generation / iteration


def _check(bank, spec):
    if len(bank) < spec.n:
        raise ConfigError(f"bank has {len(bank)} questions, paper needs {spec.n}")


def _scorer(bank, proficiency, spec, weights, normal, scorer):
    if scorer is None:
        scorer = PaperScorer(bank, proficiency, spec, weights, normal)
    scorer.evaluations = 0
    return scorer


def _paper(questions, spec) -> ExamPaper:
    return ExamPaper(tuple(int(q) for q in questions), spec)


def random_papers(rng: np.random.Generator, n_bank: int, n: int, m: int) -> np.ndarray:
    """``m`` independent uniformly random n-subsets (sorted rows)."""
    keys = rng.random((m, n_bank))
    return np.sort(np.argpartition(keys, n - 1, axis=1)[:, :n], axis=1)


def rsf_generate(bank: QuestionBank, proficiency: ProficiencyMatrix, spec: ExamSpec,
                 weights: RewardWeights, cfg: BaselineConfig, normal: NormalSpec | None = None,
                 scorer: PaperScorer | None = None) -> tuple[ExamPaper, BaselineResult]:
    _check(bank, spec)
    scorer = _scorer(bank, proficiency, spec, weights, normal, scorer)
    rng = np.random.default_rng(cfg.seed)
    best_q, best_r = None, -np.inf
    history = []
    remaining = cfg.trials
    while remaining > 0:
        m = min(remaining, 512)
        papers = random_papers(rng, len(bank), spec.n, m)
        rewards = scorer.rewards(papers)
        i = int(np.argmax(rewards))
        if rewards[i] > best_r:
            best_q, best_r = papers[i].copy(), float(rewards[i])
        history.append(best_r)
        remaining -= m
    return _paper(best_q, spec), BaselineResult(best_r, scorer.evaluations, history)


def _repair(child: np.ndarray, parents: np.ndarray, n_bank: int, rng) -> np.ndarray:
    """Replace duplicate genes, preferring genes from either parent."""
    seen = set()
    dup_slots = []
    for i, q in enumerate(child):
        if q in seen:
            dup_slots.append(i)
        else:
            seen.add(int(q))
    if not dup_slots:
        return child
    pool = [int(q) for q in rng.permutation(parents.ravel()) if int(q) not in seen]
    for i in dup_slots:
        while pool and pool[-1] in seen:
            pool.pop()
        if pool:
            q = pool.pop()
        else:
            q = int(rng.integers(n_bank))
            while q in seen:
                q = int(rng.integers(n_bank))
        child[i] = q
        seen.add(q)
    return child


def _mutate(ind: np.ndarray, rate: float, n_bank: int, rng) -> np.ndarray:
    members = set(int(q) for q in ind)
    for i in np.flatnonzero(rng.random(len(ind)) < rate):
        q = int(rng.integers(n_bank))
        while q in members:
            q = int(rng.integers(n_bank))
        members.discard(int(ind[i]))
        ind[i] = q
        members.add(q)
    return ind


def ga_generate(bank: QuestionBank, proficiency: ProficiencyMatrix, spec: ExamSpec,
                weights: RewardWeights, cfg: BaselineConfig, normal: NormalSpec | None = None,
                scorer: PaperScorer | None = None) -> tuple[ExamPaper, BaselineResult]:
    _check(bank, spec)
    scorer = _scorer(bank, proficiency, spec, weights, normal, scorer)
    rng = np.random.default_rng(cfg.seed)
    n_bank = len(bank)
    pop = random_papers(rng, n_bank, spec.n, cfg.population)
    fit = scorer.rewards(pop)
    history = [float(fit.max())]
    for _ in range(cfg.generations):
        elite = int(np.argmax(fit))
        children = [pop[elite].copy()]
        while len(children) < cfg.population:
            parents = []
            for _ in range(2):
                contenders = rng.integers(cfg.population, size=cfg.tournament)
                parents.append(pop[contenders[int(np.argmax(fit[contenders]))]])
            parents = np.stack(parents)
            mask = rng.random(spec.n) < 0.5
            child = np.where(mask, parents[0], parents[1])
            child = _repair(child, parents, n_bank, rng)
            children.append(_mutate(child, cfg.mutation_rate, n_bank, rng))
        pop = np.stack(children)
        new_fit = np.empty(len(pop))
        new_fit[0] = fit[elite]
        new_fit[1:] = scorer.rewards(pop[1:])
        fit = new_fit
        history.append(float(fit.max()))
    best = int(np.argmax(fit))
    return _paper(pop[best], spec), BaselineResult(float(fit[best]), scorer.evaluations, history)


def acceptance_probability(delta: float, temperature: float) -> float:
    """Metropolis rule for maximization: improvements always, losses with exp(delta / T)."""
    if delta >= 0:
        return 1.0
    if temperature <= 0:
        return 0.0
    return math.exp(delta / temperature)


def sa_generate(bank: QuestionBank, proficiency: ProficiencyMatrix, spec: ExamSpec,
                weights: RewardWeights, cfg: BaselineConfig, normal: NormalSpec | None = None,
                scorer: PaperScorer | None = None) -> tuple[ExamPaper, BaselineResult]:
    _check(bank, spec)
    scorer = _scorer(bank, proficiency, spec, weights, normal, scorer)
    rng = np.random.default_rng(cfg.seed)
    n_bank = len(bank)
    current = random_papers(rng, n_bank, spec.n, 1)[0]
    in_paper = np.zeros(n_bank, dtype=bool)
    in_paper[current] = True
    cur_r = scorer.reward(current)
    best, best_r = current.copy(), cur_r
    temperature = cfg.sa_t0
    history = []
    for _ in range(cfg.sa_iterations):
        if n_bank > spec.n:
            slot = int(rng.integers(spec.n))
            q = int(rng.integers(n_bank))
            while in_paper[q]:
                q = int(rng.integers(n_bank))
            cand = current.copy()
            cand[slot] = q
            r = scorer.reward(cand)
            if rng.random() < acceptance_probability(r - cur_r, temperature):
                in_paper[current[slot]] = False
                in_paper[q] = True
                current, cur_r = cand, r
                if r > best_r:
                    best, best_r = cand.copy(), r
        temperature *= cfg.sa_cooling
        history.append(best_r)
    return _paper(best, spec), BaselineResult(best_r, scorer.evaluations, history)


def run_baseline(method: str, *args, **kwargs) -> tuple[ExamPaper, BaselineResult]:
    fns = {"rsf": rsf_generate, "ga": ga_generate, "sa": sa_generate}
    if method not in fns:
        raise ConfigError(f"unknown baseline {method!r}; choose from {', '.join(METHODS)}")
    return fns[method](*args, **kwargs)
