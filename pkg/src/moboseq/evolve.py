"""Genetic optimization over feasible sequences.

``ga_optimize`` and ``ga_batch_optimize`` maximize a fitness (the acquisition
value inside the BO loop); individuals of the batch variant are q-tuples of
sequences. ``ga_sum_baseline`` and ``nsga2`` run directly against an
:class:`~moboseq.oracle.OracleBank` under its call budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence as Seq

import numpy as np

from .errors import BudgetExhausted
from .oracle import OracleBank
from .pareto import crowding_distance, non_dominated_sort
from .runlog import RunLog
from .seqspace import MutationSpace, mutate, random_member, single_point_crossover

Individual = tuple  # q sequences


@dataclass
class GaConfig:
    population_size: int = 50
    generations: int = 20
    tournament_size: int = 3
    crossover_rate: float = 0.7
    mutation_prob: float = 0.1
    batch_crossover_rate: float = 0.7
    init_perturb_prob: float = 0.05
    elites: int = 1

    def __post_init__(self):
        for name in ("crossover_rate", "mutation_prob", "batch_crossover_rate", "init_perturb_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("population_size", "generations", "tournament_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0 <= self.elites < self.population_size:
            raise ValueError("elites must be in [0, population_size)")


@dataclass
class GaResult:
    best: Individual | str
    best_fitness: float
    population: list
    fitness: np.ndarray
    history: list[float] = field(default_factory=list)  # best-so-far after init and each generation
    n_evaluated: int = 0


def _tournament(fitness: np.ndarray, size: int, rng: np.random.Generator) -> int:
    """Index of the fittest of ``size`` individuals drawn with replacement."""
    picks = rng.integers(len(fitness), size=size)
    return int(picks[np.argmax(fitness[picks])])


def _offspring(
    p1: Individual, p2: Individual, space: MutationSpace, cfg: GaConfig, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    q = len(p1)
    if rng.random() < cfg.crossover_rate:
        pairs = [single_point_crossover(a, b, space, rng) for a, b in zip(p1, p2)]
        c1, c2 = tuple(a for a, _ in pairs), tuple(b for _, b in pairs)
    else:
        c1, c2 = p1, p2
    if q > 1 and rng.random() < cfg.batch_crossover_rate:
        cut = int(rng.integers(1, q))
        c1, c2 = c1[:cut] + c2[cut:], c2[:cut] + c1[cut:]
    c1 = tuple(mutate(s, space, cfg.mutation_prob, rng) for s in c1)
    c2 = tuple(mutate(s, space, cfg.mutation_prob, rng) for s in c2)
    return c1, c2


def _run_ga(
    evaluate: Callable[[list[Individual]], np.ndarray],
    space: MutationSpace,
    cfg: GaConfig,
    q: int,
    seed_pool: Seq[str],
    rng: np.random.Generator,
    seed_weights: Seq[float] | None = None,
) -> GaResult:
    if len(seed_pool) == 0:
        raise ValueError("seed_pool must not be empty")
    if q < 1:
        raise ValueError("q must be at least 1")
    cache: dict[Individual, float] = {}
    best: list = [None, -math.inf]

    def fitness_of(pop: list[Individual]) -> np.ndarray:
        new = []
        seen = set()
        for ind in pop:
            if ind not in cache and ind not in seen:
                seen.add(ind)
                new.append(ind)
        if new:
            vals = np.asarray(evaluate(new), dtype=float)
            for ind, v in zip(new, vals):
                v = float(v)
                cache[ind] = v
                if v > best[1] or best[0] is None:
                    best[0], best[1] = ind, v
        return np.array([cache[ind] for ind in pop])

    P = cfg.population_size
    p = None
    if seed_weights is not None:
        w = np.asarray(seed_weights, dtype=float)
        p = w / w.sum()
    picks = rng.choice(len(seed_pool), size=(P, q), p=p)
    population = [tuple(mutate(seed_pool[i], space, cfg.init_perturb_prob, rng) for i in row) for row in picks]
    fit = fitness_of(population)
    history = [best[1]]
    for _ in range(cfg.generations):
        order = np.argsort(-fit, kind="stable")
        nxt = [population[i] for i in order[: cfg.elites]]
        while len(nxt) < P:
            a = population[_tournament(fit, cfg.tournament_size, rng)]
            b = population[_tournament(fit, cfg.tournament_size, rng)]
            c1, c2 = _offspring(a, b, space, cfg, rng)
            nxt.append(c1)
            if len(nxt) < P:
                nxt.append(c2)
        population = nxt
        fit = fitness_of(population)
        history.append(best[1])
    return GaResult(best[0], best[1], population, fit, history, len(cache))


def ga_batch_optimize(
    batch_fitness: Callable,
    space: MutationSpace,
    cfg: GaConfig,
    q: int,
    seed_pool: Seq[str],
    rng: np.random.Generator,
    seed_weights: Seq[float] | None = None,
    vectorized: bool = False,
) -> GaResult:
    """Evolve q-tuples of sequences. With ``vectorized`` the fitness receives
    a list of batches and returns an array; otherwise it scores one batch."""
    evaluate = batch_fitness if vectorized else (lambda pop: [batch_fitness(b) for b in pop])
    return _run_ga(evaluate, space, cfg, q, seed_pool, rng, seed_weights)


def ga_optimize(
    fitness: Callable,
    space: MutationSpace,
    cfg: GaConfig,
    seed_pool: Seq[str],
    rng: np.random.Generator,
    seed_weights: Seq[float] | None = None,
    vectorized: bool = False,
) -> GaResult:
    """Single-sequence GA; ``best`` and ``population`` hold plain sequences."""
    if vectorized:
        evaluate = lambda pop: fitness([b[0] for b in pop])  # noqa: E731
    else:
        evaluate = lambda pop: [fitness(b[0]) for b in pop]  # noqa: E731
    res = _run_ga(evaluate, space, cfg, 1, seed_pool, rng, seed_weights)
    res.best = res.best[0]
    res.population = [b[0] for b in res.population]
    return res


# ---------------------------------------------------------------------------
# Oracle-driven baselines
# ---------------------------------------------------------------------------


def normalized_sum(Y: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Sum over objectives of (y - min) / (max - min); a zero span contributes 0."""
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.sum(np.where(span > 0, (Y - lo) / safe, 0.0), axis=-1)


def _spend_limit(bank: OracleBank, budget: int | None, start: int) -> float:
    limit = bank.remaining
    if budget is not None:
        limit = min(limit, budget - (bank.spent - start))
    return limit


def _truncate_to_budget(children: list[str], bank: OracleBank, limit: float) -> list[str]:
    """Longest prefix of ``children`` whose novel sequences fit in ``limit`` calls."""
    seen = set()
    out = []
    for s in children:
        if not bank.is_cached(s) and s not in seen:
            if len(seen) >= limit:
                break
            seen.add(s)
        out.append(s)
    return out


def _vary(parents: list[str], pick: Callable[[], int], n: int, space: MutationSpace, cfg: GaConfig,
          rng: np.random.Generator) -> list[str]:
    out: list[str] = []
    while len(out) < n:
        a, b = parents[pick()], parents[pick()]
        c1, c2 = _offspring((a,), (b,), space, cfg, rng)
        out.append(c1[0])
        if len(out) < n:
            out.append(c2[0])
    return out


def _immigrants(children: list[str], bank: OracleBank, space: MutationSpace, rng: np.random.Generator) -> list[str]:
    # a converged population can stop producing unscored sequences; inject fresh ones
    if bank.novel(children):
        return children
    for _ in range(100):
        s = random_member(space, rng)
        if not bank.is_cached(s):
            return children[:-1] + [s]
    raise BudgetExhausted("no unscored feasible sequence found")


def _start_pool(bank: OracleBank, initial: Seq[str] | None, P: int, space: MutationSpace,
                rng: np.random.Generator, budget: int | None, start: int) -> list[str]:
    if initial:
        return list(initial)
    limit = _spend_limit(bank, budget, start)
    pop = [random_member(space, rng) for _ in range(P)]
    pop = _truncate_to_budget(pop, bank, limit)
    bank.score(pop, phase="baseline")
    return pop


def ga_sum_baseline(
    bank: OracleBank,
    space: MutationSpace,
    cfg: GaConfig,
    budget: int | None,
    rng: np.random.Generator,
    initial: Seq[str] | None = None,
) -> RunLog:
    """Elitist GA whose fitness is the normalized sum of the objectives.

    ``budget`` caps the calls made by this function (``None``: the bank's
    remaining budget). ``initial`` are already-scored sequences used to form
    the first population; without them a random population is scored.
    """
    start = bank.spent
    P = cfg.population_size
    pool = _start_pool(bank, initial, P, space, rng, budget, start)
    Y = bank.score(pool)
    seen_scores = np.stack([e.scores for e in bank.call_log]) if bank.call_log else Y
    lo, hi = seen_scores.min(axis=0), seen_scores.max(axis=0)
    order = np.argsort(-normalized_sum(Y, lo, hi), kind="stable")
    population = [pool[i] for i in order[:P]]
    while _spend_limit(bank, budget, start) > 0:
        Y = bank.score(population)
        fit = normalized_sum(Y, lo, hi)
        elite = [population[i] for i in np.argsort(-fit, kind="stable")[: cfg.elites]]
        children = _vary(population, lambda: _tournament(fit, cfg.tournament_size, rng),
                         P - len(elite), space, cfg, rng)
        children = _immigrants(children, bank, space, rng)
        children = _truncate_to_budget(children, bank, _spend_limit(bank, budget, start))
        n_before = bank.spent
        bank.score(children, phase="baseline")
        if bank.spent > n_before:
            new = np.stack([e.scores for e in bank.call_log[n_before:]])
            lo, hi = np.minimum(lo, new.min(axis=0)), np.maximum(hi, new.max(axis=0))
        population = elite + children
        if len(population) < P:  # truncated final generation
            break
    return _log_from_bank(bank)


def _rank_and_crowding(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rank = np.empty(len(Y), dtype=int)
    crowd = np.empty(len(Y))
    for r, front in enumerate(non_dominated_sort(Y)):
        rank[front] = r
        crowd[front] = crowding_distance(Y[front])
    return rank, crowd


def _nsga_select(Y: np.ndarray, n: int) -> np.ndarray:
    """Indices of the ``n`` survivors: whole fronts by rank, the last one by descending crowding."""
    keep: list[int] = []
    for front in non_dominated_sort(Y):
        if len(keep) + len(front) <= n:
            keep.extend(front)
            continue
        d = crowding_distance(Y[front])
        order = np.argsort(-d, kind="stable")
        keep.extend(front[i] for i in order[: n - len(keep)])
        break
    return np.array(keep, dtype=int)


def _crowded_tournament(rank: np.ndarray, crowd: np.ndarray, size: int, rng: np.random.Generator) -> int:
    picks = rng.integers(len(rank), size=size)
    best = picks[0]
    for i in picks[1:]:
        if rank[i] < rank[best] or (rank[i] == rank[best] and crowd[i] > crowd[best]):
            best = i
    return int(best)


def nsga2(
    bank: OracleBank,
    space: MutationSpace,
    cfg: GaConfig,
    budget: int | None,
    rng: np.random.Generator,
    initial: Seq[str] | None = None,
) -> RunLog:
    """NSGA-II with this module's sequence operators, stopping at the budget."""
    start = bank.spent
    P = cfg.population_size
    pool = list(dict.fromkeys(_start_pool(bank, initial, P, space, rng, budget, start)))
    Y = bank.score(pool)
    sel = _nsga_select(Y, min(P, len(pool)))
    population = [pool[i] for i in sel]
    while _spend_limit(bank, budget, start) > 0:
        Y = bank.score(population)
        rank, crowd = _rank_and_crowding(Y)
        children = _vary(population, lambda: _crowded_tournament(rank, crowd, 2, rng), P, space, cfg, rng)
        children = _immigrants(children, bank, space, rng)
        children = _truncate_to_budget(children, bank, _spend_limit(bank, budget, start))
        bank.score(children, phase="baseline")
        merged = list(dict.fromkeys(population + children))
        Ym = bank.score(merged)
        population = [merged[i] for i in _nsga_select(Ym, min(P, len(merged)))]
        if len(children) < P:
            break
    return _log_from_bank(bank)


def _log_from_bank(bank: OracleBank) -> RunLog:
    log = RunLog(k=bank.k, status="complete")
    log.evaluations = list(bank.call_log)
    return log
