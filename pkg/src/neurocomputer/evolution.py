"""Fitness scoring and the evolutionary training loop.

Episodes are scored step-wise against oracle traces; a single scalar per
minibatch drives a fixed-variance natural-gradient update over the flat
genome, shaped by zero-sum log-rank utilities. Training follows a level
curriculum (level = fully explored search-tree nodes) with three supports:
resampling of earlier levels, a FIFO buffer of recently failed tasks
("bad memories"), and automatic restarts of stuck lineages.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .domains import feasible_levels, oracle_trace, sample_task
from .engine import ScoredEpisode

MAX_FITNESS = {"search": 120.0, "plan": 150.0}
SEARCH_NOP_BONUS = 20.0
PLAN_BONUS_SCALE = 50.0


class LineageDiverged(RuntimeError):
    """Genome left the finite range during an update."""


@dataclass(frozen=True)
class NesConfig:
    population: int = 20
    sigma: float = 0.1
    learning_rate: float = 0.01
    weight_decay: float = 0.9995
    minibatch: int = 20
    restart_window: int = 2500
    budget: int = 10_000
    max_level: int = 21
    solve_streak: int = 250
    buffer_capacity: int = 200
    buffer_share: float = 0.25
    old_level_share: float = 0.20
    buffer_clear_streak: int = 10
    restarts_enabled: bool = True
    bad_memories_enabled: bool = True


@dataclass
class FitnessReport:
    f: float
    f_explore: np.ndarray
    f_bonus: np.ndarray
    first_mistakes: list
    is_max: bool
    kind: str

    @property
    def per_sample(self) -> np.ndarray:
        return self.f_explore + self.f_bonus


def _explore_fitness(ep: ScoredEpisode) -> float:
    t_e = len(ep.explore_op_hits)
    if t_e == 0:
        return 0.0
    total = sum(ep.explore_op_hits) + 2 * sum(ep.explore_dm_hits)
    # single division keeps perfect episodes at exactly 100.0
    return 100.0 * total / (3 * t_e)


def fitness_search(episodes: list[ScoredEpisode]) -> FitnessReport:
    if not episodes:
        raise ValueError("empty episode batch")
    f_e = np.array([_explore_fitness(ep) for ep in episodes])
    f_b = np.array([SEARCH_NOP_BONUS if ep.post_nop else 0.0 for ep in episodes])
    mean_fe = float(f_e.sum() / len(episodes))
    f = mean_fe if mean_fe < 100.0 else float((f_e + f_b).sum() / len(episodes))
    return FitnessReport(f, f_e, f_b, [ep.first_mistake for ep in episodes],
                         f == MAX_FITNESS["search"], "search")


def fitness_plan(episodes: list[ScoredEpisode]) -> FitnessReport:
    if not episodes:
        raise ValueError("empty episode batch")
    f_e = np.array([_explore_fitness(ep) for ep in episodes])
    f_b = np.zeros(len(episodes))
    for i, ep in enumerate(episodes):
        t_b = len(ep.backtrack_nop_hits)
        if t_b == 0:
            continue
        total = sum(ep.backtrack_nop_hits) + 2 * sum(ep.backtrack_dm_hits)
        f_b[i] = PLAN_BONUS_SCALE * total / (3 * t_b)
    mean_fe = float(f_e.sum() / len(episodes))
    f = mean_fe if mean_fe < 100.0 else float((f_e + f_b).sum() / len(episodes))
    return FitnessReport(f, f_e, f_b, [ep.first_mistake for ep in episodes],
                         f == MAX_FITNESS["plan"], "plan")


def fitness(episodes: list[ScoredEpisode], kind: str) -> FitnessReport:
    return fitness_search(episodes) if kind == "search" else fitness_plan(episodes)


def rank_transform(fitnesses) -> np.ndarray:
    """Zero-sum utilities that depend on fitness only through rank.

    Log-rank shaping: the best rank gets the largest utility, sub-median
    ranks get the common floor, ties share the average of their span.
    """
    f = np.asarray(fitnesses, dtype=float)
    p = f.size
    if p < 2:
        raise ValueError("need at least two fitness values")
    base = np.maximum(0.0, np.log(p / 2 + 1) - np.log(np.arange(1, p + 1)))
    base = base / base.sum() - 1.0 / p
    order = np.argsort(-f, kind="stable")
    utilities = np.empty(p)
    i = 0
    while i < p:
        j = i
        while j + 1 < p and f[order[j + 1]] == f[order[i]]:
            j += 1
        utilities[order[i:j + 1]] = base[i:j + 1].mean()
        i = j + 1
    return utilities


def nes_update(genome: np.ndarray, fitnesses, perturbations: np.ndarray,
               config: NesConfig) -> np.ndarray:
    """One natural-gradient step followed by weight decay."""
    utilities = rank_transform(fitnesses)
    scale = config.learning_rate / (config.population * config.sigma)
    new = (genome + scale * (utilities @ perturbations)) * config.weight_decay
    if not np.all(np.isfinite(new)):
        raise LineageDiverged("non-finite genome after update")
    return new


def nes_iteration(genome: np.ndarray, evaluate, kind: str, config: NesConfig,
                  rng: np.random.Generator):
    """Evaluate the centre; skip learning entirely at maximum fitness,
    otherwise update from a freshly drawn population.

    ``evaluate`` maps a genome vector to a FitnessReport on the (shared)
    minibatch. Returns (new genome, centre report, population fitnesses).
    """
    center = evaluate(genome)
    if center.is_max:
        return genome, center, None
    eps = rng.standard_normal((config.population, genome.size))
    pop_fitness = np.array([evaluate(genome + config.sigma * eps[i]).f
                            for i in range(config.population)])
    return nes_update(genome, pop_fitness, eps, config), center, pop_fitness


# ---- curriculum ---------------------------------------------------------------


@dataclass
class CurriculumState:
    level: int = 1
    streak: int = 0
    iteration: int = 0
    lineage: int = 0
    level_start_iteration: int = 0
    level_max_seen: bool = False
    buffer: deque = field(default_factory=lambda: deque(maxlen=200))


class Curriculum:
    """Minibatch composition plus level/restart bookkeeping.

    Composition order: the bad-memories share first (when the buffer is
    non-empty), the previous-level share second (when past level 1), and
    fresh tasks of the current level fill the remainder. Past the last
    curriculum level the "current level" becomes a uniform draw over all
    levels (the evaluation level).
    """

    def __init__(self, config: NesConfig, domain, kind: str):
        self.config = config
        self.domain = domain
        self.kind = kind
        self.state = CurriculumState(
            buffer=deque(maxlen=config.buffer_capacity))
        self._levels = (feasible_levels(domain, config.max_level)
                        if domain is not None
                        else list(range(1, config.max_level + 1)))
        self.state.level = self._levels[0]

    def _sample_level(self, rng, level: int):
        return sample_task(rng, level, self.domain, kind=self.kind)

    def _advance_level(self) -> None:
        later = [lvl for lvl in self._levels if lvl > self.state.level]
        self.state.level = later[0] if later else self.config.max_level + 1

    def current_level_draw(self, rng) -> int:
        if self.state.level > self.config.max_level:
            return self._levels[int(rng.integers(0, len(self._levels)))]
        return self.state.level

    def next_minibatch(self, rng: np.random.Generator) -> list:
        cfg = self.config
        n = cfg.minibatch
        n_buffer = (round(cfg.buffer_share * n)
                    if (self.state.buffer and cfg.bad_memories_enabled) else 0)
        earlier = [lvl for lvl in self._levels if lvl < self.state.level]
        n_old = round(cfg.old_level_share * n) if earlier else 0
        n_old = min(n_old, n - n_buffer)
        batch = []
        for _ in range(n_buffer):
            batch.append(self.state.buffer[int(rng.integers(0, len(self.state.buffer)))])
        for _ in range(n_old):
            batch.append(self._sample_level(rng, earlier[int(rng.integers(0, len(earlier)))]))
        while len(batch) < n:
            batch.append(self._sample_level(rng, self.current_level_draw(rng)))
        return batch

    def observe(self, center: FitnessReport, batch, center_episodes) -> list:
        """Advance counters after one iteration; returns emitted events."""
        cfg = self.config
        st = self.state
        st.iteration += 1
        events = []
        if center.is_max:
            st.streak += 1
            st.level_max_seen = True
            if st.streak == cfg.buffer_clear_streak and st.buffer:
                st.buffer.clear()
                events.append({"type": "buffer_cleared", "iteration": st.iteration,
                               "level": st.level})
            if st.streak == cfg.solve_streak:
                events.append({"type": "level_solved", "iteration": st.iteration,
                               "level": st.level})
                self._advance_level()
                st.streak = 0
                st.level_start_iteration = st.iteration
                st.level_max_seen = False
                if st.level == cfg.max_level + 1:
                    events.append({"type": "evaluation_level", "iteration": st.iteration,
                                   "level": st.level})
        else:
            st.streak = 0
            if cfg.bad_memories_enabled:
                for task, ep in zip(batch, center_episodes):
                    if not ep.perfect:
                        st.buffer.append(task)
        if (cfg.restarts_enabled and not st.level_max_seen
                and st.iteration - st.level_start_iteration >= cfg.restart_window):
            events.append({"type": "restart", "iteration": st.iteration,
                           "level": st.level, "lineage": st.lineage})
        if st.iteration >= cfg.budget:
            events.append({"type": "budget_exhausted", "iteration": st.iteration,
                           "level": st.level})
        return events

    def restart(self) -> None:
        st = self.state
        st.lineage += 1
        st.level = self._levels[0]
        st.streak = 0
        st.level_start_iteration = st.iteration
        st.level_max_seen = False
        st.buffer.clear()


# ---- full training loop ----------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    lineage: int
    level: int
    center_fitness: float
    updated: bool
    streak: int
    buffer_size: int
    pop_mean: float | None = None
    pop_max: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "lineage": self.lineage,
            "level": self.level,
            "center_fitness": self.center_fitness,
            "updated": self.updated,
            "streak": self.streak,
            "buffer_size": self.buffer_size,
            "pop_mean": self.pop_mean,
            "pop_max": self.pop_max,
        }


@dataclass
class TrainResult:
    genome: np.ndarray
    records: list
    events: list
    curriculum: Curriculum
    checkpoints: dict  # level -> genome vector


def init_genome(rng: np.random.Generator, length: int, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=length)


def train_run(engine, policy, kind: str, config: NesConfig, seed: int,
              max_iterations: int | None = None, stop_when=None,
              on_iteration=None) -> TrainResult:
    """Run the curriculum/NES loop until the budget (or an early stop).

    ``stop_when`` (curriculum, record) -> bool allows callers to stop as
    soon as some condition holds, e.g. a target level got solved.
    """
    rng = np.random.default_rng(seed)
    domain = engine.domain
    curriculum = Curriculum(config, domain, kind)
    genome = init_genome(rng, policy.genome_length)
    records: list[IterationRecord] = []
    events: list[dict] = []
    checkpoints: dict = {}
    budget = config.budget if max_iterations is None else min(config.budget,
                                                              max_iterations)

    def evaluate(genome_vec, batch_traces):
        policy.set_genome(genome_vec)
        episodes = []
        for task, trace in batch_traces:
            res = engine.run_episode(policy, task, mode="teacher_scored", trace=trace)
            episodes.append(res.score)
        return fitness(episodes, kind), episodes

    while curriculum.state.iteration < budget:
        batch = curriculum.next_minibatch(rng)
        batch_traces = [(t, oracle_trace(domain, t)) for t in batch]
        center_report, center_episodes = evaluate(genome, batch_traces)
        updated = False
        pop_fitness = None
        if not center_report.is_max:
            eps = rng.standard_normal((config.population, genome.size))
            pop_fitness = np.array([
                evaluate(genome + config.sigma * eps[i], batch_traces)[0].f
                for i in range(config.population)
            ])
            try:
                genome = nes_update(genome, pop_fitness, eps, config)
            except LineageDiverged:
                events.append({"type": "diverged",
                               "iteration": curriculum.state.iteration + 1,
                               "level": curriculum.state.level})
                genome = init_genome(rng, policy.genome_length)
                curriculum.restart()
            updated = True
        new_events = curriculum.observe(center_report, batch, center_episodes)
        record = IterationRecord(
            iteration=curriculum.state.iteration,
            lineage=curriculum.state.lineage,
            level=curriculum.state.level,
            center_fitness=center_report.f,
            updated=updated,
            streak=curriculum.state.streak,
            buffer_size=len(curriculum.state.buffer),
            pop_mean=float(pop_fitness.mean()) if pop_fitness is not None else None,
            pop_max=float(pop_fitness.max()) if pop_fitness is not None else None,
        )
        records.append(record)
        if on_iteration is not None:
            on_iteration(record)
        for event in new_events:
            events.append(event)
            if event["type"] == "level_solved":
                checkpoints[event["level"]] = genome.copy()
            elif event["type"] == "restart":
                genome = init_genome(rng, policy.genome_length)
                curriculum.restart()
        if stop_when is not None and stop_when(curriculum, record):
            break
    policy.set_genome(genome)
    return TrainResult(genome, records, events, curriculum, checkpoints)
