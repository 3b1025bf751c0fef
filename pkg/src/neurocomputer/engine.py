"""The computation loop: algorithmic modules driving memory and data modules.

One step runs Input -> Controller -> interface map -> free write (->
optional second free write) -> constrained write -> read -> operation
choice -> Transform_D -> ALU -> Output, and the produced data word becomes
the next step's input. Episodes either follow an oracle trace until the
first mismatch (teacher scoring, used for fitness) or run autonomously
until the model signals termination.

`ReferenceProgram` is a hand-scripted policy over exactly the same memory
primitives: it keeps an operation counter in the computational word of the
row under exploration (via the constrained head), walks the temporal chain
to the next frontier node, and after the goal is recognized walks the usage
chain backwards emitting `nop` - a constructive proof that the architecture
expresses search plus backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_modules import INITIAL_PHASE, DataModuleSet, PhaseSignals, op_onehot
from .domains import NOP, TargetTrace, TaskInstance, word_to_bits
from .memory import (
    COMP_WIDTH,
    CONTENT,
    TEMPORAL_FWD,
    USAGE_BWD,
    USAGE_FWD,
    DualMemory,
    InterfaceVector,
)
from .nets import DenseNet, GenomeView, LayerSpec

N_PHASE = 3
N_CONTROLLER = 16
CONTROLLER_IN = N_PHASE + COMP_WIDTH + 5  # c_i, previous c_m, previous c_f
INTERFACE_IN = N_CONTROLLER + N_PHASE
TRANSFORM_C_IN = N_CONTROLLER + COMP_WIDTH + N_PHASE


@dataclass(frozen=True)
class EngineConfig:
    constrained_head: bool = True
    usage_linkage: bool = True
    hard_attention: bool = True
    extra_free_head: bool = False
    max_steps: int = 20_000


@dataclass
class ControlBundle:
    """Control-stream values carried between steps."""

    c_i: np.ndarray
    c_c: np.ndarray
    c_m: np.ndarray
    c_f: np.ndarray
    c_a: int = 0
    c_o: int = 0

    @staticmethod
    def initial() -> "ControlBundle":
        return ControlBundle(np.zeros(N_PHASE), np.zeros(N_CONTROLLER),
                             np.zeros(COMP_WIDTH), np.zeros(5))


@dataclass(frozen=True)
class StepRecord:
    step: int
    location: int
    attention: np.ndarray
    op: int
    d_m: np.ndarray
    d_o: np.ndarray
    phase: tuple

    def to_json_dict(self) -> dict:
        def bits(w):
            arr = np.asarray(w)
            if arr.dtype == np.uint8:
                return word_to_bits(arr)
            return [float(v) for v in arr]
        return {
            "step": self.step,
            "location": self.location,
            "attention": [float(a) for a in self.attention],
            "op": self.op,
            "d_m": bits(self.d_m),
            "d_o": bits(self.d_o),
            "phase": list(self.phase),
        }


def build_algorithmic_modules() -> GenomeView:
    """Controller, interface map, and operation selector as one genome."""
    controller = DenseNet([LayerSpec(CONTROLLER_IN, N_CONTROLLER, "tanh")])
    interface = DenseNet([LayerSpec(INTERFACE_IN, 29, "linear")])
    transform_c = DenseNet([LayerSpec(TRANSFORM_C_IN, 5, "argmax_onehot")])
    return GenomeView([("controller", controller), ("interface", interface),
                       ("transform_c", transform_c)])


class GenomePolicy:
    """Algorithmic modules backed by dense nets over a flat genome."""

    def __init__(self, view: GenomeView | None = None):
        self.view = view or build_algorithmic_modules()
        mods = dict(self.view.modules)
        self.controller = mods["controller"]
        self.interface_net = mods["interface"]
        self.transform_c = mods["transform_c"]

    @property
    def genome_length(self) -> int:
        return self.view.length

    def get_genome(self) -> np.ndarray:
        return self.view.flatten()

    def set_genome(self, genome: np.ndarray) -> None:
        self.view.load(genome)

    def act(self, c_i, c_m_prev, c_f_prev):
        c_c = self.controller.forward(np.concatenate([c_i, c_m_prev, c_f_prev]))
        iface_vec = self.interface_net.forward(np.concatenate([c_c, c_i]))
        return c_c, InterfaceVector.from_vector(iface_vec)

    def choose_op(self, c_c, c_m, c_i) -> int:
        onehot = self.transform_c.forward(np.concatenate([c_c, c_m, c_i]))
        return int(np.argmax(onehot))


class ReferenceProgram:
    """Scripted breadth-first exploration with usage-chain backtracking.

    The computational word of the row under exploration carries a marker
    bit plus a 2-bit operation counter. Each step re-reads that row by
    content until the counter reaches the last operation, then the marker
    is cleared and the temporal link moves to the next frontier row. Once
    the goal has been recognized (second phase signal high), reads switch
    to the usage linkage: forward once to fetch the just-stored goal row,
    then backward along write parents, emitting `nop` throughout.
    """

    MARKER = 0  # comp-word bit indices
    COUNT_LO = 1
    COUNT_HI = 2
    LOGIT = 20.0

    def _mode_logits(self, mode: int) -> np.ndarray:
        logits = np.zeros(5)
        logits[mode] = self.LOGIT
        return logits

    def _counter_word(self, count: int) -> np.ndarray:
        word = np.zeros(COMP_WIDTH)
        word[self.MARKER] = 1.0
        word[self.COUNT_LO] = count & 1
        word[self.COUNT_HI] = (count >> 1) & 1
        return word

    def act(self, c_i, c_m_prev, c_f_prev):
        key = np.zeros(COMP_WIDTH)
        key[self.MARKER] = 1.0
        free_word = np.zeros(COMP_WIDTH)
        goal_found = c_i[1] > 0.5
        if not goal_found:
            marked = c_m_prev[self.MARKER] > 0.5
            count = (int(round(c_m_prev[self.COUNT_LO]))
                     + 2 * int(round(c_m_prev[self.COUNT_HI]))) if marked else 0
            if marked and count == 3:
                # node fully explored: clear it and follow the frontier
                constrained = np.zeros(COMP_WIDTH)
                mode = TEMPORAL_FWD
            else:
                constrained = self._counter_word(count + 1)
                mode = CONTENT
        else:
            constrained = np.zeros(COMP_WIDTH)
            was_nop = c_f_prev[NOP] > 0.5
            mode = USAGE_BWD if was_nop else USAGE_FWD
        iface = InterfaceVector(key, self._mode_logits(mode), free_word, constrained)
        return np.zeros(N_CONTROLLER), iface

    def choose_op(self, c_c, c_m, c_i) -> int:
        if c_i[1] > 0.5:
            return NOP
        return int(round(c_m[self.COUNT_LO])) + 2 * int(round(c_m[self.COUNT_HI]))


@dataclass
class ScoredEpisode:
    """Step-wise hits of one episode against its oracle trace."""

    kind: str
    trace_t_explore: int
    trace_t_backtrack: int
    explore_op_hits: list = field(default_factory=list)
    explore_dm_hits: list = field(default_factory=list)
    post_nop: bool | None = None
    backtrack_nop_hits: list = field(default_factory=list)
    backtrack_dm_hits: list = field(default_factory=list)
    first_mistake: int | None = None

    @property
    def perfect(self) -> bool:
        if self.first_mistake is not None:
            return False
        if len(self.explore_op_hits) < self.trace_t_explore:
            return False
        if self.kind == "search":
            return self.post_nop is True
        return len(self.backtrack_nop_hits) == self.trace_t_backtrack


class TraceScorer:
    """Feeds one (d_m, op) pair per step; says when the episode is over."""

    CONTINUE, DONE = "continue", "done"

    def __init__(self, trace: TargetTrace):
        self.trace = trace
        self.score = ScoredEpisode(trace.kind, trace.t_explore, trace.t_backtrack)

    def observe(self, step: int, d_m, op: int) -> str:
        trace, score = self.trace, self.score
        if step <= trace.t_explore:
            word, want_op = trace.explore[step - 1]
            op_ok = op == want_op
            dm_ok = bool(np.array_equal(d_m, word))
            score.explore_op_hits.append(op_ok)
            score.explore_dm_hits.append(dm_ok)
            if not (op_ok and dm_ok):
                score.first_mistake = step
                return self.DONE
            return self.CONTINUE
        if trace.kind == "search":
            score.post_nop = op == NOP
            if not score.post_nop:
                score.first_mistake = step
            return self.DONE
        j = step - trace.t_explore  # 1-based backtrack index
        nop_ok = op == NOP
        dm_ok = bool(np.array_equal(d_m, trace.backtrack[j - 1]))
        score.backtrack_nop_hits.append(nop_ok)
        score.backtrack_dm_hits.append(dm_ok)
        if not (nop_ok and dm_ok):
            score.first_mistake = step
            return self.DONE
        return self.DONE if j == trace.t_backtrack else self.CONTINUE


@dataclass
class EpisodeResult:
    termination: str  # "terminated" | "goal_nop" | "mismatch" | "trace_end" | "step_limit"
    steps: int
    records: list | None = None
    score: ScoredEpisode | None = None

    def exact_match(self, trace: TargetTrace) -> bool:
        """Did an autonomous run reproduce the trace and stop by itself?"""
        if self.score is None or not self.score.perfect:
            return False
        if self.steps != trace.total_steps:
            return False
        return self.termination == ("goal_nop" if trace.kind == "search" else "terminated")


class ComputerEngine:
    """Runs episodes of one policy on one domain's data modules."""

    def __init__(self, domain, modules: DataModuleSet, config: EngineConfig | None = None):
        self.domain = domain
        self.modules = modules
        self.config = config or EngineConfig()

    def run_episode(self, policy, task: TaskInstance, mode: str = "autonomous",
                    trace: TargetTrace | None = None,
                    record_steps: bool = False) -> EpisodeResult:
        if mode not in ("teacher_scored", "autonomous"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "teacher_scored" and trace is None:
            raise ValueError("teacher_scored episodes need the oracle trace")
        cfg = self.config
        memory = DualMemory(self.domain.word_width, soft_data=not cfg.hard_attention)
        scorer = TraceScorer(trace) if trace is not None else None
        score_obj = scorer.score if scorer is not None else None
        records = [] if record_steps else None

        d_e = task.goal
        x = task.start
        phase = INITIAL_PHASE
        c_m_prev = np.zeros(COMP_WIDTH)
        c_f_prev = np.zeros(5)
        step_cap = trace.total_steps if mode == "teacher_scored" else cfg.max_steps
        step_cap = min(step_cap, cfg.max_steps)

        steps = 0
        termination = "step_limit"
        while steps < step_cap:
            step = steps + 1
            c_i, d_i, phase = self.modules.input(d_e, x, phase)
            if phase.terminated:
                termination = "terminated"
                break
            c_c, iface = policy.act(c_i, c_m_prev, c_f_prev)
            memory.allocate_and_write(d_i, iface.write_word_free)
            if cfg.extra_free_head:
                # the constrained slot doubles as the second head's word
                memory.allocate_and_write(d_i, iface.write_word_constrained)
            if cfg.constrained_head:
                memory.constrained_write(iface.write_word_constrained)
            read = memory.read_attend(iface, hard=cfg.hard_attention,
                                      usage_linkage=cfg.usage_linkage)
            op = policy.choose_op(c_c, read.comp_word, c_i)
            c_f = op_onehot(op)
            d_f = self.modules.transform_d(read.data_word)
            c_a, d_a = self.modules.alu(c_f, d_f)
            c_o, d_o = self.modules.output(c_a, d_a, read.data_word)
            steps = step

            if records is not None:
                records.append(StepRecord(step, read.location, read.attention, op,
                                          read.data_word, d_o,
                                          (phase.searching, phase.goal_found,
                                           phase.terminated)))
            if scorer is not None:
                verdict = scorer.observe(step, read.data_word, op)
                if verdict == TraceScorer.DONE:
                    if mode == "teacher_scored" or scorer.score.first_mistake is not None:
                        termination = ("mismatch" if scorer.score.first_mistake is not None
                                       else "trace_end")
                        break
                    # autonomous keeps running so self-termination is observed
                    scorer = None

            if (task.kind == "search" and op == NOP
                    and np.array_equal(d_o, task.goal)):
                termination = "goal_nop"
                break

            x = d_o
            c_m_prev = read.comp_word
            c_f_prev = c_f
            if phase.goal_found and task.kind == "plan":
                d_e = task.start

        return EpisodeResult(termination, steps, records, score_obj)


def records_to_jsonl(records) -> str:
    import json
    return "\n".join(json.dumps(r.to_json_dict()) for r in records)
