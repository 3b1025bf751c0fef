"""Task domains, their binary encodings, and the search/plan trace oracle.

Three domains share one interface: configurations are fixed-width binary
words, and five operations (four domain moves plus ``nop``) map words to
words. The trace oracle expands a FIFO search tree over those operations,
with no duplicate elimination, and derives the exact step-by-step targets
an episode is scored against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# cell codes shared by the grid domains
EMPTY, WALL, BOX, AGENT = 0, 1, 2, 3

UP, RIGHT, DOWN, LEFT, NOP = 0, 1, 2, 3, 4
N_OPS = 5
DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left

GRID_OP_NAMES = ("up", "right", "down", "left", "nop")
STACK_OP_NAMES = ("pos0", "pos1", "pos2", "pos3", "nop")


class MalformedWord(ValueError):
    """A data word that does not decode to a valid configuration."""


class UnreachableGoal(RuntimeError):
    """Search exceeded its node cap without producing the goal."""


class SamplingFailure(RuntimeError):
    """Rejection sampling could not hit the requested level within its cap."""


def word_key(word: np.ndarray) -> bytes:
    return word.tobytes()


def word_to_bits(word: np.ndarray) -> str:
    return "".join("1" if int(b) else "0" for b in word)


def bits_to_word(bits: str) -> np.ndarray:
    return np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")


@dataclass(frozen=True)
class GridWorld:
    """Sokoban-style grid; boundary ring is wall and exactly one agent."""

    height: int
    width: int
    cells: tuple  # row-major tuple of cell codes

    def cell_grid(self) -> np.ndarray:
        return np.array(self.cells, dtype=int).reshape(self.height, self.width)

    def validate(self) -> None:
        grid = self.cell_grid()
        if np.count_nonzero(grid == AGENT) != 1:
            raise MalformedWord("world must contain exactly one agent")
        ring = np.concatenate([grid[0], grid[-1], grid[1:-1, 0], grid[1:-1, -1]])
        if not np.all(ring == WALL):
            raise MalformedWord("boundary ring must be wall")


def identity_permutation() -> tuple[int, int, int, int]:
    return (0, 1, 2, 3)


def remap_representation(perm) -> tuple[int, int, int, int]:
    """Validate a cell-code permutation used to rewire the one-hot encoding."""
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [0, 1, 2, 3]:
        raise MalformedWord(f"not a permutation of the 4 cell codes: {perm}")
    return perm


class SokobanDomain:
    """Grid world with pushable boxes; words are 4-wide one-hot cells.

    ``perm`` remaps which one-hot slot represents each cell code, changing
    the data representation without touching the action semantics.
    """

    name = "sokoban"
    op_names = GRID_OP_NAMES
    passthrough = False  # data modules use local views
    op_inverse_rule = None  # pushes are not invertible, every level occurs

    def __init__(self, size: int = 6, perm=None):
        if size < 4:
            raise MalformedWord("grid size must be at least 4")
        self.height = self.width = size
        self.n_cells = size * size
        self.word_width = 4 * self.n_cells
        self.perm = remap_representation(perm) if perm is not None else identity_permutation()
        inv = [0] * 4
        for code, slot in enumerate(self.perm):
            inv[slot] = code
        self.inv_perm = tuple(inv)
        self._slot_of = np.array(self.perm)
        self._code_of = np.array(self.inv_perm)

    def with_permutation(self, perm) -> "SokobanDomain":
        return SokobanDomain(self.height, perm=perm)

    # ---- encoding

    def encode(self, world: GridWorld) -> np.ndarray:
        codes = np.array(world.cells, dtype=int)
        word = np.zeros(self.word_width, dtype=np.uint8)
        word[np.arange(self.n_cells) * 4 + self._slot_of[codes]] = 1
        return word

    def decode(self, word: np.ndarray) -> GridWorld:
        groups = np.asarray(word).reshape(self.n_cells, 4)
        if not np.all(groups.sum(axis=1) == 1):
            raise MalformedWord("cell group is not one-hot")
        codes = self._code_of[groups.argmax(axis=1)]
        return GridWorld(self.height, self.width, tuple(int(c) for c in codes))

    def cell_codes(self, word: np.ndarray) -> np.ndarray:
        """Cheap decode used on the hot paths; assumes one bit per cell group."""
        groups = word.reshape(self.n_cells, 4)
        return self._code_of[groups.argmax(axis=1)]

    def agent_cell(self, word: np.ndarray) -> int:
        hits = np.flatnonzero(word[self._slot_of[AGENT]::4])
        if hits.size != 1:
            raise MalformedWord(f"expected exactly one agent, found {hits.size}")
        return int(hits[0])

    def code_onehot(self, code: int) -> np.ndarray:
        out = np.zeros(4, dtype=np.uint8)
        out[self._slot_of[code]] = 1
        return out

    # ---- action semantics

    def apply_op(self, word: np.ndarray, op: int) -> np.ndarray:
        if op == NOP:
            return word
        a = self.agent_cell(word)
        r, c = divmod(a, self.width)
        dr, dc = DELTAS[op]
        tr, tc = r + dr, c + dc
        if not (0 <= tr < self.height and 0 <= tc < self.width):
            return word
        t = tr * self.width + tc
        t_code = self._code_of[word[4 * t:4 * t + 4].argmax()]
        new = None
        if t_code == EMPTY:
            new = word.copy()
        elif t_code == BOX:
            br, bc = tr + dr, tc + dc
            if not (0 <= br < self.height and 0 <= bc < self.width):
                return word
            b = br * self.width + bc
            b_code = self._code_of[word[4 * b:4 * b + 4].argmax()]
            if b_code != EMPTY:
                return word
            new = word.copy()
            new[4 * b:4 * b + 4] = self.code_onehot(BOX)
        else:
            return word
        new[4 * a:4 * a + 4] = self.code_onehot(EMPTY)
        new[4 * t:4 * t + 4] = self.code_onehot(AGENT)
        return new

    # ---- sampling

    def sample_world(self, rng: np.random.Generator) -> GridWorld:
        grid = np.full((self.height, self.width), EMPTY, dtype=int)
        grid[0, :] = grid[-1, :] = WALL
        grid[:, 0] = grid[:, -1] = WALL
        interior = [(r, c) for r in range(1, self.height - 1)
                    for c in range(1, self.width - 1)]
        n_walls = int(rng.integers(0, 3))
        n_boxes = int(rng.integers(1, 6))
        picks = rng.choice(len(interior), size=n_walls + n_boxes + 1, replace=False)
        for i, p in enumerate(picks):
            r, c = interior[p]
            grid[r, c] = WALL if i < n_walls else (BOX if i < n_walls + n_boxes else AGENT)
        return GridWorld(self.height, self.width, tuple(int(x) for x in grid.ravel()))

    def sample_config(self, rng: np.random.Generator) -> np.ndarray:
        return self.encode(self.sample_world(rng))


class SlidingPuzzleDomain:
    """3x3 sliding block puzzle; cells hold 4-bit binary tile ids, 0 = blank.

    An operation names a direction: the tile on that side of the blank
    slides into the blank. Off-grid directions leave the word unchanged.
    """

    name = "puzzle"
    op_names = GRID_OP_NAMES
    passthrough = True  # the full word is the ALU's working view
    op_inverse_rule = "opposite"  # a slide is undone by the opposite slide

    def __init__(self, size: int = 3):
        self.height = self.width = size
        self.n_cells = size * size
        self.word_width = 4 * self.n_cells

    def encode_tiles(self, tiles) -> np.ndarray:
        tiles = np.asarray(tiles, dtype=int)
        word = np.zeros(self.word_width, dtype=np.uint8)
        for i, t in enumerate(tiles):
            for j in range(4):
                word[4 * i + j] = (t >> j) & 1
        return word

    def decode_tiles(self, word: np.ndarray) -> np.ndarray:
        groups = np.asarray(word).reshape(self.n_cells, 4)
        tiles = groups @ (1 << np.arange(4))
        if sorted(int(t) for t in tiles) != list(range(self.n_cells)):
            raise MalformedWord("tiles are not a permutation of 0..8")
        return tiles

    def apply_op(self, word: np.ndarray, op: int) -> np.ndarray:
        if op == NOP:
            return word
        tiles = self.decode_tiles(word)
        blank = int(np.flatnonzero(tiles == 0)[0])
        r, c = divmod(blank, self.width)
        dr, dc = DELTAS[op]
        sr, sc = r + dr, c + dc
        if not (0 <= sr < self.height and 0 <= sc < self.width):
            return word
        s = sr * self.width + sc
        new = word.copy()
        new[4 * blank:4 * blank + 4] = word[4 * s:4 * s + 4]
        new[4 * s:4 * s + 4] = 0
        return new

    def sample_config(self, rng: np.random.Generator) -> np.ndarray:
        return self.encode_tiles(rng.permutation(self.n_cells))


class ManipulationDomain:
    """Gripper stacking boxes of three classes on four positions.

    The word is a 3x4 grid of 4-wide one-hot cells (levels bottom-up,
    code 0 = empty, 1..3 = box class) plus a 4-wide gripper register.
    An operation names a position: pick the top box when the gripper is
    empty, otherwise place the held box on top (stacks at most 3 high).
    """

    name = "manipulation"
    op_names = STACK_OP_NAMES
    passthrough = True
    op_inverse_rule = "self"  # pick/place at a position undoes itself

    levels = 3
    positions = 4

    def __init__(self):
        self.n_cells = self.levels * self.positions + 1  # + gripper register
        self.word_width = 4 * self.n_cells

    def encode_state(self, stacks, gripper: int = 0) -> np.ndarray:
        """stacks: sequence of per-position box-class lists, bottom first."""
        codes = np.zeros(self.n_cells, dtype=int)
        for p, stack in enumerate(stacks):
            if len(stack) > self.levels:
                raise MalformedWord("stack exceeds the height limit")
            for lvl, cls in enumerate(stack):
                codes[lvl * self.positions + p] = cls
        codes[-1] = gripper
        word = np.zeros(self.word_width, dtype=np.uint8)
        word[np.arange(self.n_cells) * 4 + codes] = 1
        return word

    def decode_state(self, word: np.ndarray):
        groups = np.asarray(word).reshape(self.n_cells, 4)
        if not np.all(groups.sum(axis=1) == 1):
            raise MalformedWord("cell group is not one-hot")
        codes = groups.argmax(axis=1)
        stacks = []
        for p in range(self.positions):
            column = [int(codes[l * self.positions + p]) for l in range(self.levels)]
            top = [c for c in column if c != 0]
            if any(c != 0 for c in column[len(top):]):
                raise MalformedWord("floating box in stack")
            stacks.append(top)
        return stacks, int(codes[-1])

    def apply_op(self, word: np.ndarray, op: int) -> np.ndarray:
        if op == NOP:
            return word
        stacks, gripper = self.decode_state(word)
        stack = stacks[op]
        if gripper == 0:
            if not stack:
                return word
            gripper = stack.pop()
        else:
            if len(stack) >= self.levels:
                return word
            stack.append(gripper)
            gripper = 0
        return self.encode_state(stacks, gripper)

    def sample_config(self, rng: np.random.Generator) -> np.ndarray:
        n_boxes = int(rng.integers(1, 6))
        stacks = [[] for _ in range(self.positions)]
        for _ in range(n_boxes):
            open_positions = [p for p in range(self.positions)
                              if len(stacks[p]) < self.levels]
            p = int(rng.choice(open_positions))
            stacks[p].append(int(rng.integers(1, 4)))
        return self.encode_state(stacks, gripper=0)


# ---- tasks and the trace oracle --------------------------------------------


@dataclass(frozen=True)
class TaskInstance:
    start: np.ndarray
    goal: np.ndarray
    level: int
    domain: str
    kind: str = "plan"  # "search" or "plan"

    def to_json_dict(self) -> dict:
        return {
            "domain": self.domain,
            "kind": self.kind,
            "level": self.level,
            "start": word_to_bits(self.start),
            "goal": word_to_bits(self.goal),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TaskInstance":
        return TaskInstance(bits_to_word(d["start"]), bits_to_word(d["goal"]),
                            int(d["level"]), d["domain"], d["kind"])


@dataclass
class TargetTrace:
    """Exact (read word, operation) targets for one task's episode.

    ``explore`` covers the search phase; for plan tasks ``backtrack`` holds
    the goal-to-start state chain expected with ``nop`` operations. Search
    tasks have no backtrack segment but expect one extra ``nop`` step.
    """

    explore: list  # list of (word, op)
    backtrack: list  # list of words (plan) in goal-to-start order
    level: int
    kind: str
    tree: tuple | None = field(default=None, repr=False)  # (node words, parents)

    @property
    def t_explore(self) -> int:
        return len(self.explore)

    @property
    def t_backtrack(self) -> int:
        return len(self.backtrack)

    @property
    def total_steps(self) -> int:
        if self.kind == "search":
            return self.t_explore + 1  # the nop recognition step
        return self.t_explore + self.t_backtrack

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "level": self.level,
            "explore": [[word_to_bits(w), int(op)] for w, op in self.explore],
            "backtrack": [word_to_bits(w) for w in self.backtrack],
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TargetTrace":
        explore = [(bits_to_word(w), int(op)) for w, op in d["explore"]]
        backtrack = [bits_to_word(w) for w in d["backtrack"]]
        return TargetTrace(explore, backtrack, int(d["level"]), d["kind"])


def oracle_trace(domain, task: TaskInstance, max_nodes: int = 200_000,
                 keep_tree: bool = False) -> TargetTrace:
    """FIFO breadth-first targets for a task, duplicates and blocked moves
    included; expansion stops the moment a produced word equals the goal."""
    goal = task.goal
    nodes = [task.start]
    parents = [-1]
    explore = []
    goal_index = None
    k = 0
    while goal_index is None:
        if k >= max_nodes or k >= len(nodes):
            raise UnreachableGoal(f"no goal within {k} explored nodes")
        node = nodes[k]
        for op in range(4):
            explore.append((node, op))
            succ = domain.apply_op(node, op)
            nodes.append(succ)
            parents.append(k)
            if np.array_equal(succ, goal):
                goal_index = len(nodes) - 1
                break
        k += 1
    level = k  # fully explored nodes, the partial final one included
    backtrack = []
    if task.kind == "plan":
        idx = goal_index
        while idx != -1:
            backtrack.append(nodes[idx])
            idx = parents[idx]
    tree = (nodes, parents) if keep_tree else None
    return TargetTrace(explore, backtrack, level, task.kind, tree)


def _forced_duplicate_nodes(inverse_rule: str | None, upto_node: int) -> set:
    """Tree nodes whose state always re-produces an earlier one.

    When an operation has a guaranteed inverse, the child reached by that
    inverse either undoes its parent's move or reproduces a configuration
    whose expansions already ran, so no goal can be *first* produced while
    exploring it; the level right after such a node can never be sampled.
    Forcedness is hereditary: every descendant is a duplicate too.
    """
    forced: set = set()
    if inverse_rule is None:
        return forced
    for node in range(1, upto_node + 1):
        parent = (node - 1) // 4
        op = (node - 1) % 4
        if parent in forced:
            forced.add(node)
            continue
        if parent == 0:
            continue
        parent_op = (parent - 1) % 4
        inverse = parent_op if inverse_rule == "self" else (parent_op + 2) % 4
        if op == inverse:
            forced.add(node)
    return forced


def feasible_levels(domain, upto: int) -> list[int]:
    """Curriculum levels that admit task instances in this domain."""
    forced = _forced_duplicate_nodes(getattr(domain, "op_inverse_rule", None), upto)
    return [lvl for lvl in range(1, upto + 1) if (lvl - 1) not in forced]


def sample_task(rng: np.random.Generator, level: int, domain, kind: str = "plan",
                max_walk: int = 12, cap: int = 50_000) -> TaskInstance:
    """Rejection-sample a task whose oracle level matches exactly.

    Goals come from a bounded random action walk, so reachability is by
    construction; the walk length says little about the level, which is why
    acceptance is decided by running the oracle with an early node cap.
    """
    if level < 1:
        raise SamplingFailure("levels start at 1")
    if level not in feasible_levels(domain, level):
        raise SamplingFailure(f"level {level} has no instances in {domain.name}")
    for _ in range(cap):
        start = domain.sample_config(rng)
        goal = start
        for _ in range(int(rng.integers(1, max_walk + 1))):
            goal = domain.apply_op(goal, int(rng.integers(0, 4)))
        if np.array_equal(goal, start):
            continue
        candidate = TaskInstance(start, goal, level, domain.name, kind)
        try:
            trace = oracle_trace(domain, candidate, max_nodes=level)
        except UnreachableGoal:
            continue
        if trace.level == level:
            return candidate
    raise SamplingFailure(f"no level-{level} task within {cap} attempts")


def first_occurrence_scan(domain, start: np.ndarray, max_explore_steps: int) -> dict:
    """Map each word first produced by the goal-less FIFO expansion of
    ``start`` to its explore-step index (1-based). The start itself and
    re-productions are excluded, mirroring how the oracle stops."""
    first = {}
    nodes = [start]
    seen = {word_key(start)}
    step = 0
    k = 0
    while step < max_explore_steps:
        node = nodes[k]
        for op in range(4):
            step += 1
            succ = domain.apply_op(node, op)
            nodes.append(succ)
            key = word_key(succ)
            if key not in seen:
                seen.add(key)
                first[key] = (step, succ)
            if step >= max_explore_steps:
                break
        k += 1
    return first


def task_with_explore_steps(rng: np.random.Generator, domain, t_explore: int,
                            kind: str = "plan", attempts: int = 4000) -> TaskInstance:
    """Construct a task whose oracle exploration takes exactly ``t_explore``
    steps by picking a goal first produced at that step of the expansion."""
    for _ in range(attempts):
        start = domain.sample_config(rng)
        first = first_occurrence_scan(domain, start, t_explore)
        for step, word in first.values():
            if step == t_explore:
                level = (t_explore + 3) // 4
                return TaskInstance(start, word, level, domain.name, kind)
    raise SamplingFailure(f"no task with T_e={t_explore} within {attempts} starts")


def deepest_task(rng: np.random.Generator, domain, min_explore_steps: int,
                 scan_steps: int, attempts: int = 200, kind: str = "plan") -> TaskInstance:
    """Find a task whose exploration needs at least ``min_explore_steps``
    by scanning ``scan_steps`` of the goal-less expansion for the latest
    first-produced word."""
    best = None
    for _ in range(attempts):
        start = domain.sample_config(rng)
        first = first_occurrence_scan(domain, start, scan_steps)
        if not first:
            continue
        step, word = max(first.values(), key=lambda sw: sw[0])
        if best is None or step > best[0]:
            best = (step, start, word)
        if step >= min_explore_steps:
            break
    if best is None or best[0] < min_explore_steps:
        found = best[0] if best else 0
        raise SamplingFailure(
            f"deepest exploration found was {found} < {min_explore_steps} steps")
    step, start, word = best
    return TaskInstance(start, word, (step + 3) // 4, domain.name, kind)


def trace_tree_dot(trace: TargetTrace, op_names=GRID_OP_NAMES) -> str:
    """DOT rendering of the search tree behind a trace (needs keep_tree)."""
    if trace.tree is None:
        raise ValueError("trace was built without keep_tree=True")
    nodes, parents = trace.tree
    lines = ["digraph search_tree {"]
    for i in range(len(nodes)):
        lines.append(f'  s{i} [label="s{i}"];')
    for i, p in enumerate(parents):
        if p >= 0:
            # child i was appended while exploring p; recover the op ordinal
            op = i - (1 + 4 * p)
            lines.append(f'  s{p} -> s{i} [label="{op_names[op]}"];')
    lines.append("}")
    return "\n".join(lines)


def make_domain(name: str, size: int | None = None, perm=None):
    if name == "sokoban":
        domain = SokobanDomain(size or 6)
        if perm is not None:
            domain = domain.with_permutation(perm)
        return domain
    if name == "puzzle":
        return SlidingPuzzleDomain()
    if name == "manipulation":
        return ManipulationDomain()
    raise ValueError(f"unknown domain {name!r}")
