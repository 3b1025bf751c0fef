"""Data-dependent modules: Input, Transform_D, ALU, and Output.

Each module exists in two interchangeable variants: a hardcoded oracle and
a supervised-trained network. Both present the same call signature, so the
computation engine never knows which one it is driving. The grid domain
uses a 9-cell local view and a 3-cell local change; domains whose actions
are not local pass the full word through instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import AGENT, BOX, DELTAS, EMPTY, NOP, WALL, MalformedWord
from .nets import DenseNet, LayerSpec

VIEW_CELLS = 9  # center plus two cells in each direction
VIEW_OFFSETS = ((0, 0), (-1, 0), (-2, 0), (0, 1), (0, 2), (1, 0), (2, 0), (0, -1), (0, -2))
CHANGE_WIDTH = 16  # 4-way direction plus three 4-wide cells


@dataclass(frozen=True)
class PhaseSignals:
    """Binary episode-phase signals; ``goal_found`` latches once set."""

    searching: int = 1
    goal_found: int = 0
    terminated: int = 0
    equality: int = 0

    def as_vector(self) -> np.ndarray:
        return np.array([self.searching, self.goal_found, self.terminated], dtype=float)


INITIAL_PHASE = PhaseSignals(searching=1, goal_found=0, terminated=0, equality=0)


def _clamp01(v: int) -> int:
    return 0 if v < 0 else (1 if v > 1 else v)


def phase_step(equal: int, prev: PhaseSignals) -> PhaseSignals:
    return PhaseSignals(
        searching=_clamp01((1 - equal) - prev.goal_found),
        goal_found=_clamp01(equal + prev.goal_found),
        terminated=_clamp01(equal * prev.goal_found),
        equality=equal,
    )


def equality_features(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rectified differences in both directions, one pair per bit."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.concatenate([np.maximum(a - b, 0.0), np.maximum(b - a, 0.0)])


class OracleInput:
    """Exact-equality input module producing the phase signals."""

    kind = "oracle"

    def __call__(self, d_e, x, prev: PhaseSignals):
        equal = int(np.array_equal(np.asarray(d_e), np.asarray(x)))
        phase = phase_step(equal, prev)
        return phase.as_vector(), x, phase


class LearnedInput:
    """Equality judged by a small net over rectified-difference features."""

    kind = "learned"

    def __init__(self, net: DenseNet):
        self.net = net

    @staticmethod
    def architecture(word_width: int) -> DenseNet:
        return DenseNet([LayerSpec(2 * word_width, 10, "leaky_relu"),
                         LayerSpec(10, 2, "argmax_onehot")], output_rows=(2,))

    def __call__(self, d_e, x, prev: PhaseSignals):
        out = self.net.forward(equality_features(d_e, x))
        equal = int(out[1] > 0.5)
        phase = phase_step(equal, prev)
        return phase.as_vector(), x, phase


# ---- Transform_D -------------------------------------------------------------


class OracleTransformD:
    """Local 9-cell observation around the agent; off-grid reads as wall."""

    kind = "oracle"

    def __init__(self, domain):
        self.domain = domain
        self._tables = self._index_tables(domain)

    @staticmethod
    def _index_tables(domain) -> np.ndarray:
        """Per agent cell, word indices of the view bits; out-of-grid cells
        point into a wall-coded suffix appended to the word."""
        h, w = domain.height, domain.width
        n = domain.n_cells
        tables = np.zeros((n, VIEW_CELLS * 4), dtype=int)
        wall_base = 4 * n  # suffix holds one wall one-hot group
        for a in range(n):
            r, c = divmod(a, w)
            for v, (dr, dc) in enumerate(VIEW_OFFSETS):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    base = 4 * (rr * w + cc)
                else:
                    base = wall_base
                tables[a, 4 * v:4 * v + 4] = np.arange(base, base + 4)
        return tables

    def agent_cell(self, d_m: np.ndarray) -> int:
        col = np.asarray(d_m, dtype=float)[self.domain.perm[AGENT]::4]
        hits = np.flatnonzero(col > 0.5)
        if hits.size != 1:
            raise MalformedWord(f"expected exactly one agent, found {hits.size}")
        return int(hits[0])

    def __call__(self, d_m: np.ndarray) -> np.ndarray:
        a = self.agent_cell(d_m)
        extended = np.concatenate([np.asarray(d_m), self.domain.code_onehot(WALL)])
        return extended[self._tables[a]]


class PassthroughTransformD:
    kind = "oracle"

    def __call__(self, d_m):
        return d_m


class LearnedTransformD:
    kind = "learned"

    def __init__(self, net: DenseNet):
        self.net = net

    @staticmethod
    def architecture(word_width: int) -> DenseNet:
        return DenseNet([LayerSpec(word_width, 500, "leaky_relu"),
                         LayerSpec(500, VIEW_CELLS * 4, "argmax_onehot")],
                        output_rows=(4,) * VIEW_CELLS)

    def __call__(self, d_m):
        return self.net.forward(np.asarray(d_m, dtype=float)).astype(np.uint8)


# ---- ALU ----------------------------------------------------------------------


def op_onehot(op: int) -> np.ndarray:
    out = np.zeros(5, dtype=np.uint8)
    out[op] = 1
    return out


class OracleALU:
    """Preconditions and effects of one move on the local view.

    Success yields the moved direction and the three rewritten cells; a
    blocked move or ``nop`` yields no change (all-zero local change).
    """

    kind = "oracle"

    def __init__(self, domain):
        self.domain = domain

    def _code(self, group: np.ndarray) -> int:
        return self.domain.inv_perm[int(np.argmax(group))]

    def __call__(self, c_f: np.ndarray, d_f: np.ndarray):
        op = int(np.argmax(c_f))
        if op == NOP:
            return 0, np.zeros(CHANGE_WIDTH, dtype=np.uint8)
        target = d_f[4 * (1 + 2 * op):4 * (1 + 2 * op) + 4]
        beyond = d_f[4 * (2 + 2 * op):4 * (2 + 2 * op) + 4]
        t_code = self._code(target)
        d_a = np.zeros(CHANGE_WIDTH, dtype=np.uint8)
        if t_code == EMPTY:
            new_beyond = np.asarray(beyond, dtype=np.uint8)
        elif t_code == BOX and self._code(beyond) == EMPTY:
            new_beyond = self.domain.code_onehot(BOX)
        else:
            return 0, d_a
        d_a[op] = 1
        d_a[4:8] = self.domain.code_onehot(EMPTY)
        d_a[8:12] = self.domain.code_onehot(AGENT)
        d_a[12:16] = new_beyond
        return 1, d_a


class PassthroughALU:
    """Full-word action application for domains without a local view."""

    kind = "oracle"

    def __init__(self, domain):
        self.domain = domain

    def __call__(self, c_f, d_f):
        op = int(np.argmax(c_f))
        succ = self.domain.apply_op(np.asarray(d_f, dtype=np.uint8), op)
        changed = int(not np.array_equal(succ, d_f))
        return changed, succ


class LearnedALU:
    """Two nets: the control net gates the action net's local change."""

    kind = "learned"

    def __init__(self, control_net: DenseNet, action_net: DenseNet):
        self.control_net = control_net
        self.action_net = action_net

    @staticmethod
    def architecture(view_width: int = VIEW_CELLS * 4):
        w = 5 + view_width
        control = DenseNet([LayerSpec(w, 64, "leaky_relu"),
                            LayerSpec(64, 64, "leaky_relu"),
                            LayerSpec(64, 2, "argmax_onehot")], output_rows=(2,))
        action = DenseNet([LayerSpec(w, 128, "leaky_relu"),
                           LayerSpec(128, 64, "leaky_relu"),
                           LayerSpec(64, CHANGE_WIDTH, "argmax_onehot")],
                          output_rows=(4,) * 4)
        return control, action

    def __call__(self, c_f, d_f):
        x = np.concatenate([np.asarray(c_f, dtype=float), np.asarray(d_f, dtype=float)])
        c_a = int(self.control_net.forward(x)[1] > 0.5)
        if c_a == 0:
            return 0, np.zeros(CHANGE_WIDTH, dtype=np.uint8)
        return 1, self.action_net.forward(x).astype(np.uint8)


# ---- Output -------------------------------------------------------------------


class OracleOutput:
    """Insert the ALU's three-cell change back into the full word."""

    kind = "oracle"

    def __init__(self, domain, transform_d: OracleTransformD | None = None):
        self.domain = domain
        self._td = transform_d or OracleTransformD(domain)

    def insertion_cells(self, d_m, direction: int) -> tuple[int, int, int]:
        a = self._td.agent_cell(d_m)
        w = self.domain.width
        r, c = divmod(a, w)
        dr, dc = DELTAS[direction]
        cells = []
        for k in (0, 1, 2):
            rr, cc = r + k * dr, c + k * dc
            if not (0 <= rr < self.domain.height and 0 <= cc < self.domain.width):
                raise MalformedWord("change direction indexes outside the grid")
            cells.append(rr * w + cc)
        return tuple(cells)

    def __call__(self, c_a: int, d_a: np.ndarray, d_m: np.ndarray):
        if not c_a:
            return 0, d_m
        direction = int(np.argmax(d_a[:4]))
        p0, p1, p2 = self.insertion_cells(d_m, direction)
        d_o = np.array(d_m, copy=True)
        d_o[4 * p0:4 * p0 + 4] = d_a[4:8]
        d_o[4 * p1:4 * p1 + 4] = d_a[8:12]
        d_o[4 * p2:4 * p2 + 4] = d_a[12:16]
        return 1, d_o


class PassthroughOutput:
    kind = "oracle"

    def __call__(self, c_a, d_a, d_m):
        if not c_a:
            return 0, d_m
        return 1, d_a


class LearnedOutput:
    """Control net gates insertion; the data net predicts where the three
    changed cells land inside the full word."""

    kind = "learned"

    def __init__(self, control_net: DenseNet, data_net: DenseNet):
        self.control_net = control_net
        self.data_net = data_net

    @staticmethod
    def architecture(word_width: int):
        n_cells = word_width // 4
        control = DenseNet([LayerSpec(1 + CHANGE_WIDTH + word_width, 500, "leaky_relu"),
                            LayerSpec(500, 250, "leaky_relu"),
                            LayerSpec(250, 2, "argmax_onehot")], output_rows=(2,))
        data = DenseNet([LayerSpec(CHANGE_WIDTH + word_width, 500, "leaky_relu"),
                         LayerSpec(500, 500, "leaky_relu"),
                         LayerSpec(500, 3 * n_cells, "argmax_onehot")],
                        output_rows=(n_cells,) * 3)
        return control, data

    def __call__(self, c_a, d_a, d_m):
        d_a = np.asarray(d_a, dtype=float)
        d_m_f = np.asarray(d_m, dtype=float)
        ctrl_in = np.concatenate([[float(c_a)], d_a, d_m_f])
        c_o = int(self.control_net.forward(ctrl_in)[1] > 0.5)
        if c_o == 0:
            return 0, d_m
        n_cells = len(d_m) // 4
        mask_rows = self.data_net.forward(np.concatenate([d_a, d_m_f]))
        d_o = np.array(d_m, copy=True)
        for k in range(3):
            p = int(np.argmax(mask_rows[k * n_cells:(k + 1) * n_cells]))
            d_o[4 * p:4 * p + 4] = d_a[4 * (k + 1):4 * (k + 1) + 4]
        return 1, d_o


# ---- module bundles ------------------------------------------------------------


@dataclass
class DataModuleSet:
    input: object
    transform_d: object
    alu: object
    output: object


def oracle_modules(domain) -> DataModuleSet:
    if getattr(domain, "passthrough", False):
        return DataModuleSet(OracleInput(), PassthroughTransformD(),
                             PassthroughALU(domain), PassthroughOutput())
    td = OracleTransformD(domain)
    return DataModuleSet(OracleInput(), td, OracleALU(domain),
                         OracleOutput(domain, td))


def derive_insertion_cells(domain, d_m, d_a, d_o) -> tuple[int, int, int] | None:
    """Recover where a local change was inserted, from the sample alone.

    Used to build supervision for the learned Output module: the candidate
    anchor must be direction-consistent, reproduce d_o's three cells, and
    cover every cell where d_m and d_o differ. Lowest anchor wins ties.
    """
    direction = int(np.argmax(d_a[:4]))
    dr, dc = DELTAS[direction]
    h, w = domain.height, domain.width
    d_m = np.asarray(d_m)
    d_o = np.asarray(d_o)
    groups_changed = {p for p in range(domain.n_cells)
                      if not np.array_equal(d_m[4 * p:4 * p + 4], d_o[4 * p:4 * p + 4])}
    for p0 in range(domain.n_cells):
        r, c = divmod(p0, w)
        cells = []
        ok = True
        for k in (0, 1, 2):
            rr, cc = r + k * dr, c + k * dc
            if not (0 <= rr < h and 0 <= cc < w):
                ok = False
                break
            cells.append(rr * w + cc)
        if not ok:
            continue
        if not groups_changed <= set(cells):
            continue
        if all(np.array_equal(d_o[4 * p:4 * p + 4], d_a[4 * (k + 1):4 * (k + 1) + 4])
               for k, p in enumerate(cells)):
            return tuple(cells)
    return None
