"""Coupled computational/data memory with hard-attention addressing.

Both memories always share row indices: every allocation writes a data word
and an 8-bit computational word at the same fresh row. Reading combines five
mechanisms (content lookup over the computational words, temporal linkage in
both directions, usage linkage in both directions), each of which nominates
exactly one row; the attention weights only arbitrate between nominations.

Content lookup exploits the binary words: rows are bucketed by word value
(at most 256 buckets), cosine similarity depends only on the value, and each
bucket answers lowest-row-index queries through a lazily cleaned heap. Reads
therefore cost O(distinct words), not O(rows), which keeps episodes with
hundreds of thousands of steps tractable.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

COMP_WIDTH = 8
N_READ_MODES = 5
CONTENT, TEMPORAL_FWD, TEMPORAL_BWD, USAGE_FWD, USAGE_BWD = range(N_READ_MODES)
READ_MODE_NAMES = ("content", "temporal_fwd", "temporal_bwd", "usage_fwd", "usage_bwd")
INTERFACE_WIDTH = COMP_WIDTH + N_READ_MODES + COMP_WIDTH + COMP_WIDTH  # 29

_POWERS = 1 << np.arange(COMP_WIDTH)
_BITS_OF = ((np.arange(256)[:, None] >> np.arange(COMP_WIDTH)) & 1).astype(np.uint8)
_NORM_OF = np.sqrt(_BITS_OF.sum(axis=1).astype(float))


class ReadError(RuntimeError):
    """Attempted read from a memory with no written rows."""


def binarize(values: np.ndarray) -> np.ndarray:
    """Threshold-at-zero: strictly positive components become 1."""
    return (np.asarray(values) > 0).astype(np.uint8)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class InterfaceVector:
    """Control-side directives for one memory step (29 values total)."""

    read_key: np.ndarray
    read_mode_logits: np.ndarray
    write_word_free: np.ndarray
    write_word_constrained: np.ndarray

    @staticmethod
    def from_vector(v: np.ndarray) -> "InterfaceVector":
        v = np.asarray(v, dtype=float)
        if v.shape != (INTERFACE_WIDTH,):
            raise ValueError(f"interface vector must have width {INTERFACE_WIDTH}")
        return InterfaceVector(v[0:8], v[8:13], v[13:21], v[21:29])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.read_key, self.read_mode_logits,
                               self.write_word_free, self.write_word_constrained])


@dataclass(frozen=True)
class ReadResult:
    location: int
    comp_word: np.ndarray
    data_word: np.ndarray
    attention: np.ndarray


class DualMemory:
    """Append-only dual memory owned by a single episode."""

    def __init__(self, data_width: int, soft_data: bool = False):
        self.data_width = data_width
        self._cap = 32
        self.comp = np.zeros((self._cap, COMP_WIDTH), dtype=np.uint8)
        self.data = np.zeros((self._cap, data_width),
                             dtype=float if soft_data else np.uint8)
        self.n_rows = 0
        self.write_order: list[int] = []
        self.temporal_succ: list[int] = []
        self.temporal_pred: list[int] = []
        self.usage_parent: list[int] = []
        self.last_read: int | None = None
        self._write_counter = 0
        self._latest_child: dict[int, int] = {}
        self._comp_value: list[int] = []
        self._buckets: dict[int, list[int]] = {}
        self._prev_free_row = -1

    @property
    def next_free(self) -> int:
        return self.n_rows

    # ---- internal helpers

    def _grow(self) -> None:
        self._cap *= 2
        for name in ("comp", "data"):
            old = getattr(self, name)
            new = np.zeros((self._cap, old.shape[1]), dtype=old.dtype)
            new[:self.n_rows] = old[:self.n_rows]
            setattr(self, name, new)

    def _bucket_push(self, value: int, row: int) -> None:
        heapq.heappush(self._buckets.setdefault(value, []), row)

    def _bucket_min(self, value: int) -> int | None:
        heap = self._buckets.get(value)
        if not heap:
            return None
        while heap and self._comp_value[heap[0]] != value:
            heapq.heappop(heap)
        return heap[0] if heap else None

    def _set_comp(self, row: int, word: np.ndarray) -> None:
        self.comp[row] = word
        value = int(word @ _POWERS)
        self._comp_value[row] = value
        self._bucket_push(value, row)

    # ---- write heads

    def allocate_and_write(self, d_word: np.ndarray, write_word: np.ndarray) -> int:
        """Free head: write both memories at the next fresh row, extend the
        temporal chain, and link the row to the location last read."""
        d_word = np.asarray(d_word)
        if d_word.shape != (self.data_width,):
            raise ValueError(
                f"data word width {d_word.shape} != memory width {self.data_width}")
        if self.n_rows == self._cap:
            self._grow()
        row = self.n_rows
        self.n_rows += 1
        self.data[row] = d_word
        self.temporal_succ.append(-1)
        self.temporal_pred.append(self._prev_free_row)
        if self._prev_free_row >= 0:
            self.temporal_succ[self._prev_free_row] = row
        self._prev_free_row = row
        parent = -1 if self.last_read is None else self.last_read
        self.usage_parent.append(parent)
        self._latest_child[parent] = row
        self._write_counter += 1
        self.write_order.append(self._write_counter)
        self._comp_value.append(0)
        self._set_comp(row, binarize(write_word))
        return row

    def constrained_write(self, write_word: np.ndarray) -> None:
        """Constrained head: overwrite the computational word of the row last
        read. Links and the data row stay untouched; no-op before any read."""
        if self.last_read is None:
            return
        self._write_counter += 1
        self._set_comp(self.last_read, binarize(write_word))

    # ---- read mechanisms

    def content_row(self, key: np.ndarray) -> int:
        key = np.asarray(key, dtype=float)
        key_norm = float(np.sqrt(key @ key))
        best_sim = None
        best_row = None
        for value in self._buckets:
            row = self._bucket_min(value)
            if row is None:
                continue
            if key_norm == 0.0 or value == 0:
                sim = 0.0  # all-zero convention
            else:
                sim = float(_BITS_OF[value] @ key) / (key_norm * _NORM_OF[value])
            if best_sim is None or sim > best_sim or (sim == best_sim and row < best_row):
                best_sim, best_row = sim, row
        if best_row is None:
            raise ReadError("content lookup on empty memory")
        return best_row

    def _mechanism_rows(self, key: np.ndarray, usage_linkage: bool) -> list[int]:
        lr = self.last_read
        anchor = 0 if lr is None else lr
        rows = [0] * N_READ_MODES
        rows[CONTENT] = self.content_row(key)
        if lr is None:
            rows[TEMPORAL_FWD] = rows[TEMPORAL_BWD] = anchor
        else:
            succ = self.temporal_succ[lr]
            pred = self.temporal_pred[lr]
            rows[TEMPORAL_FWD] = succ if succ >= 0 else lr
            rows[TEMPORAL_BWD] = pred if pred >= 0 else lr
        if usage_linkage:
            parent_key = -1 if lr is None else lr
            rows[USAGE_FWD] = self._latest_child.get(parent_key, anchor)
            if lr is None:
                rows[USAGE_BWD] = anchor
            else:
                parent = self.usage_parent[lr]
                rows[USAGE_BWD] = parent if parent >= 0 else lr
        else:
            rows[USAGE_FWD] = rows[USAGE_BWD] = anchor
        return rows

    def read_attend(self, iface: InterfaceVector, hard: bool = True,
                    usage_linkage: bool = True) -> ReadResult:
        """Resolve the five mechanisms, combine them by attention weight, and
        update ``last_read``. In hard mode the located row's words are
        returned verbatim; in soft mode the attention-weighted averages of
        the five nominated rows are returned instead (location unchanged)."""
        if self.n_rows == 0:
            raise ReadError("read on empty memory")
        attention = softmax(iface.read_mode_logits)
        rows = self._mechanism_rows(iface.read_key, usage_linkage)
        combined: dict[int, float] = {}
        for row, weight in zip(rows, attention):
            combined[row] = combined.get(row, 0.0) + float(weight)
        location = min(combined, key=lambda r: (-combined[r], r))
        self.last_read = location
        if hard:
            comp_word = self.comp[location].copy()
            data_word = self.data[location].copy()
        else:
            comp_word = np.zeros(COMP_WIDTH, dtype=float)
            data_word = np.zeros(self.data_width, dtype=float)
            for row, weight in zip(rows, attention):
                comp_word += weight * self.comp[row]
                data_word += weight * self.data[row]
        return ReadResult(location, comp_word, data_word, attention)

    # ---- introspection

    def dump(self) -> dict:
        from .domains import word_to_bits
        rows = []
        for i in range(self.n_rows):
            rows.append({
                "row": i,
                "comp": word_to_bits(self.comp[i]),
                "data": word_to_bits(self.data[i].astype(np.uint8))
                if self.data.dtype == np.uint8 else self.data[i].tolist(),
                "write_order": self.write_order[i],
                "temporal_succ": self.temporal_succ[i],
                "temporal_pred": self.temporal_pred[i],
                "usage_parent": self.usage_parent[i],
            })
        return {"rows": rows, "last_read": self.last_read, "next_free": self.next_free}
