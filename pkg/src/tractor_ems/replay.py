"""Fixed-capacity experience replay with uniform sampling and expert preseeding."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmsError, NotReadyError, ParseError

TRANSITION_HEADER = ("p_dem_w", "soc", "action_index", "reward", "next_p_dem_w", "next_soc", "done")


@dataclass(frozen=True, slots=True)
class Transition:
    state: tuple[float, float]        # (p_dem W, soc)
    action_index: int
    reward: float
    next_state: tuple[float, float]
    done: bool


class Batch(NamedTuple):
    state: np.ndarray       # (B, 2) raw (p_dem, soc)
    action: np.ndarray      # (B,) int
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray        # (B,) bool

    def transitions(self) -> list[Transition]:
        return [Transition((float(s[0]), float(s[1])), int(a), float(r),
                           (float(s2[0]), float(s2[1])), bool(d))
                for s, a, r, s2, d in zip(self.state, self.action, self.reward,
                                          self.next_state, self.done)]


class ReplayBuffer:
    """Ring buffer stored column-wise; once full the oldest entry is overwritten."""

    def __init__(self, capacity: int = 200_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._s = np.zeros((capacity, 2))
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity)
        self._s2 = np.zeros((capacity, 2))
        self._d = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self.cursor
        self._s[i] = tr.state
        self._a[i] = tr.action_index
        self._r[i] = tr.reward
        self._s2[i] = tr.next_state
        self._d[i] = tr.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ready(self, batch_size: int) -> bool:
        return self.size >= batch_size

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement."""
        if not self.ready(batch_size):
            raise NotReadyError(f"buffer holds {self.size} < {batch_size} transitions")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self._s[idx], self._a[idx], self._r[idx], self._s2[idx], self._d[idx])

    def contents(self) -> list[Transition]:
        """Stored transitions from oldest to newest."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self.cursor) % self.capacity
        return Batch(self._s[order], self._a[order], self._r[order],
                     self._s2[order], self._d[order]).transitions()


def preseed(buffer: ReplayBuffer, expert: Sequence[Transition], fraction: float) -> int:
    """Fill an empty buffer with up to ``floor(fraction * capacity)`` expert transitions."""
    if len(buffer) != 0:
        raise EmsError("preseeding requires an empty buffer")
    if not (0 < fraction <= 1):
        raise ValueError("fraction must lie in (0, 1]")
    n = min(int(np.floor(fraction * buffer.capacity)), len(expert))
    for tr in expert[:n]:
        buffer.push(tr)
    return n


def save_transitions(transitions: Sequence[Transition], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRANSITION_HEADER)
        for tr in transitions:
            w.writerow([repr(tr.state[0]), repr(tr.state[1]), tr.action_index, repr(tr.reward),
                        repr(tr.next_state[0]), repr(tr.next_state[1]), int(tr.done)])


def load_transitions(path) -> list[Transition]:
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRANSITION_HEADER:
            raise ParseError(f"{path}: expected header {','.join(TRANSITION_HEADER)}", row=1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out.append(Transition((float(row[0]), float(row[1])), int(row[2]), float(row[3]),
                                      (float(row[4]), float(row[5])), bool(int(row[6]))))
            except (ValueError, IndexError):
                raise ParseError(f"{path}: malformed transition", row=row_no) from None
    return out
