"""State sequences, transition counts/probabilities and dwell statistics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import groupby
from pathlib import Path
from typing import Sequence

import numpy as np

from marketstates.errors import DataError


@dataclass(frozen=True)
class StateSequence:
    taus: np.ndarray
    states: np.ndarray
    k: int

    def __post_init__(self):
        states = np.asarray(self.states, dtype=int)
        if states.ndim != 1 or len(states) != len(self.taus):
            raise DataError("states and taus must be equal-length 1-D sequences")
        if states.size and (states.min() < 1 or states.max() > self.k):
            raise DataError(f"states must lie in [1, {self.k}]")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "taus", np.asarray(self.taus))

    @classmethod
    def from_states(cls, states: Sequence[int], k: int | None = None) -> "StateSequence":
        states = np.asarray(states, dtype=int)
        return cls(np.arange(len(states)), states, int(k if k is not None else states.max()))


@dataclass
class TransitionMatrix:
    counts: np.ndarray
    probs: np.ndarray
    empty_rows: list[int]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    def edges(self) -> list[tuple[int, int, int, float]]:
        """Nonzero transitions as (from_state, to_state, count, probability), 1-based states."""
        return [
            (i + 1, j + 1, int(self.counts[i, j]), float(self.probs[i, j]))
            for i in range(self.k)
            for j in range(self.k)
            if self.counts[i, j] > 0
        ]

    def write_csv(self, directory: str | Path) -> list[Path]:
        out = Path(directory)
        header = "state," + ",".join(f"S{j}" for j in range(1, self.k + 1))
        counts_path, probs_path = out / "transition_counts.csv", out / "transition_probs.csv"
        rows = [f"S{i + 1}," + ",".join(str(int(v)) for v in r) for i, r in enumerate(self.counts)]
        counts_path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
        rows = [f"S{i + 1}," + ",".join(f"{v:.3f}" for v in r) for i, r in enumerate(self.probs)]
        probs_path.write_text("\n".join([header, *rows]) + "\n", encoding="utf-8")
        return [counts_path, probs_path]


def transitions(seq: StateSequence | Sequence[int], k: int | None = None) -> TransitionMatrix:
    """Count consecutive (s_t, s_t+1) pairs, self-transitions included, and row-normalize.

    Rows of states never left are all zero in ``probs`` and listed in ``empty_rows`` (1-based).
    """
    if not isinstance(seq, StateSequence):
        seq = StateSequence.from_states(seq, k)
    k = seq.k if k is None else k
    s = seq.states
    if len(s) < 2:
        raise DataError("need at least two states to count transitions")
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (s[:-1] - 1, s[1:] - 1), 1)
    rows = counts.sum(axis=1)
    probs = np.zeros((k, k))
    nonempty = rows > 0
    probs[nonempty] = counts[nonempty] / rows[nonempty, None]
    return TransitionMatrix(counts, probs, [int(i) + 1 for i in np.flatnonzero(~nonempty)])


@dataclass
class Occupancy:
    visits: dict[int, int]
    dwells: dict[int, list[int]]

    def dwell_histogram(self, state: int) -> dict[int, int]:
        hist: dict[int, int] = {}
        for d in self.dwells.get(state, []):
            hist[d] = hist.get(d, 0) + 1
        return dict(sorted(hist.items()))

    def to_dict(self) -> dict:
        return {
            "visits": {str(s): n for s, n in self.visits.items()},
            "dwells": {str(s): d for s, d in self.dwells.items()},
            "mean_dwell": {str(s): float(np.mean(d)) for s, d in self.dwells.items()},
        }


def occupancy(seq: StateSequence | Sequence[int]) -> Occupancy:
    """Visit counts per state and the lengths of maximal same-state runs."""
    states = seq.states if isinstance(seq, StateSequence) else np.asarray(seq, dtype=int)
    visits: dict[int, int] = {}
    dwells: dict[int, list[int]] = {}
    for state, run in groupby(states.tolist()):
        n = sum(1 for _ in run)
        visits[state] = visits.get(state, 0) + n
        dwells.setdefault(state, []).append(n)
    return Occupancy(dict(sorted(visits.items())), dict(sorted(dwells.items())))


def dynamics_summary(seq: StateSequence, tm: TransitionMatrix, occ: Occupancy) -> str:
    return json.dumps(
        {
            "k": seq.k,
            "n_frames": int(len(seq.states)),
            "n_transitions": int(tm.counts.sum()),
            "empty_rows": tm.empty_rows,
            "probs": np.round(tm.probs, 3).tolist(),
            "counts": tm.counts.tolist(),
            "occupancy": occ.to_dict(),
        },
        indent=1,
    )
