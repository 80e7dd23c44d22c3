"""Asynchronous successive halving and a FIFO scheduler for single-fidelity runs.

Both schedulers hand new configurations to any searcher through the
last-fidelity dataset: each trial contributes its most recent observation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config_space import Config

CONTINUE = "continue"
STOP = "stop"
PAUSE = "pause"
COMPLETED = "completed"

RUNNING = "running"
PAUSED = "paused"
STOPPED = "stopped"


class RungLadder:
    """Geometric rung levels ``r_min * eta**k`` capped at ``r_max``; ``r_max`` is always a rung."""

    def __init__(self, r_min: int = 1, r_max: int = 27, eta: int = 3):
        if r_min < 1 or r_max < r_min:
            raise ValueError(f"need 1 <= r_min <= r_max, got r_min={r_min}, r_max={r_max}")
        if eta < 2:
            raise ValueError(f"reduction factor must be >= 2, got {eta}")
        rungs = []
        r = r_min
        while r <= r_max:
            rungs.append(r)
            r *= eta
        if rungs[-1] != r_max:
            rungs.append(r_max)
        self.r_min = r_min
        self.r_max = r_max
        self.eta = eta
        self.rungs: Tuple[int, ...] = tuple(rungs)

    def __contains__(self, r) -> bool:
        return r in self.rungs

    def index(self, r: int) -> int:
        try:
            return self.rungs.index(r)
        except ValueError:
            raise ValueError(f"fidelity {r} is not a rung level of {self.rungs}") from None

    def __repr__(self):
        return f"RungLadder(rungs={self.rungs}, eta={self.eta})"


@dataclass
class Trial:
    id: int
    config: Config
    history: List[Tuple[int, float]] = field(default_factory=list)
    status: str = RUNNING

    def add(self, r: int, y: float):
        if self.history and r <= self.history[-1][0]:
            raise ValueError(f"trial {self.id}: fidelity {r} after {self.history[-1][0]}")
        self.history.append((r, y))

    @property
    def last_fidelity(self) -> Optional[int]:
        return self.history[-1][0] if self.history else None


class RungTable:
    """Results recorded per rung level; a trial appears at most once per rung."""

    def __init__(self, ladder: RungLadder):
        self.ladder = ladder
        self.entries: Dict[int, List[Tuple[int, float]]] = {r: [] for r in ladder.rungs}
        self.promoted: Dict[int, set] = {r: set() for r in ladder.rungs}
        self._members: Dict[int, set] = {r: set() for r in ladder.rungs}

    def record(self, r: int, trial_id: int, y: float):
        self.ladder.index(r)
        if trial_id in self._members[r]:
            raise ValueError(f"trial {trial_id} already has a result at rung {r}")
        self._members[r].add(trial_id)
        self.entries[r].append((trial_id, y))

    def __len__(self):
        return sum(len(v) for v in self.entries.values())


def top_k(entries: Sequence[Tuple[int, float]], k: int) -> List[int]:
    """Ids of the ``k`` lowest values; ties go to the earlier trial id."""
    ranked = sorted(entries, key=lambda e: (e[1], e[0]))
    return [tid for tid, _ in ranked[:max(k, 0)]]


def decide(trial_id: int, r: int, y: float, table: RungTable, eta: int) -> str:
    """Stopping rule at a rung: keep the trial iff it ranks in the top ``ceil(k/eta)``.

    ``(trial_id, y)`` must already be recorded at rung ``r``.
    """
    table.ladder.index(r)
    if r == table.ladder.r_max:
        return COMPLETED
    entries = table.entries[r]
    keep = math.ceil(len(entries) / eta)
    return CONTINUE if trial_id in top_k(entries, keep) else STOP


def searcher_dataset(trials: Sequence[Trial]) -> List[Tuple[Config, float]]:
    """One ``(config, value at the highest observed fidelity)`` row per trial with data."""
    return [(t.config, t.history[-1][1]) for t in trials if t.history]


@dataclass(frozen=True)
class Assignment:
    trial_id: int
    config: Config
    fidelity: int
    kind: str  # "start" or "resume"


class _BaseScheduler:
    def __init__(self, searcher, fidelities: Sequence[int]):
        fids = [int(r) for r in fidelities]
        if not fids or any(b <= a for a, b in zip(fids, fids[1:])) or fids[0] < 1:
            raise ValueError(f"fidelities must be positive and strictly increasing: {fidelities}")
        self.searcher = searcher
        self.fidelities: Tuple[int, ...] = tuple(fids)
        self.r_max = fids[-1]
        self.trials: Dict[int, Trial] = {}

    def next_fidelity(self, trial_id: int) -> int:
        last = self.trials[trial_id].last_fidelity
        if last is None:
            return self.fidelities[0]
        return self.fidelities[self.fidelities.index(last) + 1]

    def _new_trial(self, rng) -> Assignment:
        config = self.searcher.suggest(self.dataset(), rng)
        tid = len(self.trials)
        self.trials[tid] = Trial(tid, config)
        return Assignment(tid, config, self.fidelities[0], "start")

    def dataset(self):
        return searcher_dataset(list(self.trials.values()))

    def next_action(self, rng: np.random.Generator) -> Assignment:
        return self._new_trial(rng)


class FIFOScheduler(_BaseScheduler):
    """Runs every trial to ``r_max``; the searcher sees completed trials only."""

    def on_result(self, trial_id: int, r: int, y: float) -> str:
        trial = self.trials[trial_id]
        trial.add(r, y)
        if r == self.r_max:
            trial.status = COMPLETED
            return COMPLETED
        return CONTINUE

    def dataset(self):
        return searcher_dataset([t for t in self.trials.values() if t.status == COMPLETED])


class ASHAScheduler(_BaseScheduler):
    """Single-bracket asynchronous successive halving.

    ``variant="stopping"`` decides continue/stop whenever a trial reaches a
    rung. ``variant="promotion"`` pauses trials at each rung and resumes the
    best unpromoted ones when a worker frees up.
    """

    def __init__(self, searcher, fidelities: Sequence[int], grace_period: int = 1,
                 eta: int = 3, variant: str = "stopping"):
        super().__init__(searcher, fidelities)
        if variant not in ("stopping", "promotion"):
            raise ValueError(f"unknown ASHA variant {variant!r}")
        self.ladder = RungLadder(grace_period, self.r_max, eta)
        missing = [r for r in self.ladder.rungs if r not in self.fidelities]
        if missing:
            raise ValueError(f"rung levels {missing} are not reported fidelities")
        self.eta = eta
        self.variant = variant
        self.table = RungTable(self.ladder)

    def on_result(self, trial_id: int, r: int, y: float) -> str:
        trial = self.trials[trial_id]
        trial.add(r, y)
        if r not in self.ladder:
            return CONTINUE
        self.table.record(r, trial_id, y)
        if self.variant == "stopping":
            decision = decide(trial_id, r, y, self.table, self.eta)
        else:
            decision = COMPLETED if r == self.r_max else PAUSE
        trial.status = {CONTINUE: RUNNING, STOP: STOPPED, PAUSE: PAUSED, COMPLETED: COMPLETED}[decision]
        return decision

    def promotable(self) -> Optional[Tuple[int, int]]:
        """``(trial id, rung index)`` of the first promotable trial, scanning rungs top-down."""
        rungs = self.ladder.rungs
        for k in range(len(rungs) - 2, -1, -1):
            r = rungs[k]
            entries = self.table.entries[r]
            for tid in top_k(entries, len(entries) // self.eta):
                if tid not in self.table.promoted[r]:
                    return tid, k
        return None

    def next_action(self, rng: np.random.Generator) -> Assignment:
        if self.variant == "promotion":
            found = self.promotable()
            if found is not None:
                tid, k = found
                self.table.promoted[self.ladder.rungs[k]].add(tid)
                trial = self.trials[tid]
                trial.status = RUNNING
                return Assignment(tid, trial.config, self.next_fidelity(tid), "resume")
        return self._new_trial(rng)
