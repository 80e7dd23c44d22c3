"""Simulated blackboxes and the asynchronous discrete-event run loop.

Blackboxes return ``(value, elapsed)`` where ``elapsed`` is the simulated time
needed to advance a trial from the previous reported fidelity to ``r``.
"""
from __future__ import annotations

import csv
import hashlib
import heapq
import io
import itertools
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .config_space import (
    Categorical,
    Config,
    ConfigSpace,
    FiniteRange,
    Uniform,
)
from .scheduler import CONTINUE

DEFAULT_KAPPA = 0.3


class Blackbox:
    """Interface: a config space, reported fidelities and ``evaluate``."""

    name = "blackbox"
    space: ConfigSpace
    fidelities: Tuple[int, ...]
    # best and worst attainable values at r_max, when known
    y_min: Optional[float] = None
    y_max: Optional[float] = None

    @property
    def r_max(self) -> int:
        return self.fidelities[-1]

    def evaluate(self, config: Config, r: int) -> Tuple[float, float]:
        raise NotImplementedError


def _stable_key(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def noise_std(x, kappa: float = DEFAULT_KAPPA):
    """Standard deviation ``sin(x)**2 + kappa`` of the heteroskedastic function."""
    return np.sin(x) ** 2 + kappa


def synthetic_eval(x, rng: np.random.Generator, kappa: float = DEFAULT_KAPPA):
    """One draw of ``N(0, (sin(x)**2 + kappa)**2)`` per entry of ``x``."""
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    x = np.asarray(x, dtype=float)
    y = noise_std(x, kappa) * rng.standard_normal(x.shape)
    return float(y) if y.ndim == 0 else y


class SyntheticHeteroskedastic(Blackbox):
    """Zero-mean noise on ``[0, 2*pi]`` whose spread peaks at ``pi/2`` and ``3*pi/2``.

    Repeated evaluations of one ``x`` with the same seed return the same draw.
    """

    name = "heteroskedastic"

    def __init__(self, kappa: float = DEFAULT_KAPPA, seed: int = 0, elapsed: float = 1.0):
        if kappa <= 0:
            raise ValueError(f"kappa must be positive, got {kappa}")
        self.kappa = kappa
        self.seed = seed
        self.elapsed = elapsed
        self.space = ConfigSpace([("x", Uniform(0.0, 2 * math.pi))])
        self.fidelities = (1,)

    def evaluate(self, config: Config, r: int) -> Tuple[float, float]:
        if r != 1:
            raise LookupError(f"fidelity {r} not available (single-fidelity blackbox)")
        x = config["x"]
        bits = struct.unpack("<q", struct.pack("<d", x))[0]
        rng = np.random.default_rng([self.seed, _stable_key(bits, r)])
        return synthetic_eval(x, rng, self.kappa), self.elapsed

    def sample_dataset(self, n: int, rng: np.random.Generator):
        """``n`` i.i.d. ``(x, y)`` pairs with ``x`` uniform on the domain."""
        x = rng.uniform(0.0, 2 * math.pi, size=n)
        return x, synthetic_eval(x, rng, self.kappa)


LEARNING_CURVE_SPACE = ConfigSpace([
    ("learning_rate", FiniteRange((1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1), log=True)),
    ("batch_size", FiniteRange((16.0, 32.0, 64.0, 128.0, 256.0), log=True)),
    ("n_units", FiniteRange((16.0, 32.0, 64.0, 128.0, 256.0, 512.0), log=True)),
    ("dropout", FiniteRange((0.0, 0.2, 0.4, 0.6))),
    ("activation", Categorical(("relu", "tanh"))),
    ("lr_schedule", Categorical(("cosine", "const"))),
])


def enumerate_space(space: ConfigSpace) -> List[Config]:
    """All configurations of a space made only of discrete domains."""
    grids = []
    for name, dom in space.dims:
        if not isinstance(dom, (Categorical, FiniteRange)):
            raise ValueError(f"dimension {name!r} is continuous and cannot be enumerated")
        grids.append(dom.values)
    return [space.make(vals) for vals in itertools.product(*grids)]


class SyntheticLearningCurves(Blackbox):
    """Tabulated multi-fidelity task whose learning curves never cross.

    ``y(x, r) = a(x) * g(r)`` with ``a > 0`` and ``g`` strictly decreasing, so
    ranking configurations at any fidelity gives the ranking at ``r_max``.
    The final loss ``a(x)`` is a smooth bowl over the encoded hyperparameters
    times log-normal noise whose spread grows with the learning rate.
    """

    name = "synthetic"

    def __init__(self, seed: int = 0, r_max: int = 27, time_per_unit: float = 1.0,
                 curve_exponent: float = 0.3):
        self.seed = seed
        self.space = LEARNING_CURVE_SPACE
        self.fidelities = tuple(range(1, r_max + 1))
        self.time_per_unit = time_per_unit
        self.curve_exponent = curve_exponent
        self.configs = enumerate_space(self.space)
        self._index = {c: i for i, c in enumerate(self.configs)}
        self.final = self._final_losses(self.space.encode_many(self.configs),
                                        np.random.default_rng(seed))
        self.y_min = float(self.final.min())
        self.y_max = float(self.final.max())

    @staticmethod
    def _final_losses(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        lr = (X[:, 0] / math.log(10) + 2.5) / 1.5
        batch = (X[:, 1] / math.log(2) - 6.0) / 2.0
        units = (X[:, 2] / math.log(2) - 6.5) / 2.5
        dropout = X[:, 3]
        relu, cosine = X[:, 4], X[:, 6]
        mean = (0.08 + 0.25 * (lr - 0.2) ** 2 + 0.1 * (batch - 0.5 * lr) ** 2
                + 0.06 * (units - 0.4) ** 2 + 0.15 * (dropout - 0.2 - 0.2 * units) ** 2
                - 0.02 * relu - 0.015 * cosine + 0.04)
        spread = 0.05 + 0.35 * np.clip(lr, 0.0, None) ** 2
        return mean * np.exp(spread * rng.standard_normal(len(X)))

    def curve(self, r) -> np.ndarray:
        return (self.r_max / np.asarray(r, dtype=float)) ** self.curve_exponent

    def final_loss(self, config: Config) -> float:
        return float(self.final[self._index[config]])

    def evaluate(self, config: Config, r: int) -> Tuple[float, float]:
        try:
            i = self._index[config]
        except KeyError:
            raise LookupError(f"unknown configuration {config}") from None
        if r not in self.fidelities:
            raise LookupError(f"fidelity {r} not in 1..{self.r_max}")
        prev = self.fidelities[self.fidelities.index(r) - 1] if r != self.fidelities[0] else 0
        return float(self.final[i] * self.curve(r)), self.time_per_unit * (r - prev)

    def to_tabular(self) -> "TabularBlackbox":
        rows = {}
        for c in self.configs:
            for r in self.fidelities:
                rows[(c, r)] = self.evaluate(c, r)
        return TabularBlackbox(self.space, self.fidelities, rows)


class TabularFormatError(ValueError):
    pass


class TabularBlackbox(Blackbox):
    """Exact-match lookup on ``(config, fidelity)``."""

    name = "tabular"

    def __init__(self, space: ConfigSpace, fidelities: Sequence[int],
                 rows: Dict[Tuple[Config, int], Tuple[float, float]]):
        self.space = space
        self.fidelities = tuple(int(r) for r in fidelities)
        self.rows = rows
        finals = [y for (c, r), (y, _) in rows.items() if r == self.r_max]
        self.y_min = min(finals) if finals else None
        self.y_max = max(finals) if finals else None

    def evaluate(self, config: Config, r: int) -> Tuple[float, float]:
        try:
            return self.rows[(config, r)]
        except KeyError:
            raise LookupError(f"no tabulated result for {config} at fidelity {r}") from None


def _format_value(dom, v) -> str:
    if isinstance(dom, Categorical):
        return v if isinstance(v, str) else json.dumps(v)
    return repr(float(v))


def write_tabular(blackbox: TabularBlackbox, path) -> None:
    """Write a JSON header line followed by ``dims..., r, y, elapsed`` CSV rows."""
    header = {"space": blackbox.space.to_dict(), "r_max": blackbox.r_max,
              "fidelities": list(blackbox.fidelities)}
    with open(path, "w", newline="") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for (config, r), (y, elapsed) in blackbox.rows.items():
            cells = [_format_value(dom, v) for (_, dom), v in zip(blackbox.space.dims, config.values)]
            writer.writerow(cells + [str(r), repr(float(y)), repr(float(elapsed))])


def tabular_load(path) -> TabularBlackbox:
    """Parse a tabulated blackbox file; errors carry the offending line number."""
    with open(path, newline="") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
            space = ConfigSpace.from_dict(header["space"])
            fidelities = [int(r) for r in header["fidelities"]]
            r_max = int(header["r_max"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TabularFormatError(f"line 1: bad header: {exc}") from exc
        if not fidelities or fidelities[-1] != r_max:
            raise TabularFormatError(f"line 1: r_max={r_max} must be the last fidelity {fidelities}")
        labels = []
        for _, dom in space.dims:
            if isinstance(dom, Categorical):
                labels.append({_format_value(dom, v): v for v in dom.values})
            else:
                labels.append(None)
        k = len(space.dims)
        rows = {}
        for lineno, cells in enumerate(csv.reader(fh), start=2):
            if not cells:
                continue
            try:
                if len(cells) != k + 3:
                    raise ValueError(f"expected {k + 3} fields, got {len(cells)}")
                vals = [lab[c] if lab is not None else float(c) for lab, c in zip(labels, cells[:k])]
                config = space.make(vals)
                r = int(cells[k])
                if r not in fidelities:
                    raise ValueError(f"fidelity {r} not declared in header")
                y, elapsed = float(cells[k + 1]), float(cells[k + 2])
            except (ValueError, KeyError) as exc:
                raise TabularFormatError(f"line {lineno}: {exc}") from exc
            rows[(config, r)] = (y, elapsed)
    return TabularBlackbox(space, fidelities, rows)


@dataclass(frozen=True)
class StopRule:
    max_results: Optional[int] = None
    max_sim_time: Optional[float] = None

    def __post_init__(self):
        if self.max_results is None and self.max_sim_time is None:
            raise ValueError("a stop rule needs max_results and/or max_sim_time")


@dataclass(frozen=True)
class LogRecord:
    event: str  # start | resume | result | error
    time: float
    worker: int
    trial_id: int
    fidelity: int
    value: Optional[float] = None
    decision: str = ""
    config: str = ""


LOG_COLUMNS = ("event", "time", "worker", "trial_id", "fidelity", "value", "decision", "config")


class ExperimentLog:
    """Append-only, time-ordered record of a simulated run."""

    def __init__(self, records: Optional[List[LogRecord]] = None):
        self.records: List[LogRecord] = list(records or [])

    def append(self, rec: LogRecord):
        if self.records and rec.time < self.records[-1].time:
            raise ValueError("log times must be nondecreasing")
        self.records.append(rec)

    def results(self) -> Iterator[LogRecord]:
        return (r for r in self.records if r.event == "result")

    def __len__(self):
        return len(self.records)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for r in self.records:
            writer.writerow([r.event, repr(r.time), r.worker, r.trial_id, r.fidelity,
                             "" if r.value is None else repr(r.value), r.decision, r.config])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "ExperimentLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if tuple(next(reader)) != LOG_COLUMNS:
                raise ValueError(f"{path}: unexpected log header")
            recs = [LogRecord(e, float(t), int(w), int(tid), int(r),
                              None if v == "" else float(v), d, c)
                    for e, t, w, tid, r, v, d, c in reader]
        return cls(recs)


class SimulationError(RuntimeError):
    def __init__(self, message: str, log: ExperimentLog):
        super().__init__(message)
        self.log = log


def _config_json(config: Config) -> str:
    return json.dumps(dict(config), separators=(",", ":"))


def run(blackbox: Blackbox, scheduler, workers: int, stop_rule: StopRule, seed: int,
        suggest_time: float = 0.0) -> ExperimentLog:
    """Simulate ``workers`` parallel workers driven by ``scheduler``.

    Events are processed in ``(time, worker, trial id)`` order. ``suggest_time``
    is a fixed simulated cost charged before each newly started trial begins
    its first evaluation.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    rng = np.random.default_rng(seed)
    log = ExperimentLog()
    heap: List[tuple] = []

    def launch(worker, trial_id, r, t):
        config = scheduler.trials[trial_id].config
        try:
            y, elapsed = blackbox.evaluate(config, r)
        except Exception as exc:
            log.append(LogRecord("error", t, worker, trial_id, r, None, type(exc).__name__,
                                 f"{exc}"))
            raise SimulationError(f"evaluation of trial {trial_id} at fidelity {r} failed: {exc}",
                                  log) from exc
        if not elapsed > 0:
            raise SimulationError(f"non-positive elapsed time {elapsed} for trial {trial_id}", log)
        heapq.heappush(heap, (t + elapsed, worker, trial_id, r, y))

    def assign(worker, t):
        a = scheduler.next_action(rng)
        log.append(LogRecord(a.kind, t, worker, a.trial_id, a.fidelity, None, "",
                             _config_json(a.config)))
        launch(worker, a.trial_id, a.fidelity, t + (suggest_time if a.kind == "start" else 0.0))

    for w in range(workers):
        assign(w, 0.0)

    n_results = 0
    while heap:
        t, w, tid, r, y = heapq.heappop(heap)
        if stop_rule.max_sim_time is not None and t > stop_rule.max_sim_time:
            break
        decision = scheduler.on_result(tid, r, y)
        log.append(LogRecord("result", t, w, tid, r, y, decision, ""))
        n_results += 1
        if stop_rule.max_results is not None and n_results >= stop_rule.max_results:
            break
        if decision == CONTINUE:
            launch(w, tid, scheduler.next_fidelity(tid), t)
        else:
            assign(w, t)
    return log
