"""Experiment orchestration: build tasks and methods, run seeds, aggregate metrics."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import metrics
from .quantile_gbm import GbmParams
from .scheduler import ASHAScheduler, FIFOScheduler
from .searcher import QuantileSearcher, RandomSearcher
from .simulator import (
    Blackbox,
    ExperimentLog,
    SimulationError,
    StopRule,
    SyntheticHeteroskedastic,
    SyntheticLearningCurves,
    run,
    tabular_load,
)

logger = logging.getLogger(__name__)

SEARCHERS = ("rs", "qr", "cqr")
METHODS = SEARCHERS + tuple(f"{s}+mf" for s in SEARCHERS)
METHOD_ALIASES = {"asha": "rs+mf"}
BUILTIN_TASKS = ("synthetic", "heteroskedastic")


class SpecError(ValueError):
    """Invalid experiment specification; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentSpec:
    task: str = "synthetic"
    methods: List[str] = field(default_factory=lambda: ["cqr+mf"])
    seeds: List[int] = field(default_factory=lambda: [0])
    workers: int = 4
    # "<k>x" means k * r_max results
    max_results: Optional[str] = "200x"
    max_sim_time: Optional[float] = None
    m: int = 4
    num_candidates: int = 2000
    val_fraction: float = 0.1
    conformal_threshold: int = 32
    n_init: int = 10
    eta: int = 3
    grace_period: int = 1
    asha_variant: str = "stopping"
    task_seed: int = 0
    kappa: float = 0.3
    suggest_time: float = 0.0
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 5

    def validate(self) -> "ExperimentSpec":
        self.methods = [METHOD_ALIASES.get(m, m) for m in self.methods]
        for m in self.methods:
            if m not in METHODS:
                raise SpecError("method", f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise SpecError("method", "methods must be distinct")
        if not self.seeds:
            raise SpecError("seeds", "at least one seed is required")
        if self.workers < 1:
            raise SpecError("workers", "must be >= 1")
        if self.max_results is None and self.max_sim_time is None:
            raise SpecError("max_results", "need max_results and/or max_sim_time")
        if self.max_results is not None:
            _parse_max_results(self.max_results, 1)
        if self.max_sim_time is not None and not self.max_sim_time > 0:
            raise SpecError("max_sim_time", "must be positive")
        if self.m < 2 or self.m % 2:
            raise SpecError("m", "must be an even integer >= 2")
        if self.num_candidates < 1:
            raise SpecError("num_candidates", "must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise SpecError("val_fraction", "must lie in (0, 1)")
        if self.eta < 2:
            raise SpecError("eta", "must be >= 2")
        if self.grace_period < 1:
            raise SpecError("grace_period", "must be >= 1")
        if self.asha_variant not in ("stopping", "promotion"):
            raise SpecError("asha_variant", "must be 'stopping' or 'promotion'")
        if self.task not in BUILTIN_TASKS:
            if not Path(self.task).is_file():
                raise SpecError("task", f"{self.task!r} is neither a built-in task {BUILTIN_TASKS} nor a file")
            self.task = str(Path(self.task).resolve())
        try:
            self.gbm_params()
        except ValueError as exc:
            raise SpecError("gbm", str(exc)) from exc
        return self

    def gbm_params(self) -> GbmParams:
        return GbmParams(self.n_trees, self.max_depth, self.learning_rate, self.min_samples_leaf)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(sorted(unknown)[0], "unknown manifest field")
        return cls(**d)


def _parse_max_results(text, r_max: int) -> int:
    s = str(text).strip()
    try:
        value = int(s[:-1]) * r_max if s.endswith("x") else int(s)
    except ValueError:
        raise SpecError("max_results", f"expected an integer or '<k>x', got {text!r}") from None
    if value < 1:
        raise SpecError("max_results", "must be >= 1")
    return value


def load_task(spec: ExperimentSpec) -> Blackbox:
    if spec.task == "synthetic":
        return SyntheticLearningCurves(seed=spec.task_seed)
    if spec.task == "heteroskedastic":
        return SyntheticHeteroskedastic(kappa=spec.kappa, seed=spec.task_seed)
    return tabular_load(spec.task)


def task_name(spec: ExperimentSpec) -> str:
    if spec.task in BUILTIN_TASKS:
        return f"{spec.task}-{spec.task_seed}"
    return Path(spec.task).stem


def build_scheduler(method: str, blackbox: Blackbox, spec: ExperimentSpec):
    base, _, mf = method.partition("+")
    if base == "rs":
        searcher = RandomSearcher(blackbox.space)
    else:
        searcher = QuantileSearcher(
            blackbox.space, m=spec.m, num_candidates=spec.num_candidates,
            val_fraction=spec.val_fraction, conformal_threshold=spec.conformal_threshold,
            n_init=spec.n_init, gbm_params=spec.gbm_params(), conformalize=(base == "cqr"),
        )
    if mf:
        if blackbox.r_max <= 1:
            raise SpecError("method", f"{method} needs a multi-fidelity task (r_max > 1)")
        return ASHAScheduler(searcher, blackbox.fidelities, grace_period=spec.grace_period,
                             eta=spec.eta, variant=spec.asha_variant)
    return FIFOScheduler(searcher, blackbox.fidelities)


def stop_rule(spec: ExperimentSpec, blackbox: Blackbox) -> StopRule:
    max_results = None
    if spec.max_results is not None:
        max_results = _parse_max_results(spec.max_results, blackbox.r_max)
    return StopRule(max_results, spec.max_sim_time)


def log_path(out: Path, method: str, seed: int) -> Path:
    return Path(out) / method / str(seed) / "log.csv"


def _run_values(log: ExperimentLog) -> Tuple[np.ndarray, np.ndarray]:
    res = list(log.results())
    return np.array([r.value for r in res]), np.array([r.time for r in res])


def _regret_table(runs: Dict[Tuple[str, str, int], ExperimentLog],
                  bounds: Dict[str, Tuple[float, float]], n_fractions: int, axis: str):
    """Regret at each budget fraction for every ``(method, task, seed)`` run."""
    budgets: Dict[str, float] = {}
    data = {}
    for (method, task, seed), log in runs.items():
        values, times = _run_values(log)
        data[(method, task, seed)] = (values, times)
        extent = len(values) if axis == "count" else (times[-1] if len(times) else 0.0)
        budgets[task] = max(budgets.get(task, 0.0), float(extent))
    fr = metrics.fractions(n_fractions)
    table = {}
    for key, (values, times) in data.items():
        y_min, y_max = bounds[key[1]]
        curve = metrics.regret_curve(values, times, y_min, y_max)
        table[key] = curve.at(fr * budgets[key[1]], axis=axis)
    return fr, table


def _empirical_bounds(runs, known: Dict[str, Tuple[Optional[float], Optional[float]]]):
    bounds = {}
    for task, (lo, hi) in known.items():
        if lo is not None and hi is not None and hi > lo:
            bounds[task] = (lo, hi)
            continue
        vals = np.concatenate([_run_values(log)[0] for (m, t, s), log in runs.items() if t == task])
        if vals.size == 0 or not vals.max() > vals.min():
            raise ValueError(f"task {task}: cannot normalise regret, observed values are degenerate")
        bounds[task] = (float(vals.min()), float(vals.max()))
    return bounds


def metric_rows(runs, bounds, n_fractions: int = metrics.DEFAULT_N_FRACTIONS, axis: str = "count"):
    """Per-run regret rows with ranks across methods sharing (task, seed)."""
    fr, table = _regret_table(runs, bounds, n_fractions, axis)
    methods = sorted({k[0] for k in table})
    rows = []
    for task, seed in sorted({(k[1], k[2]) for k in table}):
        present = [m for m in methods if (m, task, seed) in table]
        stacked = np.stack([table[(m, task, seed)] for m in present])
        ranks = metrics.rank_methods(stacked)
        for i, m in enumerate(present):
            for j, f in enumerate(fr):
                rows.append({"method": m, "task": task, "seed": seed, "fraction": float(f),
                             "regret": float(stacked[i, j]), "rank": float(ranks[i, j])})
    return rows


def run_experiment(spec: ExperimentSpec, out) -> Path:
    """Run every (method, seed) pair of ``spec`` and write logs, metrics and a manifest."""
    spec.validate()
    blackbox = load_task(spec)
    for method in spec.methods:
        build_scheduler(method, blackbox, spec)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rule = stop_rule(spec, blackbox)
    task = task_name(spec)
    manifest = {"spec": spec.to_dict(), "task_name": task, "runs": [], "status": "ok"}
    runs = {}
    try:
        for method in spec.methods:
            for seed in spec.seeds:
                scheduler = build_scheduler(method, blackbox, spec)
                path = log_path(out, method, seed)
                path.parent.mkdir(parents=True, exist_ok=True)
                try:
                    log = run(blackbox, scheduler, spec.workers, rule, seed, spec.suggest_time)
                except SimulationError as exc:
                    exc.log.save(path)
                    raise
                log.save(path)
                runs[(method, task, seed)] = log
                manifest["runs"].append({"method": method, "seed": seed,
                                         "log": str(path.relative_to(out)),
                                         "n_results": sum(1 for _ in log.results())})
                logger.info("finished %s seed %d", method, seed)
        bounds = _empirical_bounds(runs, {task: (blackbox.y_min, blackbox.y_max)})
        manifest["y_min"], manifest["y_max"] = bounds[task]
        manifest["bounds_known"] = blackbox.y_min is not None and blackbox.y_max is not None
        metrics.write_metrics_csv(metric_rows(runs, bounds), out / "metrics.csv")
    except Exception as exc:
        manifest["status"] = "error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_manifest(path) -> ExperimentSpec:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    doc = json.loads(path.read_text())
    return ExperimentSpec.from_dict(doc["spec"])


def compare(dirs: Sequence, n_fractions: int = metrics.DEFAULT_N_FRACTIONS, axis: str = "count"):
    """Average regret and rank per (method, fraction) across experiment directories.

    Returns ``(summary_rows, per_run_rows)``.
    """
    if not dirs:
        raise SpecError("dirs", "at least one experiment directory is required")
    runs = {}
    known = {}
    for d in dirs:
        d = Path(d)
        doc = json.loads((d / "manifest.json").read_text())
        task = doc["task_name"]
        # without a known optimum, fall back to observed extremes across all compared runs
        known[task] = (doc["y_min"], doc["y_max"]) if doc.get("bounds_known") else (None, None)
        for entry in doc["runs"]:
            key = (entry["method"], task, entry["seed"])
            if key in runs:
                raise ValueError(f"duplicate run {key} across directories")
            runs[key] = ExperimentLog.load(d / entry["log"])
    if not runs:
        raise ValueError("no runs found in the given directories")

    tasks_by_method: Dict[str, set] = {}
    for m, t, s in runs:
        tasks_by_method.setdefault(m, set()).add((t, s))
    reference = next(iter(tasks_by_method.values()))
    for m, ts in tasks_by_method.items():
        if ts != reference:
            diff = sorted(ts ^ reference)
            raise ValueError(f"method {m} does not share the task/seed set; differences: {diff}")

    bounds = _empirical_bounds(runs, known)
    rows = metric_rows(runs, bounds, n_fractions, axis)
    summary = []
    for m in sorted(tasks_by_method):
        mine = [r for r in rows if r["method"] == m]
        for f in metrics.fractions(n_fractions):
            sel = [r for r in mine if r["fraction"] == f]
            summary.append({"method": m, "fraction": float(f),
                            "regret": float(np.mean([r["regret"] for r in sel])),
                            "rank": float(np.mean([r["rank"] for r in sel]))})
    return summary, rows
