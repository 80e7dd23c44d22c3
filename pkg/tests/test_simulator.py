import math

import numpy as np
import pytest

from cqrhpo.config_space import Categorical, ConfigSpace, FiniteRange, Uniform
from cqrhpo.scheduler import ASHAScheduler, FIFOScheduler
from cqrhpo.searcher import QuantileSearcher, RandomSearcher
from cqrhpo.simulator import (
    Blackbox,
    ExperimentLog,
    LogRecord,
    SimulationError,
    StopRule,
    SyntheticHeteroskedastic,
    SyntheticLearningCurves,
    TabularBlackbox,
    TabularFormatError,
    noise_std,
    run,
    synthetic_eval,
    tabular_load,
    write_tabular,
)


@pytest.fixture(scope="module")
def curves():
    return SyntheticLearningCurves(seed=0)


def test_noise_std_at_zero():
    y = synthetic_eval(np.zeros(100_000), np.random.default_rng(0))
    assert 0.297 <= y.std() <= 0.303
    assert noise_std(0.0) == pytest.approx(0.3)


def test_noise_std_at_peak():
    y = synthetic_eval(np.full(100_000, math.pi / 2), np.random.default_rng(1))
    assert y.std() == pytest.approx(1.3, rel=0.01)


@pytest.mark.parametrize("x", [0.0, 1.0, math.pi / 2, 4.0])
def test_noise_is_zero_mean(x):
    y = synthetic_eval(np.full(100_000, x), np.random.default_rng(2))
    assert abs(y.mean()) <= 0.02


def test_heteroskedastic_blackbox_is_repeatable():
    bb = SyntheticHeteroskedastic(seed=3)
    c = bb.space.make([1.234])
    assert bb.evaluate(c, 1) == bb.evaluate(c, 1)
    assert bb.evaluate(c, 1) != SyntheticHeteroskedastic(seed=4).evaluate(c, 1)
    with pytest.raises(LookupError):
        bb.evaluate(c, 2)
    with pytest.raises(ValueError):
        SyntheticHeteroskedastic(kappa=0.0)


def test_learning_curves_never_cross(curves):
    finals = curves.final
    order = np.argsort(finals, kind="stable")
    for r in (1, 3, 9, 27):
        ys = np.array([curves.evaluate(curves.configs[i], r)[0] for i in order[::37]])
        assert np.all(np.diff(ys) >= 0)
    assert curves.y_min == pytest.approx(finals.min())
    c = curves.configs[5]
    assert curves.evaluate(c, 27)[0] == curves.final_loss(c)
    assert curves.evaluate(c, 3) == pytest.approx((curves.final_loss(c) * 9 ** 0.3, 1.0))


def test_learning_curves_reject_unknown_keys(curves):
    with pytest.raises(LookupError):
        curves.evaluate(curves.configs[0], 28)
    other = ConfigSpace([("x", Uniform(0, 1))]).make([0.5])
    with pytest.raises(LookupError):
        curves.evaluate(other, 1)


def tiny_tabular():
    space = ConfigSpace([("opt", Categorical(("adam", "sgd"))), ("flag", Categorical((True, None))),
                         ("lr", FiniteRange((0.01, 0.1)))])
    rows = {}
    rng = np.random.default_rng(0)
    for opt in ("adam", "sgd"):
        for flag in (True, None):
            for lr in (0.01, 0.1):
                c = space.make([opt, flag, lr])
                for r in (1, 2, 4):
                    rows[(c, r)] = (float(rng.standard_normal() / 3), float(rng.uniform(1, 5)))
    return TabularBlackbox(space, (1, 2, 4), rows)


def test_tabular_round_trip_is_bit_identical(tmp_path):
    bb = tiny_tabular()
    path = tmp_path / "bb.csv"
    write_tabular(bb, path)
    again = tabular_load(path)
    assert again.space == bb.space and again.fidelities == bb.fidelities
    for key, val in bb.rows.items():
        assert again.evaluate(*key) == val


def test_generated_task_round_trip(tmp_path, curves):
    path = tmp_path / "curves.csv"
    write_tabular(curves.to_tabular(), path)
    loaded = tabular_load(path)
    for c in curves.configs[::101]:
        for r in (1, 13, 27):
            assert loaded.evaluate(c, r) == curves.evaluate(c, r)
    assert loaded.y_min == curves.y_min and loaded.y_max == curves.y_max


def test_single_row_file(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text('{"space":{"dims":[{"name":"c","kind":"categorical","values":["a"]}]},'
                    '"r_max":1,"fidelities":[1]}\n'
                    "a,1,0.5,10\n")
    bb = tabular_load(path)
    c = bb.space.make(["a"])
    assert bb.evaluate(c, 1) == (0.5, 10.0)
    with pytest.raises(LookupError):
        bb.evaluate(c, 2)


def test_y_bounds_match_a_scan_of_final_rows():
    bb = tiny_tabular()
    finals = []
    for (c, r), (y, _) in bb.rows.items():
        if r == 4:
            finals.append(y)
    assert bb.y_min == min(finals) and bb.y_max == max(finals)


@pytest.mark.parametrize("body, line", [
    ("adam,true,0.01,1,0.5\n", 2),
    ("adam,true,0.01,1,0.5,1.0\nsgd,true,0.02,1,0.5,1.0\n", 3),
    ("adam,true,0.01,1,0.5,1.0\nadam,true,0.01,3,0.5,1.0\n", 3),
    ("adam,true,0.01,1,zero,1.0\n", 2),
    ("nadam,true,0.01,1,0.5,1.0\n", 2),
])
def test_parse_errors_report_line_numbers(tmp_path, body, line):
    space = ConfigSpace([("opt", Categorical(("adam", "sgd"))), ("flag", Categorical((True, False))),
                         ("lr", FiniteRange((0.01, 0.1)))])
    header = '{"space":%s,"r_max":4,"fidelities":[1,2,4]}\n' % space.to_json()
    path = tmp_path / "bad.csv"
    path.write_text(header + body)
    with pytest.raises(TabularFormatError, match=f"line {line}:"):
        tabular_load(path)


def test_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("not json\n")
    with pytest.raises(TabularFormatError, match="line 1"):
        tabular_load(path)


def _rs_asha(bb, variant="stopping"):
    return ASHAScheduler(RandomSearcher(bb.space), bb.fidelities, variant=variant)


def test_single_worker_log_is_sequential(curves):
    logs = [run(curves, _rs_asha(curves), 1, StopRule(max_results=200), seed=0) for _ in range(2)]
    assert logs[0].to_csv() == logs[1].to_csv()
    busy_until = 0.0
    for rec in logs[0].records:
        assert rec.worker == 0
        if rec.event == "result":
            assert rec.time >= busy_until
            busy_until = rec.time


def test_result_budget_is_exact(curves):
    log = run(curves, _rs_asha(curves), 4, StopRule(max_results=27 * 200), seed=1)
    assert sum(1 for _ in log.results()) == 27 * 200


def test_same_seed_same_log_with_four_workers(curves):
    def once():
        s = ASHAScheduler(QuantileSearcher(curves.space, num_candidates=100), curves.fidelities)
        return run(curves, s, 4, StopRule(max_results=150), seed=7).to_csv()
    assert once() == once()


def test_time_budget(curves):
    log = run(curves, _rs_asha(curves), 4, StopRule(max_sim_time=50.0), seed=2)
    times = [r.time for r in log.results()]
    assert times and max(times) <= 50.0


@pytest.mark.parametrize("variant", ["stopping", "promotion"])
def test_clock_monotone_and_workers_conserved(curves, variant):
    log = run(curves, _rs_asha(curves, variant), 4, StopRule(max_results=600), seed=3)
    times = [r.time for r in log.records]
    assert times == sorted(times)
    # every worker alternates between an assignment and the results of that job
    current = {}
    for rec in log.records:
        if rec.event in ("start", "resume"):
            assert rec.worker not in current or current[rec.worker] is None
            current[rec.worker] = rec.trial_id
        else:
            assert current.get(rec.worker) == rec.trial_id
            if rec.decision != "continue":
                current[rec.worker] = None
    assert set(current) == {0, 1, 2, 3}


def test_results_follow_the_elapsed_times(curves):
    log = run(curves, FIFOScheduler(RandomSearcher(curves.space), curves.fidelities), 1,
              StopRule(max_results=54), seed=0)
    times = [r.time for r in log.results()]
    np.testing.assert_allclose(times, np.arange(1, 55))


def test_suggest_time_delays_new_trials(curves):
    base = run(curves, _rs_asha(curves), 2, StopRule(max_results=40), seed=0)
    slow = run(curves, _rs_asha(curves), 2, StopRule(max_results=40), seed=0, suggest_time=0.5)
    starts = sum(1 for r in slow.records if r.event == "start")
    assert starts > 2
    assert [r.time for r in slow.results()][-1] > [r.time for r in base.results()][-1]
    times = [r.time for r in slow.records]
    assert times == sorted(times)


class _Exploding(Blackbox):
    def __init__(self):
        self.space = ConfigSpace([("x", Uniform(0, 1))])
        self.fidelities = (1,)
        self.calls = 0

    def evaluate(self, config, r):
        self.calls += 1
        if self.calls > 3:
            raise RuntimeError("disk on fire")
        return 0.5, 1.0


def test_blackbox_failure_is_logged():
    bb = _Exploding()
    with pytest.raises(SimulationError) as info:
        run(bb, FIFOScheduler(RandomSearcher(bb.space), bb.fidelities), 2,
            StopRule(max_results=10), seed=0)
    last = info.value.log.records[-1]
    assert last.event == "error" and "disk on fire" in last.config


def test_log_csv_round_trip(tmp_path, curves):
    log = run(curves, _rs_asha(curves), 3, StopRule(max_results=60), seed=4)
    path = tmp_path / "log.csv"
    log.save(path)
    again = ExperimentLog.load(path)
    assert again.records == log.records
    assert again.to_csv() == path.read_text()


def test_log_rejects_time_travel():
    log = ExperimentLog([LogRecord("result", 2.0, 0, 0, 1, 0.1)])
    with pytest.raises(ValueError):
        log.append(LogRecord("result", 1.0, 0, 1, 1, 0.1))


def test_stop_rule_needs_a_limit():
    with pytest.raises(ValueError):
        StopRule()
