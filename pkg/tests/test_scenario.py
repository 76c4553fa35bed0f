import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from digicopy import (BlockingSchedule, ComparisonError, ControlRegime, IndicatorReport, InputError,
                      Objective, ResourceError, Scenario, SystemModel, Trajectory, apply_blocking,
                      check_optimality, compare, estimate_blocked_cost, integral_indicator, run_pipeline)
from digicopy.scenario import PipelineError
from oracles import enumerate_scalar

NAMES = ("a", "b")


def test_reported_totals():
    res = compare(IndicatorReport.summary_only(155_896, 12, NAMES), IndicatorReport.summary_only(155_150, 12, NAMES))
    assert res.delta == -746
    assert len(res.delta_series[0]) == 0


def test_identical_reports():
    X = np.random.default_rng(0).normal(size=(20, 3))
    rep = integral_indicator(Trajectory(X), 5)
    res = compare(rep, rep)
    assert res.delta == 0
    assert not res.delta_series[0].any()
    assert len(res.delta_series[0]) == 16


def test_extra_valid_step_delta():
    x = np.arange(1.0, 7) ** 2
    short = integral_indicator(Trajectory(np.column_stack([x[:5], 3 * x[:5]])), 3)
    longer = integral_indicator(Trajectory(np.column_stack([x, 3 * x])), 3)
    res = compare(short, longer)
    # G_t = 4 per valid step: 3 steps vs 4 steps
    assert res.delta == pytest.approx(4.0, rel=1e-12)
    assert res.delta_steps[0].tolist() == [3, 4, 5]


def test_comparison_mismatch():
    a = IndicatorReport.summary_only(1, 12, NAMES)
    with pytest.raises(ComparisonError):
        compare(a, IndicatorReport.summary_only(1, 6, NAMES))
    with pytest.raises(ComparisonError):
        compare(a, IndicatorReport.summary_only(1, 12, ("a", "c")))


def test_reference_note():
    res = compare(IndicatorReport.summary_only(10, 3, NAMES), IndicatorReport.summary_only(7, 3, NAMES), -2.9)
    assert "-3.0" in res.notes[0] and "-2.9" in res.notes[0]


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_antisymmetry(g1, g2):
    a, b = IndicatorReport.summary_only(g1, 4, NAMES), IndicatorReport.summary_only(g2, 4, NAMES)
    assert compare(a, b).delta == -compare(b, a).delta


# -- blocked cost


def test_blocked_cost_examples():
    assert estimate_blocked_cost(BlockingSchedule(), {}).total == 0
    cost = estimate_blocked_cost(BlockingSchedule([("eng", 1, 19)]), {"eng": 2}, project_total=100)
    assert cost.total == 38 and cost.fraction == 0.38


def test_blocked_cost_missing_entry():
    with pytest.raises(InputError, match="eng"):
        estimate_blocked_cost(BlockingSchedule([("eng", 1, 2)]), {})


def test_blocked_cost_on_merged_schedule():
    raw = [("a", 1, 10), ("a", 5, 20), ("b", 3, 3)]
    table = {"a": 1.5, "b": 4.0}
    merged_periods = {"a": 20, "b": 1}
    oracle = sum(merged_periods[v] * table[v] for v in merged_periods)
    assert estimate_blocked_cost(BlockingSchedule(raw), table).total == oracle


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.integers(1, 30), st.integers(0, 5)), max_size=10),
       st.randoms())
def test_blocked_cost_order_and_split_invariant(raw, rnd):
    table = {"a": 0.1, "b": 2.7, "c": 13.0}
    entries = [(v, s, s + d) for v, s, d in raw]
    shuffled = list(entries)
    rnd.shuffle(shuffled)
    split = []
    for v, s, e in entries:
        mid = (s + e) // 2
        split += [(v, s, mid), (v, mid, e)]
    base = estimate_blocked_cost(BlockingSchedule(entries), table).total
    assert estimate_blocked_cost(BlockingSchedule(shuffled), table).total == base
    assert estimate_blocked_cost(BlockingSchedule(split), table).total == base


# -- optimality


def scalar_model(a=1.0, b=1.0, T=10):
    return SystemModel(1, 1, 0, T, A=[[a]], B=[[b]])


def test_single_step_abs_objective():
    res = check_optimality(scalar_model(), Objective([0], kind="abs"), [[-1], [0], [1]], 1,
                           np.arange(-5.0, 6.0), [1.0])
    assert res.actions[0].tolist() == [-1.0]
    assert res.value == 0.0


def test_zero_objective():
    res = check_optimality(scalar_model(), Objective([0], terminal_weight=0.0), [[-1], [1]], 3,
                           np.linspace(-3, 3, 7), [0.0])
    assert res.value == 0.0


def test_two_step_quadratic_matches_enumeration():
    grid = np.linspace(-2, 2, 21)
    actions = [-0.6, -0.2, 0.0, 0.3]
    obj = Objective([0], kind="quadratic", setpoint=0.5, stage_weight=1.0)
    res = check_optimality(scalar_model(0.8, 1.0), obj, [[u] for u in actions], 2, grid, [1.7])
    oracle = enumerate_scalar(0.8, 1.0, actions, 2, grid.tolist(), 1.7,
                              lambda x: (x - 0.5) * (x - 0.5), lambda x: (x - 0.5) * (x - 0.5))
    assert res.value == oracle
    assert obj.evaluate(res.states) == res.value


def test_optimality_budgets():
    grid = np.linspace(-1, 1, 5)
    with pytest.raises(ResourceError):
        check_optimality(scalar_model(T=100), Objective([0]), [[0]], 65, grid, [0])
    with pytest.raises(ResourceError):
        check_optimality(scalar_model(), Objective([0]), [[i] for i in range(65)], 2, grid, [0])


def test_two_dimensional_grid():
    model = SystemModel(2, 1, 0, 5, A=np.eye(2), B=[[1], [0.5]])
    res = check_optimality(model, Objective([0, 1], kind="abs"), [[-1], [0], [1]], 2,
                           [np.arange(-4.0, 5.0), np.arange(-4.0, 5.0, 0.5)], [2.0, 1.0])
    assert res.value == 0.0
    assert res.states[-1].tolist() == [0.0, 0.0]


# -- pipeline


def six_variable_model(T=40):
    r = np.random.default_rng(5)
    A = 0.5 * np.eye(6) + 0.08 * r.normal(size=(6, 6))
    return SystemModel(6, 0, 6, T, A=A)


def six_variable_scenario(alternatives):
    from digicopy import DisturbanceSpec
    dist = DisturbanceSpec([(i, 1.0 + i, 5 + i, 0.2 * i) for i in range(6)], {i: 0.5 for i in range(6)})
    return Scenario(ControlRegime("base"), alternatives, 8, model=six_variable_model(),
                    x0=np.ones(6), disturbance=dist, seed=3)


def test_pipeline_alternative_equal_to_baseline():
    res = run_pipeline(six_variable_scenario([ControlRegime("same")]))
    assert res.delta == 0.0
    assert [entry["step"] for entry in res.log] == [1, 2, 2, 3, 4]


def test_pipeline_blocking_dead_variable():
    X = np.random.default_rng(1).normal(size=(30, 4))
    X[:, 2] = 0.0
    scn = Scenario(ControlRegime("base"), [ControlRegime("blk", blocking=[("x3", 1, 30)])], 6,
                   trajectory=Trajectory(X))
    assert run_pipeline(scn).delta == 0.0


def test_pipeline_equals_manual_composition():
    sched = BlockingSchedule([("x2", 1, 20), ("x5", 1, 20)])
    res = run_pipeline(six_variable_scenario([ControlRegime("half", blocking=sched)]))
    scn = six_variable_scenario([])
    from digicopy import simulate
    traj = simulate(scn.model, scn.x0, None, scn.disturbance, scn.seed)
    manual = compare(integral_indicator(traj, 8), integral_indicator(apply_blocking(traj, sched), 8))
    assert res.delta == manual.delta
    np.testing.assert_array_equal(res.delta_series[0], manual.delta_series[0])


def test_pipeline_is_deterministic():
    sched = BlockingSchedule([("x1", 3, 12)])
    a = run_pipeline(six_variable_scenario([ControlRegime("b", blocking=sched)]))
    b = run_pipeline(six_variable_scenario([ControlRegime("b", blocking=sched)]))
    assert a.summary() == b.summary()


def test_pipeline_with_dp_step():
    model = SystemModel(1, 1, 0, 12, A=[[0.9]], B=[[1.0]])
    scn = Scenario(ControlRegime("base", [[-0.5]]), [ControlRegime("open")], 4, model=model, x0=[2.0],
                   disturbance=None, objective=Objective([0], kind="abs", stage_weight=1.0),
                   controls=[[-1.0], [0.0], [1.0]], grid=np.linspace(-3, 3, 61), horizon=5)
    res = run_pipeline(scn)
    step3 = [e for e in res.log if e["step"] == 3][0]
    assert step3["branch"] == "dynamic-programming"
    oracle = enumerate_scalar(0.9, 1.0, [-1.0, 0.0, 1.0], 5, np.linspace(-3, 3, 61).tolist(), 2.0,
                              abs, abs)
    assert res.optimality.value == oracle
    assert step3["verdict"].startswith("baseline")


def test_pipeline_errors_name_the_step():
    scn = Scenario(ControlRegime("base"), [ControlRegime("base")], 4, trajectory=Trajectory(np.zeros((8, 2))))
    with pytest.raises(PipelineError, match="step 1"):
        run_pipeline(scn)
    scn = Scenario(ControlRegime("base"), [ControlRegime("x", blocking=[("nope", 1, 2)])], 4,
                   trajectory=Trajectory(np.zeros((8, 2))))
    with pytest.raises(PipelineError, match="step 2"):
        run_pipeline(scn)
