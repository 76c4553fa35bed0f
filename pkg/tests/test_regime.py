import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from digicopy import (BlockEntry, BlockingSchedule, ControlRegime, InputError, ParseError, StepRangeError,
                      SystemModel, Trajectory, apply_blocking, apply_control, parse_schedule)
from digicopy.data import example_path
from digicopy.regime import format_schedule
from oracles import matvec


def test_null_and_identity_control(rng):
    y = rng.normal(size=4)
    assert apply_control(ControlRegime("null", np.zeros((2, 4)), T=5), 1, y).tolist() == [0, 0]
    assert apply_control(ControlRegime("id", np.eye(4), T=5), 3, y).tolist() == y.tolist()


def test_control_matches_matvec(rng):
    W, y = rng.normal(size=(3, 5)), rng.normal(size=5)
    u = apply_control(ControlRegime("w", W, T=2), 2, y)
    np.testing.assert_allclose(u, matvec(W, y), atol=1e-12, rtol=0)


def test_control_out_of_range():
    with pytest.raises(StepRangeError):
        apply_control(ControlRegime("w", np.eye(2), T=3), 4, [1, 1])


def test_blocked_control_rows_are_zeroed():
    model = SystemModel(3, 2, 0, 10, B=[[1, 0], [1, 0], [0, 1]])
    regime = ControlRegime("r", np.ones((2, 3)), BlockingSchedule([("x1", 2, 4), ("x3", 3, 5)]))
    y = np.ones(3)
    # control 0 drives x1 and x2; only x1 blocked -> stays on
    assert apply_control(regime, 3, y, model).tolist() == [3.0, 0.0]
    assert apply_control(regime, 6, y, model).tolist() == [3.0, 3.0]
    both = ControlRegime("r", np.ones((2, 3)), BlockingSchedule([("x1", 1, 2), ("x2", 1, 2)]))
    assert apply_control(both, 1, y, model).tolist() == [0.0, 3.0]


def test_regime_label_required():
    with pytest.raises(InputError):
        ControlRegime(" ")


def test_empty_schedule_is_identity(rng):
    traj = Trajectory(rng.normal(size=(5, 3)))
    assert apply_blocking(traj, BlockingSchedule()) == traj


def test_block_whole_column(rng):
    traj = Trajectory(rng.normal(size=(6, 4)))
    out = apply_blocking(traj, BlockingSchedule([("x3", 1, 6)]))
    assert out.values[:, 2].tolist() == [0.0] * 6
    np.testing.assert_array_equal(np.delete(out.values, 2, axis=1), np.delete(traj.values, 2, axis=1))


def test_block_missing_value(rng):
    traj = Trajectory(rng.normal(size=(6, 2)))
    out = apply_blocking(traj, BlockingSchedule([BlockEntry("x1", 2, 3, value=np.nan)]))
    assert np.isnan(out.values[1:3, 0]).all() and out.n_missing == 2


def test_table_row_changes_exactly_its_periods():
    sched = parse_schedule(example_path().replace("scenario.yaml", "blocked_duties.csv"))
    names = ("concept_engineer_docs", "other")
    traj = Trajectory(np.full((73, 2), 5.0), names)
    only = BlockingSchedule([e for e in sched if e.variable == "concept_engineer_docs"])
    out = apply_blocking(traj, only)
    assert (out.values != traj.values).sum() == 19
    assert (out.values[:19, 0] == 0).all() and out.values[19, 0] == 5.0


def test_unresolvable_variable():
    traj = Trajectory(np.zeros((4, 2)))
    with pytest.raises(InputError, match="ghost"):
        apply_blocking(traj, BlockingSchedule([("ghost", 1, 2)]))


def test_entry_validation():
    with pytest.raises(InputError):
        BlockEntry("x1", 5, 3)
    with pytest.raises(InputError):
        BlockEntry("x1", 0, 3)
    with pytest.raises(InputError):
        apply_blocking(Trajectory(np.zeros((4, 1))), BlockingSchedule([("x1", 2, 9)]))


def test_parse_table_line():
    sched = parse_schedule('variable,start,end,annotation\n'
                           'proof_engineer_specs,38,42,"Creation of work production projects"\n')
    assert len(sched) == 1
    e = sched.entries[0]
    assert (e.variable, e.start, e.end, e.annotation) == \
        ("proof_engineer_specs", 38, 42, "Creation of work production projects")


def test_parse_singleton_and_lists():
    sched = parse_schedule('variable,start,end,annotation\n'
                           'a,5,5,x\n'
                           'b,"1 - 20, 25, 38, 50, 62",,y\n'
                           'c,3-4,,\n')
    assert [(e.variable, e.start, e.end) for e in sched] == [
        ("a", 5, 5), ("b", 1, 20), ("b", 25, 25), ("b", 38, 38), ("b", 50, 50), ("b", 62, 62), ("c", 3, 4)]


def test_parse_merges_overlaps():
    sched = parse_schedule("variable,start,end,annotation\nv,1,10,\nv,5,20,\n")
    assert [(e.start, e.end) for e in sched] == [(1, 20)]


@pytest.mark.parametrize("text,line", [
    ("variable,start,end,annotation\nv,9,3,\n", 2),
    ("variable,start,end,annotation\nv,1,2,\nv,x,3,\n", 3),
    ("variable,start,end,annotation,colour\n", 1),
    ("var,start,end\n", 1),
])
def test_parse_errors_report_line(text, line):
    with pytest.raises(ParseError) as info:
        parse_schedule(text)
    assert info.value.line == line


def test_full_table_parses():
    sched = parse_schedule(example_path().replace("scenario.yaml", "blocked_duties.csv"))
    assert len(sched.variables) == 16
    site = [(e.start, e.end) for e in sched if e.variable == "site_supervisor_works"]
    assert site == [(1, 20), (25, 25), (38, 38), (50, 50), (62, 62)]
    assert parse_schedule(format_schedule(sched)) == sched


entries = st.lists(st.tuples(st.sampled_from(["x1", "x2", "x3"]), st.integers(1, 20), st.integers(0, 6)),
                   max_size=8)


def _sched(raw):
    return BlockingSchedule([(v, a, min(a + d, 20)) for v, a, d in raw])


@settings(max_examples=60, deadline=None)
@given(entries, entries, st.integers(0, 1000))
def test_blocking_properties(raw1, raw2, seed):
    traj = Trajectory(np.random.default_rng(seed).normal(size=(20, 3)) + 10)
    s1, s2 = _sched(raw1), _sched(raw2)
    once = apply_blocking(traj, s1)
    assert apply_blocking(once, s1) == once
    assert apply_blocking(once, s2) == apply_blocking(traj, s1.merged(s2))
    blocked = np.zeros((20, 3), dtype=bool)
    for e in s1.resolve(traj.var_names):
        blocked[e.start - 1:e.end, e.variable] = True
    assert np.array_equal(once.values[~blocked], traj.values[~blocked])
    # canonical form has no overlapping or touching runs per variable
    for var in s1.variables:
        spans = sorted((e.start, e.end) for e in s1 if e.variable == var)
        assert all(b[0] > a[1] + 1 for a, b in zip(spans, spans[1:]))


@settings(max_examples=40, deadline=None)
@given(entries, st.integers(1, 20), st.integers(0, 1000))
def test_blocked_control_coordinates_stay_zero(raw, t, seed):
    r = np.random.default_rng(seed)
    model = SystemModel(3, 3, 0, 20, B=np.eye(3))
    regime = ControlRegime("r", r.normal(size=(3, 3)), _sched(raw))
    u = apply_control(regime, t, r.normal(size=3), model)
    for idx in regime.blocking.blocked_at(t, model.var_names):
        assert u[idx] == 0.0
