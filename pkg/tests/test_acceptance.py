"""Exit criteria for the engine, one test per criterion.

Run with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per criterion
is printed in the terminal summary.
"""
import resource
import time

import numpy as np
import pytest

from digicopy import (BlockEntry, BlockingSchedule, IndicatorReport, Objective, SystemModel, Trajectory,
                      check_optimality, compare, incremental_indicator, integral_indicator, run_pipeline,
                      window_correlation)
from digicopy import io as dio
from digicopy.data import example_path
from digicopy.regime import format_schedule, parse_schedule
from oracles import correlation_matrix, enumerate_scalar

_bound_cases = []


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def test_criterion_01_reported_delta():
    with Timer() as tm:
        names = tuple(f"x{i}" for i in range(400))
        base = IndicatorReport.summary_only(155_896, 12, names, "G1")
        alt = IndicatorReport.summary_only(155_150, 12, names, "G3")
        res = compare(base, alt, reference_delta=-745.9)
        text = dio.dump_yaml(res.summary())
    assert res.delta == -746
    assert abs(res.delta - (-745.9)) <= 1
    assert "dG: -746" in text and "-745.9" in text and "differs" in text
    assert tm.elapsed < 1.0


def random_window(r):
    n = int(r.integers(1, 11))
    k = int(r.integers(2, 33))
    X = r.normal(size=(k, n)) * r.uniform(0.01, 100, size=n) + r.normal(size=n) * 50
    if r.random() < 0.5:
        X[r.random(X.shape) < r.uniform(0.05, 0.4)] = np.nan
    if r.random() < 0.1 and n > 1:
        X[:, int(r.integers(n))] = r.normal()
    return X


def test_criterion_02_window_oracle():
    r = np.random.default_rng(2)
    with Timer() as tm:
        worst = 0.0
        for _ in range(1000):
            X = random_window(r)
            k = X.shape[0]
            R = window_correlation(Trajectory(X), k, k).values
            worst = max(worst, float(np.abs(R - np.array(correlation_matrix(X.tolist()))).max()))
            _bound_cases.append(("r", float(np.abs(R).max())))
    assert worst <= 1e-10
    assert tm.elapsed < 30


def random_trajectory(r, n_max=50, T_max=200):
    n = int(r.integers(1, n_max + 1))
    T = int(r.integers(3, T_max + 1))
    base = r.normal(size=(T, n)) @ r.normal(size=(n, n)) / np.sqrt(n)
    X = base * r.uniform(0.1, 10, size=n) + r.normal(size=n) * 100
    if r.random() < 0.3:
        X += np.linspace(0, r.uniform(0, 1e4), T)[:, None]
    if r.random() < 0.4:
        X[r.random(X.shape) < r.uniform(0.01, 0.2)] = np.nan
    if r.random() < 0.2:
        X[: T // 2, int(r.integers(n))] = 3.0
    return Trajectory(X)


def test_criterion_03_batch_incremental():
    r = np.random.default_rng(3)
    with Timer() as tm:
        worst = 0.0
        for _ in range(200):
            traj = random_trajectory(r)
            k = int(r.integers(2, min(traj.T, 24) + 1))
            a, b = integral_indicator(traj, k), incremental_indicator(traj, k)
            assert np.array_equal(a.valid_steps, b.valid_steps)
            rel = np.abs(a.G_i - b.G_i) / np.maximum(np.abs(a.G_i), 1e-300)
            rel[(a.G_i == 0) & (b.G_i == 0)] = 0
            worst = max(worst, float(rel.max()), abs(a.G - b.G) / abs(a.G) if a.G else abs(b.G))
            missing = np.isnan(traj.values)
            for end in range(k, traj.T + 1):
                if not missing[end - k:end].any():
                    g_t = a.G_t[end - k]
                    if np.all(a.G_i[end - k] >= 1.0):
                        _bound_cases.append(("G", traj.n, float(g_t)))
    assert worst <= 1e-7
    assert tm.elapsed < 60


def test_criterion_04_invariance():
    r = np.random.default_rng(4)
    with Timer() as tm:
        worst = 0.0
        for _ in range(100):
            traj = random_trajectory(r, n_max=12, T_max=80)
            X, n = traj.values, traj.n
            k = int(r.integers(2, min(traj.T, 16) + 1))
            G = integral_indicator(traj, k).G
            scaled = X * r.uniform(1e-3, 1e3, size=n) + r.normal(size=n) * 1e3
            flipped = X * np.where(r.random(n) < 0.5, -1.0, 1.0)
            permuted = X[:, r.permutation(n)]
            for Y in (scaled, flipped, permuted):
                G2 = integral_indicator(Trajectory(Y), k).G
                worst = max(worst, abs(G2 - G) / abs(G) if G else abs(G2))
    assert worst <= 1e-9
    assert tm.elapsed < 30


def test_criterion_05_bounds():
    r = np.random.default_rng(5)
    for _ in range(500):
        X = random_window(r)
        if r.random() < 0.5:
            X = np.nan_to_num(X, nan=1.0) + r.normal(size=X.shape)
        R = window_correlation(Trajectory(X), X.shape[0], X.shape[0]).values
        _bound_cases.append(("r", float(np.abs(R).max())))
        if not np.isnan(X).any() and np.all(np.diag(R) == 1.0):
            _bound_cases.append(("G", X.shape[1], float(np.abs(R).sum())))
    rs = [c[1] for c in _bound_cases if c[0] == "r"]
    gs = [c for c in _bound_cases if c[0] == "G"]
    assert len(rs) >= 200 and len(gs) >= 100
    assert max(rs) <= 1 + 1e-12
    for _, n, g in gs:
        assert n - 1e-9 <= g <= n * n + 1e-9


def test_criterion_06_blocking_semantics():
    with Timer() as tm:
        scn = dio.load_scenario(example_path())
        assert scn.model.T == 73
        blocked = run_pipeline(scn)
        for regime in scn.alternatives:
            regime.blocking = BlockingSchedule()
        cleared = run_pipeline(scn)
    assert blocked.delta < 0
    assert cleared.delta == 0.0
    assert tm.elapsed < 10


def test_criterion_07_optimality_vs_enumeration():
    r = np.random.default_rng(7)
    grid = np.linspace(-5, 5, 21)
    with Timer() as tm:
        for _ in range(50):
            a, b = float(r.uniform(-1.2, 1.2)), float(r.uniform(-2, 2))
            horizon = int(r.integers(1, 7))
            actions = sorted(set(np.round(r.uniform(-2, 2, size=int(r.integers(1, 6))), 2).tolist()))
            x0 = float(r.uniform(-5, 5))
            kind = ["quadratic", "abs"][int(r.integers(2))]
            sp = float(r.uniform(-2, 2))
            obj = Objective([0], kind=kind, setpoint=sp, stage_weight=1.0)
            f = (lambda x: (x - sp) * (x - sp)) if kind == "quadratic" else (lambda x: abs(x - sp))
            res = check_optimality(SystemModel(1, 1, 0, 6, A=[[a]], B=[[b]]), obj, [[u] for u in actions],
                                   horizon, grid, [x0])
            assert res.value == enumerate_scalar(a, b, actions, horizon, grid.tolist(), x0, f, f)
    assert tm.elapsed < 30


def test_criterion_08_performance():
    X = np.random.default_rng(8).normal(size=(120, 2000))
    traj = Trajectory(X)
    with Timer() as tm:
        inc = incremental_indicator(traj, 12)
    peak_gb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024 ** 2
    print(f"incremental n=2000: {tm.elapsed:.1f}s, peak RSS {peak_gb:.2f} GB")
    assert tm.elapsed < 60
    assert peak_gb < 4
    batch = integral_indicator(traj, 12)
    np.testing.assert_allclose(inc.G_i, batch.G_i, rtol=1e-7)
    assert inc.G == pytest.approx(batch.G, rel=1e-7)


def test_criterion_09_round_trip(tmp_path):
    r = np.random.default_rng(9)
    for i in range(100):
        n, T = int(r.integers(1, 8)), int(r.integers(3, 40))
        X = r.normal(size=(T, n)) * 10.0 ** r.integers(-12, 12, size=n)
        X[r.random(X.shape) < 0.1] = np.nan
        traj = Trajectory(X, [f"v{j}" for j in range(n)], int(r.integers(1, 10)))
        path = dio.write_trajectory(traj, str(tmp_path / f"t{i}.csv"))
        assert dio.ingest_trajectory(path) == traj

        rep = integral_indicator(traj, int(r.integers(2, T + 1)), label=f"regime {i}",
                                 include_diagonal=bool(r.integers(2)))
        ypath, _ = dio.write_report(rep, str(tmp_path), f"rep{i}")
        assert dio.read_report(ypath) == rep

        entries = []
        for _ in range(int(r.integers(0, 6))):
            s = int(r.integers(1, T + 1))
            e = int(r.integers(s, T + 1))
            val = np.nan if r.random() < 0.2 else 0.0
            entries.append(BlockEntry(f"v{int(r.integers(n))}", s, e, f"duty {int(r.integers(99))}", val))
        sched = BlockingSchedule(entries)
        spath = tmp_path / f"s{i}.csv"
        spath.write_text(format_schedule(sched))
        assert parse_schedule(str(spath)) == sched
