"""Regime comparison, the four-step evaluation pipeline, and helpers.

The pipeline mirrors the evaluation loop used to judge a control regime:

1. load or simulate the baseline activity of the system;
2. materialise each declared regime and compute its indicator report;
3. check control optimality on a small discretised problem (advisory);
4. compare every alternative against the baseline.

Loop-backs ("not optimal, start over") are recorded as verdicts in the
pipeline log; the engine never iterates on its own.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ComparisonError, InputError, ResourceError
from .indicator import MIN_OVERLAP, integral_indicator
from .model import DisturbanceSpec, simulate
from .regime import BlockingSchedule, ControlRegime, apply_blocking
from .trajectory import Trajectory

MAX_ACTIONS = 64
MAX_HORIZON = 64
MAX_GRID_POINTS = 2_000_000


class PipelineError(InputError):
    def __init__(self, step, exc):
        self.step = step
        super().__init__(f"pipeline step {step}: {exc}")


# --------------------------------------------------------------------------
# comparison


@dataclass
class ComparisonResult:
    """Baseline report, alternative reports and their indicator deltas.

    ``deltas[i]`` is ``alternatives[i].G - baseline.G``; a negative value
    means the alternative lowered system connectivity.  ``delta_steps[i]``
    and ``delta_series[i]`` hold the per-step ``G_t`` differences over the
    steps valid in both reports.
    """

    baseline: object
    alternatives: list
    deltas: list
    delta_steps: list
    delta_series: list
    costs: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    log: list = field(default_factory=list)
    optimality: object = None
    best: str = None

    @property
    def delta(self):
        return self.deltas[0]

    def summary(self):
        out = {
            "baseline": {"label": self.baseline.label, "G": self.baseline.G},
            "k": self.baseline.k,
            "alternatives": [],
        }
        for i, rep in enumerate(self.alternatives):
            item = {"label": rep.label, "G": rep.G, "dG": self.deltas[i],
                    "steps_compared": int(len(self.delta_steps[i]))}
            if self.costs and self.costs[i] is not None:
                item["blocked_cost"] = self.costs[i].as_dict()
            out["alternatives"].append(item)
        if self.best is not None:
            out["best_regime"] = self.best
        if self.optimality is not None:
            out["optimality"] = self.optimality.as_dict()
        if self.notes:
            out["notes"] = list(self.notes)
        if self.log:
            out["pipeline_log"] = list(self.log)
        return out


def _check_comparable(base, alt):
    if base.k != alt.k:
        raise ComparisonError(f"window lengths differ: {base.k} vs {alt.k}")
    if tuple(base.var_names) != tuple(alt.var_names):
        raise ComparisonError("reports cover different variable sets")


def _delta(base, alt):
    _check_comparable(base, alt)
    d = alt.G - base.G
    if base.has_steps and alt.has_steps:
        common, ib, ia = np.intersect1d(base.valid_steps, alt.valid_steps, return_indices=True)
        series = alt.G_t[ia] - base.G_t[ib]
    else:
        common, series = np.zeros(0, dtype=np.int64), np.zeros(0)
    return d, common, series


def compare(base, alt, reference_delta=None):
    """Indicator delta ``alt.G - base.G`` plus the per-step delta series.

    ``reference_delta`` is an externally reported value to check against;
    any difference is stated in ``notes``.
    """
    alts = list(alt) if isinstance(alt, (list, tuple)) else [alt]
    res = ComparisonResult(base, alts, [], [], [])
    for a in alts:
        d, steps, series = _delta(base, a)
        res.deltas.append(d)
        res.delta_steps.append(steps)
        res.delta_series.append(series)
    if reference_delta is not None:
        gap = res.deltas[0] - float(reference_delta)
        if gap == 0:
            res.notes.append(f"dG = {res.deltas[0]!r} matches the reference value")
        else:
            res.notes.append(f"dG = {res.deltas[0]!r} differs from the reference value "
                             f"{float(reference_delta)!r} by {gap:.6g}")
    return res


# --------------------------------------------------------------------------
# blocked-function cost


@dataclass
class BlockedCost:
    total: float
    per_variable: dict
    project_total: float = None

    @property
    def fraction(self):
        if not self.project_total:
            return None
        return self.total / self.project_total

    def as_dict(self):
        out = {"total": self.total, "per_variable": dict(self.per_variable)}
        if self.project_total:
            out["project_total"] = self.project_total
            out["fraction"] = self.fraction
        return out


def estimate_blocked_cost(schedule, cost_table, project_total=None):
    """Restoration cost: blocked periods times per-period cost, summed."""
    if not isinstance(schedule, BlockingSchedule):
        schedule = BlockingSchedule(schedule)
    missing = [v for v in schedule.variables if v not in cost_table]
    if missing:
        raise InputError("no cost entry for blocked variables: " + ", ".join(map(str, missing)))
    periods = {}
    for e in schedule:
        periods[e.variable] = periods.get(e.variable, 0) + e.length
    per_var = {v: periods[v] * float(cost_table[v]) for v in periods}
    return BlockedCost(math.fsum(per_var.values()), per_var,
                       None if project_total is None else float(project_total))


# --------------------------------------------------------------------------
# optimality check


_KINDS = {
    "quadratic": lambda d: d * d,
    "abs": np.abs,
    "linear": lambda d: d,
}


@dataclass
class Objective:
    """Goal functional over states.

    With ``targets`` (0-based state indices) the per-state cost is
    ``sum_i f(x_i - setpoint_i)`` for ``f`` chosen by ``kind``, negated for
    ``direction="max"``.  ``J`` adds ``stage_weight`` times that cost for the
    states before each action and ``terminal_weight`` times the cost of the
    final state.  Without targets the objective is the indicator total ``G``
    over regimes and only the regime ranking uses it.
    """

    targets: list = None
    kind: str = "quadratic"
    direction: str = "min"
    setpoint: object = 0.0
    stage_weight: float = 0.0
    terminal_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError(f"objective kind must be one of {sorted(_KINDS)}, got {self.kind!r}")
        if self.direction not in ("min", "max"):
            raise InputError(f"objective direction must be min or max, got {self.direction!r}")
        if self.targets is not None:
            self.targets = [int(i) for i in self.targets]

    @property
    def indicator_total(self):
        return self.targets is None

    def state_cost(self, X):
        """Cost of each row of ``X`` (shape (..., n))."""
        X = np.asarray(X, dtype=np.float64)
        d = X[..., self.targets] - np.asarray(self.setpoint, dtype=np.float64)
        c = _KINDS[self.kind](d).sum(axis=-1)
        return -c if self.direction == "max" else c

    def stage(self, t, X, u):
        return self.stage_weight * self.state_cost(X) if self.stage_weight else np.zeros(np.shape(X)[0])

    def terminal(self, X):
        return self.terminal_weight * self.state_cost(X) if self.terminal_weight else np.zeros(np.shape(X)[0])

    def evaluate(self, states, actions=None):
        """J along a state path of ``horizon + 1`` rows, folded from the end."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        total = float(self.terminal(states[-1:])[0])
        for t in range(states.shape[0] - 1, 0, -1):
            u = None if actions is None else actions[t - 1]
            total = float(self.stage(t, states[t - 1:t], u)[0]) + total
        return total


@dataclass
class OptimalityResult:
    actions: list
    value: float
    states: np.ndarray
    grid_points: int

    def as_dict(self):
        return {"value": self.value,
                "actions": [np.asarray(a).tolist() for a in self.actions],
                "states": self.states.tolist(),
                "grid_points": self.grid_points}


def _grids(grid, n):
    if isinstance(grid, np.ndarray) and grid.ndim == 1 or (
            isinstance(grid, (list, tuple)) and grid and np.isscalar(grid[0])):
        grid = [grid]
    grids = [np.unique(np.asarray(g, dtype=np.float64)) for g in grid]
    if len(grids) != n:
        raise InputError(f"state grid has {len(grids)} axes, model has n={n}")
    if any(g.size == 0 for g in grids):
        raise InputError("state grid axes must be nonempty")
    return grids


def _snap(grids, X):
    """Nearest grid index along each axis (ties go to the lower point)."""
    idx = []
    for d, g in enumerate(grids):
        x = X[:, d]
        j = np.clip(np.searchsorted(g, x), 1, max(g.size - 1, 1))
        if g.size == 1:
            idx.append(np.zeros(x.shape[0], dtype=np.int64))
            continue
        lower = g[j - 1]
        upper = g[j]
        idx.append(np.where(np.abs(x - lower) <= np.abs(upper - x), j - 1, j))
    return idx


def check_optimality(model, objective, controls, horizon, grid, x0, disturbance=None):
    """Backward induction over a discretised state grid.

    Parameters
    ----------
    model : SystemModel
    objective : Objective or object with ``stage(t, X, u)`` and ``terminal(X)``
    controls : sequence of m-vectors, or dict ``{t: sequence}`` per step
    horizon : int
        Number of transitions; steps ``1..horizon`` of the model are used.
    grid : 1-D array (n = 1) or one 1-D array per state dimension
        After every transition the state is snapped to the nearest grid point.
    x0 : initial state, snapped to the grid
    disturbance : optional (horizon x l) array of known disturbances

    Returns
    -------
    OptimalityResult
        Minimising action sequence, its objective value and the snapped
        state path.  Ties resolve to the earliest listed action.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    if horizon > MAX_HORIZON:
        raise ResourceError(f"horizon {horizon} exceeds {MAX_HORIZON}; shorten the horizon")
    if horizon > model.T:
        raise InputError(f"horizon {horizon} exceeds model horizon T={model.T}")
    per_step = controls if isinstance(controls, dict) else {t: controls for t in range(1, horizon + 1)}
    actions = {}
    for t in range(1, horizon + 1):
        acts = np.asarray(per_step[t], dtype=np.float64).reshape(len(per_step[t]), model.m)
        if acts.shape[0] == 0:
            raise InputError(f"empty control set at step {t}")
        if acts.shape[0] > MAX_ACTIONS:
            raise ResourceError(f"{acts.shape[0]} actions at step {t} exceed {MAX_ACTIONS}; reduce the control set")
        actions[t] = acts
    grids = _grids(grid, model.n)
    shape = tuple(g.size for g in grids)
    npts = int(np.prod(shape))
    if npts > MAX_GRID_POINTS:
        raise ResourceError(f"{npts} grid points exceed {MAX_GRID_POINTS}; coarsen the grid")
    X = np.stack([a.ravel() for a in np.meshgrid(*grids, indexing="ij")], axis=1)
    V_dist = np.zeros((horizon, model.l)) if disturbance is None else \
        np.asarray(disturbance, dtype=np.float64).reshape(horizon, model.l)

    V = np.asarray(objective.terminal(X), dtype=np.float64)
    policy = {}
    for t in range(horizon, 0, -1):
        A, B = model.A.at(t), model.B.at(t)
        drift = np.asarray(A @ X.T).T + (model.embed(V_dist[t - 1]) if model.l else 0.0)
        Q = np.empty((actions[t].shape[0], npts))
        for a, u in enumerate(actions[t]):
            nxt = drift + (np.asarray(B @ u).ravel() if model.m else 0.0)
            j = np.ravel_multi_index(_snap(grids, nxt), shape)
            Q[a] = np.asarray(objective.stage(t, X, u), dtype=np.float64) + V[j]
        policy[t] = np.argmin(Q, axis=0)
        V = Q[policy[t], np.arange(npts)]

    j = int(np.ravel_multi_index(_snap(grids, np.atleast_2d(np.asarray(x0, dtype=np.float64))), shape)[0])
    value = float(V[j])
    path = [X[j]]
    chosen = []
    for t in range(1, horizon + 1):
        a = int(policy[t][j])
        u = actions[t][a]
        chosen.append(u.copy())
        nxt = np.asarray(model.A.at(t) @ X[j]).ravel() + (np.asarray(model.B.at(t) @ u).ravel() if model.m else 0.0)
        if model.l:
            nxt = nxt + model.embed(V_dist[t - 1])
        j = int(np.ravel_multi_index(_snap(grids, nxt[None, :]), shape)[0])
        path.append(X[j])
    return OptimalityResult(chosen, value, np.array(path), npts)


# --------------------------------------------------------------------------
# pipeline


@dataclass
class Scenario:
    """Everything one evaluation run needs.

    Exactly one of ``model`` (simulated from ``x0``) or ``trajectory``
    (ingested data; regimes act through their blocking schedules only) is
    given.  ``controls``, ``grid`` and ``horizon`` enable the optimality
    check for objectives with explicit targets.
    """

    baseline: ControlRegime
    alternatives: list
    k: int
    model: object = None
    trajectory: Trajectory = None
    x0: object = None
    disturbance: DisturbanceSpec = None
    seed: int = 0
    objective: Objective = field(default_factory=lambda: Objective(direction="max"))
    cost_table: dict = None
    project_total: float = None
    controls: list = None
    grid: object = None
    horizon: int = None
    pairs: object = None
    include_diagonal: bool = True
    min_overlap: int = MIN_OVERLAP
    threads: int = 1

    def validate(self):
        if (self.model is None) == (self.trajectory is None):
            raise InputError("scenario needs exactly one of a model or a trajectory")
        if not self.alternatives:
            raise InputError("scenario needs at least one alternative regime")
        labels = [self.baseline.label] + [r.label for r in self.alternatives]
        dup = sorted({l for l in labels if labels.count(l) > 1})
        if dup:
            raise InputError("regime labels must be unique: " + ", ".join(dup))
        T = self.model.T if self.model is not None else self.trajectory.T
        if not 2 <= self.k <= T:
            raise InputError(f"window length k={self.k} must lie in [2, {T}]")
        if self.model is not None and self.x0 is None:
            raise InputError("a simulated scenario needs x0")

    @property
    def regimes(self):
        return [self.baseline] + list(self.alternatives)


def _materialise(scn, regime):
    if scn.model is not None:
        regime.check_against(scn.model)
        control = regime.controller(scn.model) if regime.W is not None else None
        traj = simulate(scn.model, scn.x0, control, scn.disturbance, scn.seed)
    else:
        regime.blocking.resolve(scn.trajectory.var_names, scn.trajectory.T, scn.trajectory.t0)
        traj = scn.trajectory
    return apply_blocking(traj, regime.blocking)


def run_pipeline(scenario):
    """Execute the four evaluation steps; returns a :class:`ComparisonResult`.

    Every step appends ``{"step", "branch", ...}`` records to ``result.log``.
    """
    scn = scenario
    log = []
    try:
        scn.validate()
        source = "simulated" if scn.model is not None else "ingested"
        log.append({"step": 1, "branch": source,
                    "detail": f"{len(scn.regimes)} regimes over "
                              f"{scn.model.T if scn.model is not None else scn.trajectory.T} steps"})
    except InputError as exc:
        raise PipelineError(1, exc) from exc

    def evaluate(regime):
        traj = _materialise(scn, regime)
        rep = integral_indicator(traj, scn.k, scn.pairs, scn.include_diagonal, regime.label,
                                 scn.min_overlap)
        return traj, rep

    try:
        if scn.threads and scn.threads > 1:
            with ThreadPoolExecutor(max_workers=scn.threads) as pool:
                results = list(pool.map(evaluate, scn.regimes))
        else:
            results = [evaluate(r) for r in scn.regimes]
    except InputError as exc:
        raise PipelineError(2, exc) from exc
    trajs = [r[0] for r in results]
    reports = [r[1] for r in results]
    for regime, rep in zip(scn.regimes, reports):
        log.append({"step": 2, "branch": "accepted", "regime": regime.label,
                    "blocked_cells": int(regime.blocking.total_periods()), "G": rep.G})

    optimality = None
    obj = scn.objective
    try:
        if obj.indicator_total:
            pick = max if obj.direction == "max" else min
            best = pick(reports, key=lambda r: r.G).label
            log.append({"step": 3, "branch": "indicator-ranking", "best": best,
                        "verdict": "baseline retained" if best == scn.baseline.label
                        else f"regime {best} preferred over baseline"})
        else:
            values = {reg.label: obj.evaluate(tr.values[: (scn.horizon or tr.T - 1) + 1])
                      for reg, tr in zip(scn.regimes, trajs)}
            best = min(values, key=values.get)
            if scn.model is not None and scn.controls is not None and scn.grid is not None:
                H = scn.horizon or min(scn.model.T - 1, MAX_HORIZON)
                dist = None
                if scn.disturbance is not None:
                    dist = scn.disturbance.generate(scn.model.T, scn.model.l, scn.seed)[:H]
                optimality = check_optimality(scn.model, obj, scn.controls, H, scn.grid, scn.x0, dist)
                gap = values[scn.baseline.label] - optimality.value
                log.append({"step": 3, "branch": "dynamic-programming", "optimal_value": optimality.value,
                            "regime_values": values, "baseline_gap": gap,
                            "verdict": "baseline near optimal" if gap <= 1e-9 * max(1.0, abs(optimality.value))
                            else "baseline not optimal: revisit step 1"})
            else:
                log.append({"step": 3, "branch": "objective-ranking", "regime_values": values,
                            "best": best, "verdict": "no finite control set declared; ranking only"})
    except InputError as exc:
        raise PipelineError(3, exc) from exc

    try:
        result = compare(reports[0], reports[1:])
        if scn.cost_table is not None:
            for regime in scn.alternatives:
                extra = [e for e in regime.blocking if e not in set(scn.baseline.blocking)]
                result.costs.append(estimate_blocked_cost(BlockingSchedule(extra), scn.cost_table,
                                                          scn.project_total))
        for rep, d in zip(result.alternatives, result.deltas):
            verdict = "lower connectivity" if d < 0 else "higher connectivity" if d > 0 else "no change"
            log.append({"step": 4, "branch": "compared", "regime": rep.label, "dG": d, "verdict": verdict})
    except InputError as exc:
        raise PipelineError(4, exc) from exc
    result.log = log
    result.optimality = optimality
    result.best = best
    return result
