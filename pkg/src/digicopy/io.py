"""File formats: trajectory/report/delta CSVs and YAML model, regime and
scenario documents.  The layout of each format is described in
``docs/formats.md``.

All CSV numbers are written with ``repr(float)``, the shortest string that
parses back to the same double, so every emitted file re-reads exactly.
"""
import csv
import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import InputError, ParseError
from .indicator import IndicatorReport
from .model import DisturbanceSpec, MatrixSchedule, SystemModel
from .regime import BlockingSchedule, BlockEntry, ControlRegime, format_schedule, parse_schedule
from .scenario import Objective, Scenario
from .trajectory import Trajectory

logger = logging.getLogger(__name__)


def fmt(x):
    x = float(x)
    return "" if np.isnan(x) else repr(x)


# --------------------------------------------------------------------------
# trajectories


@dataclass
class IngestSpec:
    path: str
    delimiter: str = ","
    missing: str = ""
    header: bool = True
    step_column: bool = True

    def __post_init__(self):
        if len(self.delimiter) != 1:
            raise InputError(f"delimiter must be one character, got {self.delimiter!r}")
        try:
            float(self.missing)
        except ValueError:
            pass
        else:
            raise InputError(f"missing-cell token {self.missing!r} is a number literal")


def ingest_trajectory(spec):
    """Read a trajectory CSV; ``spec`` is an :class:`IngestSpec` or a path."""
    if not isinstance(spec, IngestSpec):
        spec = IngestSpec(str(spec))
    with open(spec.path, newline="") as fh:
        return read_trajectory(fh, spec)


def read_trajectory(fh, spec=None):
    spec = spec or IngestSpec("<stream>")
    src = spec.path
    rows = [r for r in csv.reader(fh, delimiter=spec.delimiter)]
    lines = [(i, r) for i, r in enumerate(rows, start=1) if r and any(c.strip() for c in r)]
    if not lines:
        raise InputError(f"{src}: empty file")
    names = None
    if spec.header:
        hline, header = lines.pop(0)
        header = [h.strip() for h in header]
        if spec.step_column:
            if header[0] != "t":
                raise ParseError(f"first header cell must be 't', got {header[0]!r}", hline, src)
            header = header[1:]
        names = header
    if not lines:
        raise InputError(f"{src}: no data rows")
    width = len(lines[0][1])
    steps, values = [], []
    for lineno, row in lines:
        if len(row) != width:
            raise ParseError(f"row has {len(row)} cells, expected {width}", lineno, src)
        cells = row
        if spec.step_column:
            try:
                steps.append(int(row[0]))
            except ValueError:
                raise ParseError(f"step index {row[0]!r} is not an integer", lineno, src) from None
            cells = row[1:]
        out = []
        for col, cell in enumerate(cells, start=1):
            c = cell.strip()
            if c == spec.missing:
                out.append(np.nan)
                continue
            try:
                v = float(c)
            except ValueError:
                raise ParseError(f"cell (row {len(values) + 1}, column {col}) is not numeric: {cell!r}",
                                 lineno, src) from None
            if np.isnan(v) or np.isinf(v):
                raise ParseError(f"cell (row {len(values) + 1}, column {col}) is {c}; "
                                 f"use the missing token for gaps", lineno, src)
            out.append(v)
        values.append(out)
    if names is not None and len(names) != len(values[0]):
        raise ParseError(f"header names {len(names)} variables, rows have {len(values[0])}", 1, src)
    t0 = 1
    if spec.step_column:
        t0 = steps[0]
        if steps != list(range(t0, t0 + len(steps))):
            raise InputError(f"{src}: step indices are not contiguous")
    traj = Trajectory(np.array(values, dtype=np.float64).reshape(len(values), -1), names, t0)
    gaps = traj.gap_summary()
    traj.log["gaps"] = gaps
    if traj.n_missing:
        logger.info("%s: %d missing cells; per-variable missing fraction %s", src, traj.n_missing, gaps)
    return traj


def format_trajectory(traj):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *traj.var_names])
    for t, row in zip(traj.steps, traj.values):
        w.writerow([int(t), *(fmt(v) for v in row)])
    return buf.getvalue()


def write_trajectory(traj, path):
    with open(path, "w", newline="") as fh:
        fh.write(format_trajectory(traj))
    return path


# --------------------------------------------------------------------------
# reports


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_yaml(data, path=None):
    text = yaml.safe_dump(_plain(data), sort_keys=False, default_flow_style=None, width=100)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _load_yaml(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}", source=path) from None
    if not isinstance(data, dict):
        raise ParseError("expected a mapping at the top level", source=path)
    return data


def report_summary(report):
    return {
        "kind": "indicator-report",
        "label": report.label,
        "k": report.k,
        "G": report.G,
        "variables": list(report.var_names),
        "include_diagonal": report.include_diagonal,
        "valid_steps": report.valid_steps.tolist(),
        "invalid_steps": report.invalid_steps.tolist(),
    }


def format_report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "G_t", *(f"G_{i + 1}" for i in range(report.n))])
    for t, gt, gi in zip(report.valid_steps, report.G_t, report.G_i):
        w.writerow([int(t), fmt(gt), *(fmt(v) for v in gi)])
    return buf.getvalue()


def write_report(report, out_dir, stem="report"):
    """Write ``<stem>.yaml`` (summary) and ``<stem>.csv`` (per step)."""
    os.makedirs(out_dir, exist_ok=True)
    summary = report_summary(report)
    csv_path = None
    if report.has_steps:
        csv_path = os.path.join(out_dir, stem + ".csv")
        with open(csv_path, "w", newline="") as fh:
            fh.write(format_report_csv(report))
        summary["per_step_file"] = stem + ".csv"
    yaml_path = os.path.join(out_dir, stem + ".yaml")
    dump_yaml(summary, yaml_path)
    return yaml_path, csv_path


def read_report(path):
    """Load a report from its summary document (per-step CSV alongside)."""
    data = _load_yaml(path)
    if data.get("kind") != "indicator-report":
        raise ParseError("not an indicator report summary", source=path)
    try:
        k, G, names = int(data["k"]), float(data["G"]), tuple(data["variables"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"missing or bad field: {exc}", source=path) from None
    label = data.get("label") or ""
    per_step = data.get("per_step_file")
    if not per_step:
        rep = IndicatorReport.summary_only(G, k, names, label)
        rep.include_diagonal = bool(data.get("include_diagonal", True))
        return rep
    csv_path = os.path.join(os.path.dirname(path), per_step)
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:2] != ["t", "G_t"] or len(header) != len(names) + 2:
        raise ParseError("per-step header must be t,G_t,G_1..G_n", 1, csv_path)
    body = rows[1:]
    try:
        steps = np.array([int(r[0]) for r in body], dtype=np.int64)
        G_t = np.array([float(r[1]) for r in body])
        G_i = np.array([[float(c) for c in r[2:]] for r in body]).reshape(len(body), len(names))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad per-step row: {exc}", source=csv_path) from None
    if list(steps) != list(data.get("valid_steps", [])):
        raise ParseError("per-step rows do not match valid_steps", source=csv_path)
    return IndicatorReport(k, steps, G_i, G_t, G, names, label,
                           np.asarray(data.get("invalid_steps", []), dtype=np.int64),
                           bool(data.get("include_diagonal", True)))


def format_correlation_triplets(matrices):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "i", "j", "r"])
    for R in matrices:
        for t, i, j, r in R.triplets():
            w.writerow([t, i, j, fmt(r)])
    return buf.getvalue()


# --------------------------------------------------------------------------
# comparisons


def _safe(label):
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in label) or "alt"


def write_comparison(result, out_dir, stem="comparison"):
    """Summary YAML plus one ``t,dG_t`` CSV per alternative."""
    os.makedirs(out_dir, exist_ok=True)
    summary = result.summary()
    summary["kind"] = "comparison"
    files = []
    for i, rep in enumerate(result.alternatives):
        name = f"{stem}_{_safe(rep.label or str(i + 1))}_deltas.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "dG_t"])
        for t, d in zip(result.delta_steps[i], result.delta_series[i]):
            w.writerow([int(t), fmt(d)])
        with open(os.path.join(out_dir, name), "w", newline="") as fh:
            fh.write(buf.getvalue())
        summary["alternatives"][i]["delta_file"] = name
        files.append(name)
    path = os.path.join(out_dir, stem + ".yaml")
    dump_yaml(summary, path)
    return path, files


def read_deltas(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["t", "dG_t"]:
        raise ParseError("delta header must be t,dG_t", 1, path)
    return (np.array([int(r[0]) for r in rows[1:]], dtype=np.int64),
            np.array([float(r[1]) for r in rows[1:]]))


# --------------------------------------------------------------------------
# models and regimes


def _triplets(entries, what, src, with_step=True):
    out = []
    for e in entries or []:
        if not isinstance(e, (list, tuple)) or len(e) != (4 if with_step else 3):
            raise ParseError(f"{what} entry {e!r} must be "
                             f"{'[t|*, row, col, value]' if with_step else '[row, col, value]'}", source=src)
        if with_step:
            t, i, j, v = e
            if t != "*":
                t = int(t)
        else:
            t, (i, j, v) = "*", e
        out.append((t, int(i) - 1, int(j) - 1, float(v)))
    return out


def _schedule_from(entries, shape, what, src, dense=None):
    try:
        return MatrixSchedule.from_triplets(shape, _triplets(entries, what, src), dense=dense)
    except InputError as exc:
        raise ParseError(f"{what}: {exc}", source=src) from None


def _dense_from(entries, shape, what, src):
    M = np.zeros(shape)
    for _, i, j, v in _triplets(entries, what, src, with_step=False):
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise ParseError(f"{what}: entry ({i + 1}, {j + 1}) outside {shape[0]}x{shape[1]}", source=src)
        M[i, j] = v
    return M


@dataclass
class ModelSpec:
    """A model document: the system plus its initial state and disturbance."""

    model: SystemModel
    x0: np.ndarray = None
    disturbance: DisturbanceSpec = None
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)


def model_from_dict(data, src="<model>"):
    for key in ("n", "T"):
        if key not in data:
            raise ParseError(f"missing key {key!r}", source=src)
    try:
        n, T = int(data["n"]), int(data["T"])
        m, l = int(data.get("m", 0)), int(data.get("l", 0))
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad dimension: {exc}", source=src) from None
    dense = data.get("dense")
    A = _schedule_from(data.get("A"), (n, n), "A", src, dense)
    B = _schedule_from(data.get("B"), (n, m), "B", src, dense)
    H = None
    if data.get("H") is not None:
        k_out = int(data.get("k_out", n))
        H = _dense_from(data["H"], (k_out, n), "H", src)
    routing = _dense_from(data["routing"], (l, n), "routing", src) if data.get("routing") else None
    model = SystemModel(n, m, l, T, A, B, H, routing, data.get("variables"))
    x0 = np.asarray(data["x0"], dtype=np.float64) if data.get("x0") is not None else None
    dist = None
    seed = 0
    if data.get("disturbance"):
        d = data["disturbance"]
        sins = [(int(c) - 1, a, p, ph) for c, a, p, ph in d.get("sinusoids", [])]
        noise = {int(c) - 1: mag for c, mag in d.get("noise", [])}
        dist = DisturbanceSpec(sins, noise)
        seed = int(d.get("seed", 0))
    return ModelSpec(model, x0, dist, seed, data)


def load_model(path):
    try:
        return model_from_dict(_load_yaml(path), path)
    except ParseError:
        raise
    except InputError as exc:
        raise ParseError(str(exc), source=path) from None


def model_to_dict(spec):
    M = spec.model

    def trip(sched):
        return [[t, i + 1, j + 1, v] for t, i, j, v in sched.triplets()]

    out = {"kind": "model", "n": M.n, "m": M.m, "l": M.l, "T": M.T, "variables": list(M.var_names),
           "A": trip(M.A), "B": trip(M.B)}
    if M.H is not None:
        out["k_out"] = M.k_out
        out["H"] = [[i + 1, j + 1, float(M.H[i, j])] for i, j in zip(*np.nonzero(M.H))]
    out["routing"] = [[i + 1, j + 1, float(M.routing[i, j])] for i, j in zip(*np.nonzero(M.routing))]
    if spec.x0 is not None:
        out["x0"] = [float(v) for v in spec.x0]
    if spec.disturbance is not None:
        out["disturbance"] = {
            "sinusoids": [[c + 1, a, p, ph] for c, a, p, ph in spec.disturbance.sinusoids],
            "noise": [[c + 1, mag] for c, mag in sorted(spec.disturbance.noise.items())],
            "seed": spec.seed,
        }
    return out


def regime_from_dict(data, model=None, base_dir=".", src="<regime>"):
    if "label" not in data:
        raise ParseError("regime needs a label", source=src)
    W = None
    if data.get("W"):
        if model is None:
            raise ParseError("a W block needs the model dimensions", source=src)
        W = _schedule_from(data["W"], (model.m, model.k_out), "W", src)
    sched = data.get("schedule")
    if sched is None:
        blocking = BlockingSchedule()
    elif isinstance(sched, str):
        blocking = parse_schedule(os.path.join(base_dir, sched))
    else:
        try:
            blocking = BlockingSchedule([BlockEntry(*e) for e in sched])
        except (TypeError, InputError) as exc:
            raise ParseError(f"bad schedule entry: {exc}", source=src) from None
    return ControlRegime(str(data["label"]), W, blocking, model.T if model is not None else None)


def load_regime(path, model=None):
    return regime_from_dict(_load_yaml(path), model, os.path.dirname(path), path)


# --------------------------------------------------------------------------
# scenarios


def load_scenario(path):
    """Build a :class:`Scenario` from its YAML document; paths are relative to it."""
    data = _load_yaml(path)
    base = os.path.dirname(os.path.abspath(path))

    def rel(p):
        return os.path.join(base, p)

    model = x0 = dist = traj = None
    seed = int(data.get("seed", 0))
    if data.get("model"):
        spec = load_model(rel(data["model"]))
        model, x0, dist = spec.model, spec.x0, spec.disturbance
        seed = int(data.get("seed", spec.seed))
        if data.get("x0") is not None:
            x0 = np.asarray(data["x0"], dtype=np.float64)
    if data.get("trajectory"):
        traj = ingest_trajectory(rel(data["trajectory"]))

    def regime(item):
        if isinstance(item, str):
            return load_regime(rel(item), model)
        if isinstance(item, dict):
            return regime_from_dict(item, model, base, path)
        raise ParseError(f"regime must be a file name or mapping, got {item!r}", source=path)

    if "baseline" not in data or "k" not in data:
        raise ParseError("scenario needs 'baseline' and 'k'", source=path)
    obj = data.get("objective", "indicator-total")
    if obj == "indicator-total" or obj is None:
        objective = Objective(direction="max")
    elif isinstance(obj, dict):
        targets = obj.get("targets")
        if targets is not None and model is not None:
            names = list(model.var_names)
            targets = [names.index(t) if isinstance(t, str) else int(t) for t in targets]
        try:
            objective = Objective(**{**obj, "targets": targets})
        except TypeError as exc:
            raise ParseError(f"bad objective: {exc}", source=path) from None
    else:
        raise ParseError(f"bad objective {obj!r}", source=path)
    opt = data.get("optimality") or {}
    scn = Scenario(
        baseline=regime(data["baseline"]),
        alternatives=[regime(r) for r in data.get("alternatives", [])],
        k=int(data["k"]), model=model, trajectory=traj, x0=x0, disturbance=dist, seed=seed,
        objective=objective, cost_table=data.get("cost_table"),
        project_total=data.get("project_total"),
        controls=opt.get("controls"), grid=opt.get("grid"), horizon=opt.get("horizon"),
        include_diagonal=bool(data.get("include_diagonal", True)),
    )
    return scn


def detect_kind(path):
    """Best guess at what kind of document ``path`` holds."""
    if path.endswith((".yaml", ".yml")):
        data = _load_yaml(path)
        if data.get("kind"):
            return data["kind"]
        if "baseline" in data:
            return "scenario"
        if "n" in data and "T" in data:
            return "model"
        if "label" in data:
            return "regime"
        raise ParseError("unrecognised YAML document", source=path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    if first.startswith("variable,start,end"):
        return "schedule"
    if first.startswith("t,G_t"):
        return "report-steps"
    if first == "t,dG_t":
        return "deltas"
    if first.startswith("t,i,j,r"):
        return "correlations"
    return "trajectory"


__all__ = [
    "IngestSpec", "ModelSpec", "ingest_trajectory", "read_trajectory", "write_trajectory",
    "format_trajectory", "write_report", "read_report", "report_summary", "write_comparison",
    "read_deltas", "load_model", "model_from_dict", "model_to_dict", "load_regime",
    "regime_from_dict", "load_scenario", "detect_kind", "format_schedule", "parse_schedule",
    "format_correlation_triplets", "dump_yaml",
]
