"""Control regimes: the control-structure schedule W and blocking schedules.

A regime is exactly a label, a per-step m x k_out matrix ``W(t)`` giving
``u(t) = W(t) y(t)``, and a :class:`BlockingSchedule` listing the periods in
which individual state variables (business functions) are not performed.
"""
import csv
import io
import re
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_step, check_vector
from .errors import InputError, ParseError
from .model import MatrixSchedule
from .trajectory import Trajectory

MISSING = float("nan")


def _value_key(v):
    return "missing" if np.isnan(v) else float(v)


@dataclass(frozen=True)
class BlockEntry:
    """One blocked stretch: ``variable`` over steps ``start..end`` inclusive.

    ``variable`` is a name or a 0-based column index.  ``value`` is what the
    blocked cells become; NaN marks them missing instead of zero.
    """

    variable: object
    start: int
    end: int
    annotation: str = ""
    value: float = 0.0

    def __post_init__(self):
        if int(self.start) != self.start or int(self.end) != self.end:
            raise InputError(f"period bounds must be integers: {self.start}, {self.end}")
        if self.start < 1:
            raise InputError(f"period start must be >= 1, got {self.start}")
        if self.start > self.end:
            raise InputError(f"period start {self.start} after end {self.end}")

    @property
    def length(self):
        return self.end - self.start + 1


def _canonical(entries):
    """Paint entries in order (later wins), then merge runs of equal value."""
    by_var = {}
    order = []
    for e in entries:
        if e.variable not in by_var:
            by_var[e.variable] = {}
            order.append(e.variable)
        cells = by_var[e.variable]
        for t in range(e.start, e.end + 1):
            prev = cells.get(t)
            notes = list(prev[1]) if prev is not None and _value_key(prev[0]) == _value_key(e.value) else []
            if e.annotation and e.annotation not in notes:
                notes.append(e.annotation)
            cells[t] = (e.value, notes)
    out = []
    for var in order:
        cells = by_var[var]
        run = None
        for t in sorted(cells):
            val, notes = cells[t]
            if run is not None and run["end"] == t - 1 and _value_key(run["value"]) == _value_key(val):
                run["end"] = t
                run["notes"] += [a for a in notes if a not in run["notes"]]
            else:
                if run is not None:
                    out.append(run)
                run = {"var": var, "start": t, "end": t, "value": val, "notes": list(notes)}
        if run is not None:
            out.append(run)
    return tuple(BlockEntry(r["var"], r["start"], r["end"], "; ".join(r["notes"]), r["value"])
                 for r in out)


class BlockingSchedule:
    """Canonical, non-overlapping set of blocked (variable, period) stretches."""

    def __init__(self, entries=()):
        entries = [e if isinstance(e, BlockEntry) else BlockEntry(*e) for e in entries]
        self.entries = _canonical(entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        if not isinstance(other, BlockingSchedule):
            return NotImplemented
        return [(e.variable, e.start, e.end, e.annotation, _value_key(e.value)) for e in self.entries] == \
               [(e.variable, e.start, e.end, e.annotation, _value_key(e.value)) for e in other.entries]

    def __repr__(self):
        return f"BlockingSchedule({list(self.entries)!r})"

    def merged(self, other):
        return BlockingSchedule(list(self.entries) + list(other.entries))

    @property
    def variables(self):
        return list(dict.fromkeys(e.variable for e in self.entries))

    def resolve(self, var_names, T=None, t0=1):
        """Entries with ``variable`` replaced by its 0-based column index."""
        unknown = []
        out = []
        for e in self.entries:
            idx = _resolve_variable(e.variable, var_names)
            if idx is None:
                unknown.append(e.variable)
                continue
            if T is not None and e.end > t0 + T - 1:
                raise InputError(f"{e.variable!r}: period {e.start}-{e.end} beyond step {t0 + T - 1}")
            out.append(BlockEntry(idx, e.start, e.end, e.annotation, e.value))
        if unknown:
            raise InputError("unresolvable variables in schedule: " + ", ".join(map(str, unknown)))
        return out

    def blocked_at(self, t, var_names):
        return {e.variable for e in self.resolve(var_names) if e.start <= t <= e.end}

    def total_periods(self):
        return sum(e.length for e in self.entries)


def _resolve_variable(var, var_names):
    if isinstance(var, (int, np.integer)):
        return int(var) if 0 <= var < len(var_names) else None
    if var in var_names:
        return list(var_names).index(var)
    return None


def apply_blocking(traj, schedule):
    """Copy of ``traj`` with every scheduled cell replaced by its block value."""
    if not len(schedule):
        return traj
    values = np.array(traj.values)
    for e in schedule.resolve(traj.var_names, traj.T, traj.t0):
        values[e.start - traj.t0:e.end - traj.t0 + 1, e.variable] = e.value
    return Trajectory(values, traj.var_names, traj.t0)


@dataclass
class ControlRegime:
    """Labelled control structure ``W`` plus blocking schedule.

    ``W`` is a :class:`MatrixSchedule` of shape (m, k_out), a constant matrix,
    or None for no feedback.  ``T`` bounds the steps ``W`` may be evaluated at.
    """

    label: str
    W: object = None
    blocking: BlockingSchedule = field(default_factory=BlockingSchedule)
    T: int = None

    def __post_init__(self):
        if not self.label or not str(self.label).strip():
            raise InputError("regime label must be nonempty")
        if self.W is not None and not isinstance(self.W, MatrixSchedule):
            W = np.asarray(self.W, dtype=np.float64)
            if W.ndim != 2:
                raise InputError(f"W must be a matrix, got shape {W.shape}")
            self.W = MatrixSchedule(W.shape, W)
        if not isinstance(self.blocking, BlockingSchedule):
            self.blocking = BlockingSchedule(self.blocking)

    def check_against(self, model):
        if self.W is not None and self.W.shape != (model.m, model.k_out):
            raise InputError(f"regime {self.label!r}: W is {self.W.shape[0]}x{self.W.shape[1]}, "
                             f"model needs {model.m}x{model.k_out}")
        self.blocking.resolve(model.var_names, model.T)

    def controller(self, model):
        """Control-law callable for :func:`digicopy.model.simulate`."""
        self.check_against(model)
        return lambda t, y: apply_control(self, t, y, model)


def apply_control(regime, t, y, model=None):
    """``W(t) y`` with control rows zeroed when all their targets are blocked.

    A control's targets are the state rows where its column of ``B(t)`` is
    nonzero, so row zeroing needs ``model``; without it no row is zeroed.
    """
    T = regime.T if regime.T is not None else (model.T if model is not None else None)
    if T is not None:
        check_step(t, 1, T)
    if regime.W is None:
        m = model.m if model is not None else 0
        return np.zeros(m)
    W = regime.W.at(t)
    y = check_vector(y, W.shape[1], "y")
    u = np.asarray(W @ y, dtype=np.float64).ravel()
    if model is not None and len(regime.blocking):
        blocked = regime.blocking.blocked_at(t, model.var_names)
        if blocked:
            for j in range(u.shape[0]):
                targets = model.B.nonzero_rows(t, j)
                if targets.size and blocked.issuperset(targets.tolist()):
                    u[j] = 0.0
    return u


# --------------------------------------------------------------------------
# schedule CSV

SCHEDULE_COLUMNS = ("variable", "start", "end", "annotation")
_RANGE = re.compile(r"^\s*(\d+)\s*(?:-\s*(\d+)\s*)?$")


def parse_periods(text):
    """``"1 - 20, 25, 38"`` -> ``[(1, 20), (25, 25), (38, 38)]``."""
    out = []
    for part in str(text).split(","):
        m = _RANGE.match(part)
        if not m:
            raise ValueError(f"malformed period {part.strip()!r}")
        a = int(m.group(1))
        b = int(m.group(2)) if m.group(2) else a
        if a > b:
            raise ValueError(f"period start {a} after end {b}")
        out.append((a, b))
    return out


def _block_value(text):
    text = (text or "").strip().lower()
    if text in ("", "0", "zero"):
        return 0.0
    if text in ("missing", "nan", "na"):
        return MISSING
    return float(text)


def parse_schedule(document, source=None):
    """Read a schedule CSV (path, file object or text) into a schedule.

    Columns: ``variable,start,end,annotation`` plus an optional ``value``
    (``0`` by default, ``missing`` for gaps).  ``start`` may hold a period
    list such as ``"1 - 20, 25, 38"`` when ``end`` is left empty.
    """
    if hasattr(document, "read"):
        text = document.read()
    elif isinstance(document, str) and "\n" not in document and not document.lstrip().startswith("variable"):
        with open(document, newline="") as fh:
            text = fh.read()
        source = source or document
    else:
        text = str(document)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty schedule document", source=source) from None
    if header[:3] != ["variable", "start", "end"]:
        raise ParseError(f"schedule header must start with variable,start,end; got {','.join(header)}",
                         line=1, source=source)
    allowed = set(SCHEDULE_COLUMNS) | {"value"}
    extra = [h for h in header if h not in allowed]
    if extra:
        raise ParseError(f"unknown column(s): {', '.join(extra)}", line=1, source=source)
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) > len(header):
            raise ParseError(f"{len(row)} cells for {len(header)} columns", line=lineno, source=source)
        rec = dict(zip(header, row + [""] * (len(header) - len(row))))
        var = rec["variable"].strip()
        if not var:
            raise ParseError("empty variable", line=lineno, source=source)
        try:
            if rec["end"].strip():
                periods = parse_periods(f"{rec['start']}-{rec['end']}")
            else:
                periods = parse_periods(rec["start"])
            value = _block_value(rec.get("value"))
            for a, b in periods:
                entries.append(BlockEntry(var, a, b, rec.get("annotation", "").strip(), value))
        except (ValueError, InputError) as exc:
            raise ParseError(str(exc), line=lineno, source=source) from None
    return BlockingSchedule(entries)


def format_schedule(schedule, var_names=None):
    """Schedule CSV text; inverse of :func:`parse_schedule`."""
    buf = io.StringIO()
    has_values = any(e.value != 0.0 for e in schedule)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCHEDULE_COLUMNS + (("value",) if has_values else ()))
    for e in schedule:
        var = e.variable
        if not isinstance(var, str):
            var = var_names[var] if var_names is not None else str(var)
        row = [var, e.start, e.end, e.annotation]
        if has_values:
            row.append("missing" if np.isnan(e.value) else repr(float(e.value)))
        w.writerow(row)
    return buf.getvalue()
