"""Time-varying linear state model and trajectory simulation.

The state recurrence is::

    x(t+1) = A(t) x(t) + B(t) u(t) + embed(v(t))

with the observation ``y(t) = H x(t)`` handed to the control law.  ``H``
defaults to the identity and is never inverted.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._validation import check_step, check_vector
from .errors import InputError
from .trajectory import Trajectory, default_names

#: schedules whose largest dimension is below this are kept dense
DENSE_BELOW = 64


def _as_matrix(M, shape, dense):
    if sp.issparse(M):
        M = M.toarray() if dense else sp.csr_matrix(M, dtype=np.float64)
    else:
        M = np.asarray(M, dtype=np.float64)
        if not dense:
            M = sp.csr_matrix(M)
    if M.shape != tuple(shape):
        raise InputError(f"matrix has shape {M.shape}, expected {tuple(shape)}")
    return M


class MatrixSchedule:
    """Per-step matrix, with a constant default for steps without an override.

    Parameters
    ----------
    shape : tuple of int
    constant : array-like or sparse matrix, optional
        Matrix used for every step not listed in ``by_step``; zeros if omitted.
    by_step : dict, optional
        ``{t: matrix}`` overrides for individual steps.
    dense : bool, optional
        Storage format.  Defaults to dense when ``max(shape) < 64``.
    """

    def __init__(self, shape, constant=None, by_step=None, dense=None):
        self.shape = (int(shape[0]), int(shape[1]))
        if dense is None:
            dense = max(self.shape) < DENSE_BELOW
        self.dense = bool(dense)
        if constant is None:
            constant = np.zeros(self.shape) if self.dense else sp.csr_matrix(self.shape)
        self.constant = _as_matrix(constant, self.shape, self.dense)
        self.by_step = {int(t): _as_matrix(M, self.shape, self.dense)
                        for t, M in (by_step or {}).items()}

    @classmethod
    def from_triplets(cls, shape, triplets, dense=None):
        """Build from ``(t, row, col, value)`` with 0-based row/col.

        ``t`` is ``"*"`` (or None) for entries that hold at every step.  A
        step-specific entry replaces the ``"*"`` value at the same position.
        """
        base = {}
        steps = {}
        for t, i, j, val in triplets:
            i, j = int(i), int(j)
            if not (0 <= i < shape[0] and 0 <= j < shape[1]):
                raise InputError(f"entry ({i + 1}, {j + 1}) outside a {shape[0]}x{shape[1]} matrix")
            if t is None or t == "*":
                base[(i, j)] = float(val)
            else:
                steps.setdefault(int(t), {})[(i, j)] = float(val)

        def build(entries):
            if not entries:
                return sp.csr_matrix(shape)
            rows, cols = zip(*entries.keys())
            return sp.csr_matrix((list(entries.values()), (rows, cols)), shape=shape)

        by_step = {t: build({**base, **over}) for t, over in steps.items()}
        return cls(shape, build(base), by_step, dense=dense)

    def at(self, t):
        return self.by_step.get(t, self.constant)

    def triplets(self):
        """Inverse of :meth:`from_triplets` (0-based row/col)."""
        out = []
        base = sp.coo_matrix(self.constant)
        base_vals = {}
        for i, j, v in zip(base.row, base.col, base.data):
            if v != 0:
                out.append(("*", int(i), int(j), float(v)))
                base_vals[(int(i), int(j))] = float(v)
        for t in sorted(self.by_step):
            M = sp.coo_matrix(self.by_step[t])
            vals = {(int(i), int(j)): float(v) for i, j, v in zip(M.row, M.col, M.data) if v != 0}
            for key in sorted(set(vals) | set(base_vals)):
                v = vals.get(key, 0.0)
                if base_vals.get(key) != v:
                    out.append((t, key[0], key[1], v))
        return out

    def nonzero_rows(self, t, col):
        M = self.at(t)
        column = M[:, col].toarray().ravel() if sp.issparse(M) else M[:, col]
        return np.flatnonzero(column)

    def __repr__(self):
        fmt = "dense" if self.dense else "sparse"
        return f"MatrixSchedule(shape={self.shape}, {fmt}, overrides={sorted(self.by_step)})"


def _schedule(M, shape, name):
    if isinstance(M, MatrixSchedule):
        if M.shape != tuple(shape):
            raise InputError(f"{name} has shape {M.shape}, expected {tuple(shape)}")
        return M
    if M is None:
        return MatrixSchedule(shape)
    try:
        return MatrixSchedule(shape, M)
    except InputError as exc:
        raise InputError(f"{name}: {exc}") from None


@dataclass(eq=False)
class SystemModel:
    """Dimensions plus the A(t), B(t), H matrices of the recurrence.

    ``A`` and ``B`` may be plain matrices (constant over the horizon) or
    :class:`MatrixSchedule` objects.  ``routing`` is an optional l x n matrix
    mapping the disturbance into the state; by default component ``i`` of
    ``v`` feeds state ``i`` for ``i < min(l, n)``.
    """

    n: int
    m: int
    l: int
    T: int
    A: object = None
    B: object = None
    H: object = None
    routing: object = None
    var_names: tuple = None

    def __post_init__(self):
        for attr, lo in (("n", 1), ("m", 0), ("l", 0), ("T", 1)):
            val = getattr(self, attr)
            if int(val) != val or val < lo:
                raise InputError(f"{attr} must be an integer >= {lo}, got {val!r}")
            setattr(self, attr, int(val))
        self.A = _schedule(self.A, (self.n, self.n), "A")
        self.B = _schedule(self.B, (self.n, self.m), "B")
        for name, sched in (("A", self.A), ("B", self.B)):
            bad = [t for t in sched.by_step if not 1 <= t <= self.T]
            if bad:
                raise InputError(f"{name} has entries for steps {bad} outside [1, {self.T}]")
        if self.H is None:
            self.k_out = self.n
        else:
            H = self.H.toarray() if sp.issparse(self.H) else np.asarray(self.H, dtype=np.float64)
            if H.ndim != 2 or H.shape[1] != self.n:
                raise InputError(f"H must have {self.n} columns, got shape {H.shape}")
            self.H = H
            self.k_out = H.shape[0]
        if self.routing is None:
            R = np.zeros((self.l, self.n))
            d = min(self.l, self.n)
            R[np.arange(d), np.arange(d)] = 1.0
        else:
            R = np.asarray(self.routing, dtype=np.float64)
            if R.shape != (self.l, self.n):
                raise InputError(f"routing must be {self.l}x{self.n}, got shape {R.shape}")
        self.routing = R
        if self.var_names is None:
            self.var_names = default_names(self.n)
        self.var_names = tuple(self.var_names)
        if len(self.var_names) != self.n:
            raise InputError(f"{len(self.var_names)} variable names for n={self.n}")

    def observe(self, x):
        return x if self.H is None else self.H @ x

    def embed(self, v):
        return self.routing.T @ v


def step(model, x_t, u_t, v_t, t):
    """One application of the recurrence; returns x(t+1)."""
    check_step(t, 1, model.T)
    x = check_vector(x_t, model.n, "x_t")
    u = check_vector(u_t, model.m, "u_t")
    v = check_vector(v_t, model.l, "v_t")
    out = np.asarray(model.A.at(t) @ x, dtype=np.float64).ravel()
    if model.m:
        out = out + np.asarray(model.B.at(t) @ u).ravel()
    if model.l:
        out = out + model.embed(v)
    return out


@dataclass
class DisturbanceSpec:
    """Sinusoids plus optional white noise on the disturbance vector.

    ``sinusoids`` holds ``(component, amplitude, period, phase)`` tuples with
    0-based component indices into ``v``; the contribution at step ``t`` is
    ``amplitude * sin(2 pi t / period + phase)``.  ``noise`` maps a component
    to a standard deviation; draws come from ``numpy.random.default_rng(seed)``.
    """

    sinusoids: list = field(default_factory=list)
    noise: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = []
        for comp in self.sinusoids:
            var, amp, period, phase = comp
            if not period > 0:
                raise InputError(f"sinusoid period must be > 0, got {period}")
            clean.append((int(var), float(amp), float(period), float(phase)))
        self.sinusoids = clean
        noise = {}
        for var, mag in dict(self.noise).items():
            if not mag >= 0:
                raise InputError(f"noise magnitude must be >= 0, got {mag}")
            noise[int(var)] = float(mag)
        self.noise = noise

    def generate(self, T, l, seed=0):
        """Disturbance rows for steps 1..T as a T x l array."""
        V = np.zeros((T, l))
        t = np.arange(1, T + 1, dtype=np.float64)
        for var, amp, period, phase in self.sinusoids:
            if not 0 <= var < l:
                raise InputError(f"sinusoid component {var} outside disturbance dimension {l}")
            V[:, var] += amp * np.sin(2.0 * np.pi * t / period + phase)
        if self.noise:
            rng = np.random.default_rng(seed)
            draws = rng.standard_normal((T, l))
            for var, mag in sorted(self.noise.items()):
                if not 0 <= var < l:
                    raise InputError(f"noise component {var} outside disturbance dimension {l}")
                V[:, var] += mag * draws[:, var]
        return V


def simulate(model, x0, control=None, disturbance=None, seed=0):
    """Run the recurrence for ``model.T`` rows starting from ``x0``.

    Row ``t`` of the result is ``x(t)``; row 1 is ``x0``.  ``control`` is a
    callable ``(t, y) -> u`` receiving ``y(t) = H x(t)``; omitted means zero
    control.  ``disturbance`` may be a :class:`DisturbanceSpec` or an explicit
    T x l array.
    """
    x = check_vector(x0, model.n, "x0")
    if disturbance is None:
        V = np.zeros((model.T, model.l))
    elif isinstance(disturbance, DisturbanceSpec):
        V = disturbance.generate(model.T, model.l, seed)
    else:
        V = np.asarray(disturbance, dtype=np.float64).reshape(model.T, model.l)
    zero_u = np.zeros(model.m)
    rows = np.empty((model.T, model.n))
    rows[0] = x
    for t in range(1, model.T):
        if control is None:
            u = zero_u
        else:
            u = np.asarray(control(t, model.observe(x)), dtype=np.float64).ravel()
            if u.shape != (model.m,):
                raise InputError(f"control returned {u.shape[0]} values at step {t}, expected {model.m}")
        x = step(model, x, u, V[t - 1], t)
        rows[t] = x
    return Trajectory(rows, model.var_names, t0=1)
