"""Time series of state values with explicit gaps."""
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_grid
from .errors import InputError


def default_names(n):
    return tuple(f"x{i + 1}" for i in range(n))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """T x n grid of observations.

    Missing cells are NaN; use :attr:`mask` for presence.  Step labels run
    ``t0, t0 + 1, ..., t0 + T - 1`` (1-based by default).
    """

    values: np.ndarray
    var_names: tuple = None
    t0: int = 1
    log: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = check_grid(self.values, "trajectory values")
        values = np.array(values, dtype=np.float64, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        names = self.var_names
        if names is None:
            names = default_names(values.shape[1])
        names = tuple(str(v) for v in names)
        if len(names) != values.shape[1]:
            raise InputError(f"{len(names)} variable names for {values.shape[1]} columns")
        if len(set(names)) != len(names):
            raise InputError("variable names must be unique")
        object.__setattr__(self, "var_names", names)
        object.__setattr__(self, "t0", int(self.t0))

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def steps(self):
        return np.arange(self.t0, self.t0 + self.T)

    @property
    def mask(self):
        return ~np.isnan(self.values)

    @property
    def n_missing(self):
        return int(np.isnan(self.values).sum())

    def row(self, t):
        return self.values[t - self.t0]

    def column(self, var):
        return self.values[:, self.index_of(var)]

    def index_of(self, var):
        if isinstance(var, str):
            try:
                return self.var_names.index(var)
            except ValueError:
                raise InputError(f"unknown variable {var!r}") from None
        return int(var)

    def gap_summary(self):
        frac = np.isnan(self.values).mean(axis=0) if self.T else np.zeros(self.n)
        return {name: float(f) for name, f in zip(self.var_names, frac)}

    def with_values(self, values):
        return Trajectory(values, self.var_names, self.t0)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.var_names == other.var_names and self.t0 == other.t0
                and self.values.shape == other.values.shape
                and np.array_equal(self.values, other.values, equal_nan=True))

    __hash__ = None
