"""scikit-learn style wrappers so the indicator composes with pipelines.

>>> est = IntegralIndicator(k=12).fit(X)       # X: (T, n), NaN = missing
>>> est.G_                                     # scalar integral indicator
>>> est.transform(X)                           # G_i(t) per valid step
"""
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_grid, check_window_length
from .indicator import MIN_OVERLAP, incremental_indicator, integral_indicator
from .regime import BlockingSchedule, apply_blocking
from .trajectory import Trajectory


def _to_trajectory(est, X, reset):
    if isinstance(X, Trajectory):
        names = X.var_names
        values = X.values
        t0 = X.t0
    else:
        names = getattr(X, "columns", None)
        names = None if names is None else tuple(str(c) for c in names)
        values = check_grid(X)
        t0 = 1
    if reset:
        est.n_features_in_ = values.shape[1]
        if names is not None:
            est.feature_names_in_ = np.asarray(names, dtype=object)
    elif values.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {values.shape[1]} features, {type(est).__name__} was fitted "
                         f"with {est.n_features_in_}")
    return Trajectory(values, names, t0)


class IntegralIndicator(TransformerMixin, BaseEstimator):
    """Sliding-window correlation indicator as a transformer.

    Parameters
    ----------
    k : int
        Window length in steps.
    include_diagonal : bool
        Count ``|r_ii|`` in each row sum.
    incremental : bool
        Use the streaming running-sum path instead of per-window recompute.
    min_overlap : int
        Minimum jointly present rows for a coefficient to count.
    pairs : array-like of (i, j), optional
        Restrict to a pair subset.

    Attributes
    ----------
    report_ : IndicatorReport
    G_ : float
    valid_steps_ : ndarray
    """

    def __init__(self, k=12, include_diagonal=True, incremental=False, min_overlap=MIN_OVERLAP,
                 pairs=None):
        self.k = k
        self.include_diagonal = include_diagonal
        self.incremental = incremental
        self.min_overlap = min_overlap
        self.pairs = pairs

    def _report(self, traj):
        check_window_length(self.k)
        if self.incremental:
            return incremental_indicator(traj, self.k, pairs=self.pairs,
                                         include_diagonal=self.include_diagonal,
                                         min_overlap=self.min_overlap)
        return integral_indicator(traj, self.k, self.pairs, self.include_diagonal,
                                  min_overlap=self.min_overlap)

    def fit(self, X, y=None):
        traj = _to_trajectory(self, X, reset=True)
        self.report_ = self._report(traj)
        self.G_ = self.report_.G
        self.valid_steps_ = self.report_.valid_steps
        return self

    def transform(self, X):
        """Row indicators ``G_i(t)``, one row per valid step of ``X``."""
        check_is_fitted(self, "report_")
        return self._report(_to_trajectory(self, X, reset=False)).G_i

    def score(self, X, y=None):
        check_is_fitted(self, "report_")
        return self._report(_to_trajectory(self, X, reset=False)).G

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "n_features_in_")
        if input_features is None:
            input_features = getattr(self, "feature_names_in_", None)
        if input_features is None:
            input_features = [f"x{i + 1}" for i in range(self.n_features_in_)]
        return np.asarray([f"G_{name}" for name in input_features], dtype=object)


class Blocker(TransformerMixin, BaseEstimator):
    """Applies a blocking schedule to a (T, n) array.

    Variables named in ``schedule`` resolve against ``var_names`` (or the
    DataFrame columns, or ``x1..xn``).  Rows are periods ``t0, t0 + 1, ...``.
    """

    def __init__(self, schedule=None, var_names=None, t0=1):
        self.schedule = schedule
        self.var_names = var_names
        self.t0 = t0

    def _schedule(self):
        s = self.schedule
        return s if isinstance(s, BlockingSchedule) else BlockingSchedule(s or ())

    def _traj(self, X, reset):
        traj = _to_trajectory(self, X, reset)
        names = self.var_names if self.var_names is not None else traj.var_names
        return Trajectory(traj.values, names, self.t0)

    def fit(self, X, y=None):
        traj = self._traj(X, reset=True)
        self._schedule().resolve(traj.var_names, traj.T, traj.t0)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return apply_blocking(self._traj(X, reset=False), self._schedule()).values.copy()
