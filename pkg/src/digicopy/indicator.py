"""Sliding-window correlation matrices and the integral indicator.

For every step ``t`` with a full trailing window of ``k`` rows the Pearson
correlation matrix ``R_k(t)`` is formed, its absolute values are summed per
row into ``G_i(t)``, and those are summed over variables and valid steps into
the scalar ``G``.

Two paths produce the same :class:`IndicatorReport`:

* :func:`integral_indicator` recomputes each window from scratch (column
  centering first, then cross products);
* :func:`incremental_indicator` keeps compensated running sums in a
  :class:`CorrelationWindow` and updates them with one push and one pop per
  step.

Both fall back to an exact two-pass evaluation for pairs whose running-sum
estimate is ill-conditioned or close to degenerate, so degeneracy decisions
never depend on the path taken.

Missing cells (NaN) are handled pairwise: each coefficient uses only the rows
where both variables are present.  Pairs with fewer than ``min_overlap``
jointly present rows, and variables with zero in-window variance, contribute
``r = 0`` (the diagonal included).
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_window_length
from .errors import InputError, SequencingError, StepRangeError
from .trajectory import Trajectory, default_names

MIN_OVERLAP = 3
# std <= DEGENERATE_RTOL * max|x| over the overlap counts as zero variance
DEGENERATE_RTOL = 1e-12
# running-sum estimates are re-evaluated exactly when cancellation exceeds this
CANCEL_RTOL = 1e-6
# and when the spread is within this factor of the degeneracy threshold
NEAR_DEGENERATE_RTOL = 1e-10
_EXACT_CHUNK = 1 << 21


def all_pairs(n):
    return np.triu_indices(n)


def normalize_pairs(n, pairs=None):
    """Sorted unique (i <= j) pair index arrays, diagonal always included."""
    if pairs is None:
        return all_pairs(n)
    P = np.asarray(pairs, dtype=np.int64)
    if P.size == 0:
        P = P.reshape(0, 2)
    if P.ndim != 2 or 2 not in P.shape:
        raise InputError("pairs must be a sequence of (i, j) index pairs")
    if P.shape[1] != 2:
        P = P.T
    if P.size and (P.min() < 0 or P.max() >= n):
        raise InputError(f"pair index outside [0, {n})")
    lo = np.minimum(P[:, 0], P[:, 1])
    hi = np.maximum(P[:, 0], P[:, 1])
    diag = np.arange(n)
    codes = np.unique(np.concatenate([lo * n + hi, diag * n + diag]))
    return codes // n, codes % n


def pairs_from_structure(A):
    """Pair set from the sparsity pattern of a matrix (or list of matrices)."""
    import scipy.sparse as sp
    mats = A if isinstance(A, (list, tuple)) else [A]
    n = mats[0].shape[0]
    out = []
    for M in mats:
        coo = sp.coo_matrix(M)
        keep = coo.data != 0
        out.append(np.column_stack([coo.row[keep], coo.col[keep]]))
    return normalize_pairs(n, np.vstack(out) if out else None)


# --------------------------------------------------------------------------
# shared pair evaluation


def _exact_pairs(Xw, I, J, min_overlap):
    """Two-pass pairwise-complete Pearson coefficients for pair arrays."""
    out = np.empty(I.shape[0])
    step = max(1, _EXACT_CHUNK // max(Xw.shape[0], 1))
    for lo in range(0, I.shape[0], step):
        Ic, Jc = I[lo:lo + step], J[lo:lo + step]
        xi, xj = Xw[:, Ic], Xw[:, Jc]
        joint = ~(np.isnan(xi) | np.isnan(xj))
        cnt = joint.sum(axis=0)
        safe = np.maximum(cnt, 1)
        xi0 = np.where(joint, xi, 0.0)
        xj0 = np.where(joint, xj, 0.0)
        di = np.where(joint, xi0 - xi0.sum(axis=0) / safe, 0.0)
        dj = np.where(joint, xj0 - xj0.sum(axis=0) / safe, 0.0)
        sxx = (di * di).sum(axis=0)
        syy = (dj * dj).sum(axis=0)
        sxy = (di * dj).sum(axis=0)
        ok_i = (sxx > 0) & (np.sqrt(sxx / safe) > DEGENERATE_RTOL * np.abs(xi0).max(axis=0, initial=0.0))
        ok_j = (syy > 0) & (np.sqrt(syy / safe) > DEGENERATE_RTOL * np.abs(xj0).max(axis=0, initial=0.0))
        ok = ok_i & ok_j & (cnt >= min_overlap)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(ok, sxy / np.sqrt(sxx * syy), 0.0)
        r = np.where(Ic == Jc, ok.astype(np.float64), r)
        out[lo:lo + step] = np.clip(r, -1.0, 1.0)
    return out


def _finish(N, sxx, syy, cov, ref_i, ref_j, scale, I, J, window, min_overlap):
    """Turn running-sum estimates into coefficients, deferring hard pairs.

    ``ref_i``/``ref_j`` are the sums of squared (shifted) values the spread
    estimates were derived from; ``scale`` is the per-variable window max |x|.
    """
    N = np.asarray(N, dtype=np.float64)
    enough = N >= min_overlap
    si, sj = scale[I], scale[J]
    with np.errstate(invalid="ignore"):
        flagged = enough & ((sxx <= CANCEL_RTOL * ref_i) | (syy <= CANCEL_RTOL * ref_j)
                            | (sxx <= (NEAR_DEGENERATE_RTOL * si) ** 2 * N)
                            | (syy <= (NEAR_DEGENERATE_RTOL * sj) ** 2 * N))
    easy = enough & ~flagged
    r = np.zeros(I.shape[0])
    with np.errstate(invalid="ignore", divide="ignore"):
        r[easy] = cov[easy] / np.sqrt(sxx[easy] * syy[easy])
    r[easy & (I == J)] = 1.0
    hard = np.flatnonzero(flagged)
    if hard.size:
        r[hard] = _exact_pairs(window, I[hard], J[hard], min_overlap)
    return np.clip(r, -1.0, 1.0)


def _finish_complete(N, spread, ref, cov, scale, I, J, diag, window, min_overlap):
    """:func:`_finish` for gap-free windows, where spreads are per variable."""
    r = np.zeros(I.shape[0])
    if N < min_overlap:
        return r
    bad = (spread <= CANCEL_RTOL * ref) | (spread <= (NEAR_DEGENERATE_RTOL * scale) ** 2 * N)
    inv = np.zeros_like(spread)
    np.divide(1.0, np.sqrt(spread, where=~bad, out=np.ones_like(spread)), where=~bad, out=inv)
    np.multiply(cov, inv[I], out=r)
    r *= inv[J]
    r[diag] = 1.0
    if bad.any():
        hard = np.flatnonzero(bad[I] | bad[J])
        r[hard] = _exact_pairs(window, I[hard], J[hard], min_overlap)
    np.clip(r, -1.0, 1.0, out=r)
    return r


def _row_sums(n, I, J, r, include_diagonal):
    a = np.abs(r)
    off = I != J
    G = np.zeros(n)
    G += np.bincount(I[off], a[off], minlength=n)
    G += np.bincount(J[off], a[off], minlength=n)
    if include_diagonal:
        G += np.bincount(I[~off], a[~off], minlength=n)
    return G


def _window_scale(Xw):
    return np.abs(np.where(np.isnan(Xw), 0.0, Xw)).max(axis=0, initial=0.0)


def _batch_pairs(Xw, I, J, dense, min_overlap):
    """Coefficients for one window recomputed from scratch."""
    k, n = Xw.shape
    M = ~np.isnan(Xw)
    cnt = M.sum(axis=0)
    mu = np.where(M, Xw, 0.0).sum(axis=0) / np.maximum(cnt, 1)
    Z = np.where(M, Xw - mu, 0.0)
    if M.all():
        a1 = Z.sum(axis=0)
        a2 = (Z * Z).sum(axis=0)
        spread = a2 - a1 * a1 / k
        if dense:
            C = (Z.T @ Z)[I, J]
        else:
            C = (Z[:, I] * Z[:, J]).sum(axis=0)
        cov = C - a1[I] * a1[J] / k
        return _finish_complete(k, spread, a2, cov, _window_scale(Xw), I, J, np.flatnonzero(I == J),
                                Xw, min_overlap)
    else:
        Mf = M.astype(np.float64)
        Z2 = Z * Z
        if dense:
            N = (Mf.T @ Mf)[I, J]
            A1 = Z.T @ Mf
            A2 = Z2.T @ Mf
            a1i, a1j = A1[I, J], A1[J, I]
            ref_i, ref_j = A2[I, J], A2[J, I]
            C = (Z.T @ Z)[I, J]
        else:
            mi, mj = Mf[:, I], Mf[:, J]
            N = (mi * mj).sum(axis=0)
            a1i, a1j = (Z[:, I] * mj).sum(axis=0), (Z[:, J] * mi).sum(axis=0)
            ref_i, ref_j = (Z2[:, I] * mj).sum(axis=0), (Z2[:, J] * mi).sum(axis=0)
            C = (Z[:, I] * Z[:, J]).sum(axis=0)
        safe = np.maximum(N, 1)
        sxx = ref_i - a1i * a1i / safe
        syy = ref_j - a1j * a1j / safe
        cov = C - a1i * a1j / safe
    return _finish(N, sxx, syy, cov, ref_i, ref_j, _window_scale(Xw), I, J, Xw, min_overlap)


# --------------------------------------------------------------------------
# public types


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Symmetric correlation matrix for the window ending at step ``t``."""

    t: int
    values: np.ndarray
    var_names: tuple = None

    @property
    def n(self):
        return self.values.shape[0]

    @classmethod
    def from_pairs(cls, t, n, I, J, r, var_names=None):
        R = np.zeros((n, n))
        R[I, J] = r
        R[J, I] = r
        R.setflags(write=False)
        return cls(t, R, tuple(var_names) if var_names is not None else default_names(n))

    def triplets(self):
        """``(t, i, j, r)`` rows for the upper triangle, 1-based indices."""
        I, J = np.triu_indices(self.n)
        return [(self.t, int(i) + 1, int(j) + 1, float(self.values[i, j])) for i, j in zip(I, J)]


@dataclass(eq=False)
class IndicatorReport:
    """Per-step row indicators plus their totals.

    ``G_i`` has one row per valid step; ``G_t`` is its row sum and ``G`` the
    sum of ``G_t``.  A summary-only report (``G_i is None``) carries just the
    scalar total.
    """

    k: int
    valid_steps: np.ndarray
    G_i: np.ndarray
    G_t: np.ndarray
    G: float
    var_names: tuple
    label: str = ""
    invalid_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    include_diagonal: bool = True

    @classmethod
    def from_rows(cls, k, steps, G_i, var_names, label="", invalid_steps=(), include_diagonal=True):
        G_i = np.asarray(G_i, dtype=np.float64).reshape(len(steps), len(var_names))
        G_t = G_i.sum(axis=1)
        return cls(k, np.asarray(steps, dtype=np.int64), G_i, G_t, math.fsum(G_t),
                   tuple(var_names), label, np.asarray(invalid_steps, dtype=np.int64),
                   include_diagonal)

    @classmethod
    def summary_only(cls, G, k, var_names, label=""):
        return cls(int(k), np.zeros(0, dtype=np.int64), None, None, float(G), tuple(var_names), label)

    @property
    def has_steps(self):
        return self.G_i is not None

    @property
    def n(self):
        return len(self.var_names)

    def __eq__(self, other):
        if not isinstance(other, IndicatorReport):
            return NotImplemented
        same = (self.k == other.k and self.var_names == other.var_names
                and self.label == other.label and self.G == other.G
                and self.include_diagonal == other.include_diagonal
                and np.array_equal(self.valid_steps, other.valid_steps)
                and np.array_equal(self.invalid_steps, other.invalid_steps)
                and self.has_steps == other.has_steps)
        if same and self.has_steps:
            same = np.array_equal(self.G_i, other.G_i) and np.array_equal(self.G_t, other.G_t)
        return same

    __hash__ = None


# --------------------------------------------------------------------------
# batch path


def _as_trajectory(traj):
    return traj if isinstance(traj, Trajectory) else Trajectory(traj)


def window_correlation(traj, t, k, min_overlap=MIN_OVERLAP):
    """Correlation matrix of the ``k`` rows ending at step ``t``."""
    traj = _as_trajectory(traj)
    k = check_window_length(k)
    if t - k + 1 < traj.t0 or t > traj.t0 + traj.T - 1:
        raise StepRangeError(
            f"window [{t - k + 1}, {t}] not inside trajectory steps [{traj.t0}, {traj.t0 + traj.T - 1}]")
    end = t - traj.t0 + 1
    I, J = all_pairs(traj.n)
    r = _batch_pairs(traj.values[end - k:end], I, J, True, min_overlap)
    return CorrelationMatrix.from_pairs(t, traj.n, I, J, r, traj.var_names)


def row_indicator(R, include_diagonal=True):
    """``G_i = sum_j |r_ij|`` for every row of a correlation matrix."""
    values = R.values if isinstance(R, CorrelationMatrix) else np.asarray(R, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise InputError(f"correlation matrix must be square, got shape {values.shape}")
    a = np.abs(values)
    G = a.sum(axis=1)
    if not include_diagonal:
        G = G - np.diag(a)
    return G


def integral_indicator(traj, k, pairs=None, include_diagonal=True, label="",
                       min_overlap=MIN_OVERLAP, n_jobs=1):
    """Recompute every full window of ``traj`` and aggregate the indicator.

    Steps ``t0 .. t0+k-2`` lack a full window and are reported in
    ``invalid_steps``.  ``n_jobs > 1`` spreads windows over threads; the
    reduction order is fixed so results do not depend on it.
    """
    traj = _as_trajectory(traj)
    k = check_window_length(k)
    if traj.T < k:
        raise InputError(f"trajectory has {traj.T} rows, fewer than window length {k}")
    dense = pairs is None
    I, J = normalize_pairs(traj.n, pairs)
    X = traj.values

    def one(end):
        r = _batch_pairs(X[end - k:end], I, J, dense, min_overlap)
        return _row_sums(traj.n, I, J, r, include_diagonal)

    ends = range(k, traj.T + 1)
    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(one, ends))
    else:
        rows = [one(e) for e in ends]
    steps = traj.t0 + np.arange(k - 1, traj.T)
    return IndicatorReport.from_rows(k, steps, np.array(rows).reshape(len(steps), traj.n),
                                     traj.var_names, label, traj.t0 + np.arange(k - 1),
                                     include_diagonal)


# --------------------------------------------------------------------------
# incremental path


class _Kahan:
    """Compensated accumulator over an array of running sums."""

    def __init__(self, shape):
        self.s = np.zeros(shape)
        self.c = np.zeros(shape)

    def add(self, v):
        y = v - self.c
        t = self.s + y
        np.subtract(t, self.s, out=self.c)
        self.c -= y
        self.s = t

    def sub(self, v):
        self.add(-v)

    @property
    def value(self):
        return self.s - self.c


class CorrelationWindow:
    """Running sufficient statistics for one sliding window of length ``k``.

    Values are stored shifted by a per-variable reference (the first value
    seen, re-centred when the data drift far from it) and accumulated with
    compensated summation.  While the window has no gaps only per-variable
    sums and the pair cross products are kept; once a gap enters, pair-specific
    counts and sums are tracked as well.

    Parameters
    ----------
    n : int
        Number of variables.
    k : int
        Window length.
    pairs : array-like, optional
        Pair subset to track, as ``(i, j)`` rows; all pairs by default.
    """

    def __init__(self, n, k, pairs=None, min_overlap=MIN_OVERLAP):
        self.n = int(n)
        self.k = check_window_length(k)
        self.min_overlap = min_overlap
        self.I, self.J = normalize_pairs(self.n, pairs)
        self._diag = np.flatnonzero(self.I == self.J)
        self._ring = np.full((self.k, self.n), np.nan)
        self._head = 0
        self.size = 0
        self.last_step = None
        self.shift = np.zeros(self.n)
        self._shift_set = np.zeros(self.n, dtype=bool)
        self._missing = 0
        self._since_check = 0
        self._reset_stats()

    # -- state helpers
    def _reset_stats(self):
        P = self.I.shape[0]
        self.pairwise = self._missing > 0
        self.count = 0
        self.C = _Kahan(P)
        if self.pairwise:
            self.N = np.zeros(P, dtype=np.int64)
            self.A1, self.B1 = _Kahan(P), _Kahan(P)
            self.A2, self.B2 = _Kahan(P), _Kahan(P)
            self.s1 = self.s2 = None
        else:
            self.s1, self.s2 = _Kahan(self.n), _Kahan(self.n)
            self.N = self.A1 = self.B1 = self.A2 = self.B2 = None

    def rows(self):
        """Retained rows, oldest first."""
        idx = (self._head + np.arange(self.size)) % self.k
        return self._ring[idx]

    def _accumulate(self, x, sign):
        present = ~np.isnan(x)
        z = np.where(present, x - self.shift, 0.0)
        zi, zj = z[self.I], z[self.J]
        if sign > 0:
            self.C.add(zi * zj)
        else:
            self.C.sub(zi * zj)
        if self.pairwise:
            mi, mj = present[self.I], present[self.J]
            upd = [(self.A1, zi * mj), (self.B1, zj * mi), (self.A2, zi * zi * mj), (self.B2, zj * zj * mi)]
            self.N += sign * (mi & mj)
        else:
            upd = [(self.s1, z), (self.s2, z * z)]
        for acc, v in upd:
            if sign > 0:
                acc.add(v)
            else:
                acc.sub(v)
        self.count += sign

    def _rebuild(self):
        rows = self.rows()
        self._reset_stats()
        for x in rows:
            self._accumulate(x, +1)

    def _maybe_recentre(self):
        rows = self.rows()
        M = ~np.isnan(rows)
        cnt = M.sum(axis=0)
        has = cnt > 0
        mu = np.where(M, rows, 0.0).sum(axis=0) / np.maximum(cnt, 1)
        var = np.where(M, rows - mu, 0.0)
        var = (var * var).sum(axis=0) / np.maximum(cnt, 1)
        drift = (mu - self.shift) ** 2
        far = has & (drift > 64.0 * var + (1e-8 * np.abs(mu)) ** 2)
        if far.any():
            self.shift = np.where(has, mu, self.shift)
            self._shift_set |= has
            self._rebuild()

    # -- public API
    def push(self, row, t=None):
        """Add the newest row; ``t`` (optional) must follow the previous step."""
        x = np.asarray(row, dtype=np.float64).ravel()
        if x.shape[0] != self.n:
            raise InputError(f"row has {x.shape[0]} values, expected {self.n}")
        if np.isinf(x).any():
            raise InputError("row contains infinite values")
        if t is not None:
            if self.last_step is not None and t != self.last_step + 1:
                raise SequencingError(f"row for step {t} arrived after step {self.last_step}")
            self.last_step = t
        if self.size == self.k:
            raise InputError("window is full; pop before pushing")
        new = ~np.isnan(x) & ~self._shift_set
        self.shift[new] = x[new]
        self._shift_set |= new
        self._ring[(self._head + self.size) % self.k] = x
        self.size += 1
        gaps = int(np.isnan(x).sum())
        self._missing += gaps
        if gaps and not self.pairwise:
            self._rebuild()
        else:
            self._accumulate(x, +1)
        self._since_check += 1
        if self._since_check >= self.k:
            self._since_check = 0
            self._maybe_recentre()

    def pop(self):
        """Retire the oldest row and return it."""
        if self.size == 0:
            raise InputError("window is empty")
        x = self._ring[self._head].copy()
        self._accumulate(x, -1)
        self._ring[self._head] = np.nan
        self._head = (self._head + 1) % self.k
        self.size -= 1
        self._missing -= int(np.isnan(x).sum())
        if self.pairwise and self._missing == 0:
            # pair counts collapse to the row count; keep C, rebuild the vectors
            C = self.C
            self._reset_stats()
            rows = self.rows()
            for x_ in rows:
                z = x_ - self.shift
                self.s1.add(z)
                self.s2.add(z * z)
            self.count = self.size
            self.C = C
        return x

    def sums(self):
        """Unshifted running sums per tracked pair.

        Returns a dict with ``count``, ``sum_i``, ``sum_j``, ``sumsq_i``,
        ``sumsq_j`` and ``cross`` arrays, all restricted to the rows where both
        members of the pair are present.
        """
        I, J, c = self.I, self.J, self.shift
        if self.pairwise:
            N = self.N.astype(np.float64)
            a1, b1, a2, b2 = self.A1.value, self.B1.value, self.A2.value, self.B2.value
        else:
            N = np.full(I.shape[0], float(self.count))
            s1, s2 = self.s1.value, self.s2.value
            a1, b1, a2, b2 = s1[I], s1[J], s2[I], s2[J]
        ci, cj = c[I], c[J]
        return {
            "count": N,
            "sum_i": a1 + N * ci,
            "sum_j": b1 + N * cj,
            "sumsq_i": a2 + 2 * ci * a1 + N * ci * ci,
            "sumsq_j": b2 + 2 * cj * b1 + N * cj * cj,
            "cross": self.C.value + cj * a1 + ci * b1 + N * ci * cj,
        }

    def pair_correlations(self):
        """Coefficients for the tracked pairs over the retained rows."""
        I, J = self.I, self.J
        C = self.C.value
        if self.pairwise:
            N = self.N
            safe = np.maximum(N, 1)
            a1, b1, ref_i, ref_j = self.A1.value, self.B1.value, self.A2.value, self.B2.value
            sxx = ref_i - a1 * a1 / safe
            syy = ref_j - b1 * b1 / safe
            cov = C - a1 * b1 / safe
        else:
            cnt = max(self.count, 1)
            s1, s2 = self.s1.value, self.s2.value
            spread = s2 - s1 * s1 / cnt
            cov = C - s1[I] * s1[J] / cnt
            rows = self.rows()
            return _finish_complete(self.count, spread, s2, cov, _window_scale(rows), I, J,
                                    self._diag, rows, self.min_overlap)
        rows = self.rows()
        return _finish(N, sxx, syy, cov, ref_i, ref_j, _window_scale(rows), I, J, rows,
                       self.min_overlap)

    def correlation(self, t=None, var_names=None):
        return CorrelationMatrix.from_pairs(t, self.n, self.I, self.J, self.pair_correlations(),
                                            var_names)

    def row_indicator(self, include_diagonal=True):
        return _row_sums(self.n, self.I, self.J, self.pair_correlations(), include_diagonal)


def _iter_rows(rows, t0):
    if isinstance(rows, Trajectory):
        for t, x in zip(rows.steps, rows.values):
            yield int(t), x
        return
    expected = t0
    for item in rows:
        if isinstance(item, tuple) and len(item) == 2 and np.ndim(item[1]) == 1:
            t, x = item
            yield int(t), x
        else:
            yield expected, item
        expected += 1


def incremental_indicator(rows, k, var_names=None, t0=1, pairs=None, include_diagonal=True,
                          label="", min_overlap=MIN_OVERLAP):
    """Stream rows through a :class:`CorrelationWindow` and build the report.

    ``rows`` is a :class:`Trajectory`, an iterable of row vectors (numbered
    from ``t0``), or an iterable of ``(t, row)`` tuples which must arrive in
    consecutive step order.
    """
    k = check_window_length(k)
    if isinstance(rows, Trajectory):
        var_names = rows.var_names if var_names is None else var_names
        t0 = rows.t0
    window = None
    steps, out = [], []
    first = None
    for t, x in _iter_rows(rows, t0):
        x = np.asarray(x, dtype=np.float64)
        if window is None:
            window = CorrelationWindow(x.shape[0], k, pairs, min_overlap)
            first = t
        if window.size == k:
            window.pop()
        window.push(x, t)
        if window.size == k:
            steps.append(t)
            out.append(window.row_indicator(include_diagonal))
    if window is None or len(steps) == 0:
        got = 0 if window is None else window.last_step - first + 1
        raise InputError(f"stream has {got} rows, fewer than window length {k}")
    n = window.n
    names = default_names(n) if var_names is None else tuple(var_names)
    return IndicatorReport.from_rows(k, steps, np.array(out), names, label,
                                     first + np.arange(k - 1), include_diagonal)
