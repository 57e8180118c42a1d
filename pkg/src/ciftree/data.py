"""Competing-risks data containers, CSV ingestion and fold partitioning.

One row per subject: follow-up time ``min(T, C)``, the any-event indicator,
the observed cause (0 when censored) and ``p`` numeric covariates.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Observation",
    "Dataset",
    "TimeGrid",
    "load_csv",
    "save_csv",
    "read_covariates_csv",
    "split_folds",
]


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


@dataclass(frozen=True)
class Observation:
    time: float
    delta: int
    cause: int
    covariates: tuple[float, ...]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Right-censored competing-risks sample.

    Parameters
    ----------
    time : array of shape (n,)
        Observed follow-up times, all strictly positive.
    delta : array of shape (n,)
        1 if an event of any cause was observed, 0 if censored.
    cause : array of shape (n,)
        Observed cause in ``1..n_causes`` for events and 0 for censored rows.
    X : array of shape (n, p)
        Numeric covariates.
    n_causes : int, optional
        Number of competing causes ``K``. Defaults to ``max(2, max(cause))``.
    covariate_names : sequence of str, optional
        Defaults to ``w1..wp``.
    """

    time: np.ndarray
    delta: np.ndarray
    cause: np.ndarray
    X: np.ndarray
    n_causes: int = 0
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float).ravel()
        n = time.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one observation")
        delta = np.asarray(self.delta).ravel()
        cause = np.asarray(self.cause).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        if delta.shape[0] != n or cause.shape[0] != n or X.shape[0] != n:
            raise DataError("time, delta, cause and X must have the same number of rows")
        if not np.all(np.isfinite(time)):
            raise DataError(f"non-finite time at row {int(np.argmin(np.isfinite(time))) + 1}")
        bad = np.flatnonzero(time <= 0)
        if bad.size:
            raise DataError(f"nonpositive time at row {bad[0] + 1}")
        if not np.all((delta == 0) | (delta == 1)):
            raise DataError("delta must be 0 or 1")
        if np.any(cause != np.round(cause)) or np.any(cause < 0):
            raise DataError("cause must be a nonnegative integer")
        delta = delta.astype(np.int64)
        cause = cause.astype(np.int64)
        bad = np.flatnonzero((delta == 1) != (cause >= 1))
        if bad.size:
            raise DataError(f"cause/delta inconsistency at row {bad[0] + 1}")
        if not np.all(np.isfinite(X)):
            r = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
            raise DataError(f"missing or non-finite covariate at row {r + 1}")
        k = int(self.n_causes) if self.n_causes else max(2, int(cause.max(initial=0)))
        if k < 2:
            raise DataError("n_causes must be at least 2")
        if cause.max(initial=0) > k:
            raise DataError(f"observed cause {int(cause.max())} exceeds n_causes={k}")
        names = tuple(self.covariate_names) or tuple(f"w{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("covariate_names length does not match number of covariates")
        object.__setattr__(self, "time", _readonly(time))
        object.__setattr__(self, "delta", _readonly(delta))
        object.__setattr__(self, "cause", _readonly(cause))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "n_causes", k)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i: int) -> Observation:
        return Observation(float(self.time[i]), int(self.delta[i]), int(self.cause[i]),
                           tuple(float(v) for v in self.X[i]))

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], n_causes: int = 0,
                          covariate_names: Sequence[str] = ()) -> "Dataset":
        obs = list(observations)
        if not obs:
            raise DataError("dataset must contain at least one observation")
        p = len(obs[0].covariates)
        if any(len(o.covariates) != p for o in obs):
            raise DataError("covariate vectors must share a common length")
        return cls(np.array([o.time for o in obs]), np.array([o.delta for o in obs]),
                   np.array([o.cause for o in obs]),
                   np.array([o.covariates for o in obs], dtype=float).reshape(len(obs), p),
                   n_causes, tuple(covariate_names))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.time[idx], self.delta[idx], self.cause[idx], self.X[idx],
                       self.n_causes, self.covariate_names)

    def censoring_rate(self) -> float:
        return float(1.0 - self.delta.mean())

    def equals(self, other: "Dataset") -> bool:
        """Field-wise bitwise equality."""
        return (self.n_causes == other.n_causes
                and self.covariate_names == other.covariate_names
                and np.array_equal(self.time, other.time)
                and np.array_equal(self.delta, other.delta)
                and np.array_equal(self.cause, other.cause)
                and np.array_equal(self.X, other.X))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Evaluation times ``t_1 < ... < t_J`` with positive weights summing to one."""

    times: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        if t.ndim != 1 or t.size == 0:
            raise DataError("time grid must be a nonempty 1-d sequence")
        if np.any(~np.isfinite(t)) or np.any(t <= 0):
            raise DataError("grid times must be finite and positive")
        if np.any(np.diff(t) <= 0):
            raise DataError("grid times must be strictly increasing")
        w = np.full(t.size, 1.0) if self.weights is None else np.atleast_1d(
            np.asarray(self.weights, dtype=float))
        if w.shape != t.shape:
            raise DataError("weights must match times in length")
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise DataError("grid weights must be positive")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "weights", _readonly(w / w.sum()))

    @property
    def J(self) -> int:
        return self.times.size

    def __len__(self) -> int:
        return self.J


# CSV ----------------------------------------------------------------------

DEFAULT_SCHEMA = {"time": "time", "status": "status", "cause": "cause"}


def _data_lines(text: str) -> list[str]:
    return [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]


def load_csv(path, schema: Mapping | None = None, n_causes: int | None = None) -> Dataset:
    """Read a dataset from CSV.

    ``schema`` maps the roles ``time``, ``status``, ``cause`` and optionally
    ``covariates`` (a list) to column names. Unlisted columns other than
    the three role columns are taken as covariates in file order. Lines
    starting with ``#`` are ignored. Either ``status`` or ``cause`` may be
    absent; the missing one is derived from the other.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO("\n".join(_data_lines(text))))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError(f"{path}: empty file (header required)") from None
    col = {name: j for j, name in enumerate(header)}
    if schema["time"] not in col:
        raise DataError(f"{path}: time column '{schema['time']}' not found")
    has_status = schema["status"] in col
    has_cause = schema["cause"] in col
    if not (has_status or has_cause):
        raise DataError(f"{path}: need a status or cause column")
    role_cols = {schema["time"], schema["status"], schema["cause"]}
    covs = schema.get("covariates")
    if covs is None:
        covs = [h for h in header if h not in role_cols]
    missing = [c for c in covs if c not in col]
    if missing:
        raise DataError(f"{path}: covariate columns not found: {missing}")

    times, status, causes, X = [], [], [], []
    for k, row in enumerate(reader, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: ragged row {k}: expected {len(header)} fields, got {len(row)}")
        try:
            t = float(row[col[schema["time"]]])
            c = int(float(row[col[schema["cause"]]])) if has_cause else None
            s = int(float(row[col[schema["status"]]])) if has_status else None
            x = [float(row[col[name]]) for name in covs]
        except ValueError as exc:
            raise DataError(f"{path}: parse failure at row {k}: {exc}") from None
        if not t > 0:
            raise DataError(f"nonpositive time at row {k}")
        if s is None:
            s = int(c > 0)
        if c is None:
            if s not in (0, 1):
                raise DataError(f"invalid status at row {k}")
            c = s
        if s not in (0, 1) or (s == 1) != (c >= 1):
            raise DataError(f"cause/delta inconsistency at row {k}")
        times.append(t)
        status.append(s)
        causes.append(c)
        X.append(x)
    if not times:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(times), np.array(status), np.array(causes),
                   np.array(X, dtype=float).reshape(len(times), len(covs)),
                   n_causes or 0, tuple(covs))


def _fmt(v: float) -> str:
    return repr(float(v))


def save_csv(data: Dataset, path, comments: Sequence[str] = ()) -> None:
    """Write ``data`` in the layout read by :func:`load_csv`.

    Floats use their shortest round-trip representation so that a reload
    reproduces every field bit for bit.
    """
    with open(path, "w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status", "cause", *data.covariate_names])
        for i in range(data.n):
            w.writerow([_fmt(data.time[i]), int(data.delta[i]), int(data.cause[i]),
                        *(_fmt(v) for v in data.X[i])])


def read_covariates_csv(path, names: Sequence[str]) -> np.ndarray:
    """Read just the named covariate columns from a CSV (e.g. for prediction)."""
    reader = csv.reader(io.StringIO("\n".join(_data_lines(Path(path).read_text()))))
    header = [h.strip() for h in next(reader)]
    col = {name: j for j, name in enumerate(header)}
    missing = [c for c in names if c not in col]
    if missing:
        raise DataError(f"{path}: covariate columns not found: {missing}")
    rows = []
    for k, row in enumerate(reader, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: ragged row {k}")
        try:
            rows.append([float(row[col[c]]) for c in names])
        except ValueError as exc:
            raise DataError(f"{path}: parse failure at row {k}: {exc}") from None
    return np.array(rows, dtype=float).reshape(len(rows), len(names))


# folds --------------------------------------------------------------------

def split_folds(data: Dataset | int, Q: int, seed=None) -> list[np.ndarray]:
    """Partition ``range(n)`` into ``Q`` disjoint, balanced, sorted index sets.

    Fold sizes differ by at most one, the larger folds first. The partition
    is a deterministic function of ``seed``.
    """
    n = data if isinstance(data, (int, np.integer)) else data.n
    if not 2 <= Q <= n:
        raise DataError(f"fold count Q={Q} must satisfy 2 <= Q <= n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, Q)]
