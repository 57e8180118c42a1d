"""Working models for the cumulative incidence functions.

A model supplies, for covariate rows ``W``,

* ``cif(t, m, W)``: ``P(T <= t, M = m | W)``;
* ``event_free(u, W)``: ``P(T >= u | W)``.

Both take ``t`` (or ``u``) either as a 1-d grid shared by every row, giving
an ``(n, len(t))`` array, or as an ``(n, k)`` array of per-row times.

These feed :func:`y_m`, the conditional probability of a cause-``m`` event
in ``[u, t]`` given survival to ``u``, which carries model information about
censored subjects into the augmented losses.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset

__all__ = [
    "CifModel",
    "AalenJohansenModel",
    "FineGrayParams",
    "FineGrayModel",
    "fit_aalen_johansen",
    "fg_true_cif",
    "fg_z",
    "y_m",
    "PRESETS",
]


class CifModel:
    """Interface for cause-specific cumulative incidence models."""

    n_causes: int = 2

    def cif(self, t, m: int, W, left: bool = False) -> np.ndarray:
        raise NotImplementedError

    def event_free(self, u, W) -> np.ndarray:
        """``P(T >= u | W) = 1 - sum_m cif(u-, m, W)``."""
        total = sum(self.cif(u, m, W, left=True) for m in range(1, self.n_causes + 1))
        return 1.0 - total


def _grid(t, n: int) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return np.full((n, 1), float(t))
    if t.ndim == 1:
        return np.broadcast_to(t, (n, t.size))
    return t


# Aalen-Johansen -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AalenJohansenModel(CifModel):
    """Marginal nonparametric CIFs; covariates are ignored.

    Attributes
    ----------
    jump_times : (K,) distinct event times.
    increments : (n_causes, K) cause-specific CIF jumps.
    survival : (K,) all-cause Kaplan-Meier survival just after each jump.
    """

    jump_times: np.ndarray
    increments: np.ndarray
    survival: np.ndarray
    n_causes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "_cum", np.concatenate(
            (np.zeros((self.increments.shape[0], 1)), np.cumsum(self.increments, axis=1)), axis=1))

    def _n(self, W) -> int:
        W = np.asarray(W)
        return 1 if W.ndim < 2 else W.shape[0]

    def cif(self, t, m, W, left=False):
        t = _grid(t, self._n(W))
        idx = np.searchsorted(self.jump_times, t, side="left" if left else "right")
        return self._cum[m - 1][idx]

    def event_free(self, u, W):
        u = _grid(u, self._n(W))
        idx = np.searchsorted(self.jump_times, u, side="left")
        return np.concatenate(([1.0], self.survival))[idx]

    def to_csv_rows(self) -> list[tuple]:
        cum = self._cum[:, 1:]
        return [(float(u), float(s), *map(float, cum[:, k]))
                for k, (u, s) in enumerate(zip(self.jump_times, self.survival))]


def fit_aalen_johansen(data: Dataset) -> AalenJohansenModel:
    """Aalen-Johansen estimator of the marginal CIF of every cause."""
    ev = data.delta == 1
    uniq = np.unique(data.time[ev])
    K = data.n_causes
    if uniq.size == 0:
        return AalenJohansenModel(np.empty(0), np.zeros((K, 0)), np.empty(0), K)
    at_risk = data.n - np.searchsorted(np.sort(data.time), uniq, side="left")
    pos = np.searchsorted(uniq, data.time[ev])
    d = np.zeros((K, uniq.size))
    np.add.at(d, (data.cause[ev] - 1, pos), 1.0)
    hazard = d / at_risk
    surv = np.cumprod(1.0 - hazard.sum(axis=0))
    surv_before = np.concatenate(([1.0], surv[:-1]))
    inc = surv_before * hazard
    return AalenJohansenModel(uniq, inc, surv, K)


# Fine-Gray simulation model -------------------------------------------------

@dataclass(frozen=True)
class FineGrayParams:
    beta1: float
    beta2: float
    p: float

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("mixing mass p must lie in (0, 1)")


PRESETS = {
    "high": FineGrayParams(3.0, -0.5, 0.3),
    "medium": FineGrayParams(2.0, -0.5, 0.3),
    "low": FineGrayParams(1.5, -0.5, 0.3),
}


def fg_z(W) -> np.ndarray:
    """Subgroup indicator ``I(W1 <= 0.5 and W2 > 0.5)``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    return ((W[:, 0] <= 0.5) & (W[:, 1] > 0.5)).astype(float)


def _fg_cif(params: FineGrayParams, t, m: int, z) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    z = np.asarray(z, dtype=float)
    eta = np.exp(params.beta1 * z)
    if m == 1:
        # 1 - (1 - p (1 - e^-t))^eta, written to keep precision near t = 0
        base = np.log1p(params.p * np.expm1(-t))
        return -np.expm1(eta * base)
    if m == 2:
        rate = np.exp(params.beta2 * z)
        return (1.0 - params.p) ** eta * -np.expm1(-t * rate)
    raise ValueError("the simulation model has causes 1 and 2 only")


def fg_true_cif(params: FineGrayParams, t, m: int, w) -> np.ndarray | float:
    """True CIF of the simulation model at time(s) ``t`` for covariates ``w``."""
    z = fg_z(w)
    out = _fg_cif(params, np.asarray(t, dtype=float), m, z if np.ndim(w) > 1 else z[0])
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class FineGrayModel(CifModel):
    """The simulation model evaluated exactly at known parameters."""

    params: FineGrayParams
    z_fn: Callable[[np.ndarray], np.ndarray] = fg_z
    n_causes: int = 2

    def cif(self, t, m, W, left=False):
        z = self.z_fn(W)
        t = _grid(t, z.shape[0])
        return _fg_cif(self.params, t, m, z[:, None])

    def event_free(self, u, W):
        z = self.z_fn(W)
        u = _grid(u, z.shape[0])
        zc = z[:, None]
        eta = np.exp(self.params.beta1 * zc)
        s1 = np.exp(eta * np.log1p(self.params.p * np.expm1(-u)))
        return s1 - _fg_cif(self.params, u, 2, zc)


# conditional CIF -------------------------------------------------------------

def y_m(model: CifModel, u, t: float, m: int, W, return_flag: bool = False):
    """``P(u <= T <= t, M = m | T >= u, W)`` for ``u <= t``, else 0.

    Left limits are used at ``u`` so that an event exactly at ``u`` counts.
    Where the conditioning probability is zero the value is 0 and, with
    ``return_flag``, the entry is marked in the returned boolean mask.
    Values are clipped to ``[0, 1]``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    n = W.shape[0]
    u = _grid(u, n)
    num = model.cif(np.full((n, 1), float(t)), m, W) - model.cif(u, m, W, left=True)
    den = model.event_free(u, W)
    degenerate = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(degenerate, 0.0, num / np.where(degenerate, 1.0, den))
    val = np.where(u <= t, np.clip(val, 0.0, 1.0), 0.0)
    if return_flag:
        return val, degenerate & (u <= t)
    return val
