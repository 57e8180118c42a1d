"""Censoring survival estimation and censoring-martingale integrals.

``G(s) = P(C >= s)`` is estimated by the product-limit method with the
roles of events and censorings swapped. In right-continuous notation the
estimate of ``P(C >= s)`` is the left limit ``Ghat(s-)``; that is the value
used for every inverse-probability weight.

Tie convention: at a common time, events precede censorings, so a subject
with an event at ``u`` is not in the censoring risk set at ``u``.

Martingale integrals
--------------------
For an observation ``(T, D)`` and integrand ``h``::

    int_0^T h(u) / G(u) dM_G(u)
        = - sum_{u_k < T} h(u_k) dLambda(u_k) / Ghat(u_k)
          + (1 - D) h(T) / Ghat(T-)

The compensator uses the right-continuous ``Ghat(u_k)``; the censoring
point mass and its compensator at ``T`` are merged, using
``Ghat(T) = Ghat(T-) (1 - dLambda(T))``. With these conventions
``1 / Ghat(u_k) - 1 / Ghat(u_k-) = dLambda(u_k) / Ghat(u_k)`` telescopes,
so ``D / Ghat(T-) + int_0^T dM_G / G = 1`` holds exactly for every
observation, and ``int_t^T dM_G / G = 1 / Ghat(t-) - D / Ghat(T-)`` for
``T >= t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import Dataset, Observation

__all__ = [
    "PositivityError",
    "CensoringModel",
    "UnitCensoring",
    "MartingaleTerms",
    "fit_km",
    "survival_at",
    "ipcw_weight",
    "ipcw_weights",
    "choose_tau",
    "martingale_terms",
    "martingale_integral",
    "DEFAULT_FLOOR",
]

DEFAULT_FLOOR = 0.05


class PositivityError(ArithmeticError):
    """A censoring-survival denominator fell below the positivity floor.

    ``tau_hint`` is the largest horizon at which the floor still holds;
    truncating follow-up there (or lowering the floor) removes the error.
    """

    def __init__(self, message: str, value: float = np.nan, tau_hint: float = np.nan):
        super().__init__(message)
        self.value = value
        self.tau_hint = tau_hint


@dataclass(frozen=True, eq=False)
class CensoringModel:
    """Product-limit estimate of the censoring distribution.

    Attributes
    ----------
    jump_times : (K,) increasing times with at least one censoring.
    hazard_increments : (K,) ``d_k / Y_k``.
    survival : (K,) ``Ghat`` just after each jump.
    n_at_risk : (K,) censoring risk-set sizes ``Y_k``.
    """

    jump_times: np.ndarray
    hazard_increments: np.ndarray
    survival: np.ndarray
    n_at_risk: np.ndarray

    def survival_at(self, s, left: bool = False) -> np.ndarray:
        """``Ghat(s)``, or ``Ghat(s-) = P(C >= s)`` when ``left`` is set."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.jump_times, s, side="left" if left else "right")
        g = np.concatenate(([1.0], self.survival))
        return g[idx]

    def hazard_at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.jump_times, s, side="left")
        hit = (idx < self.jump_times.size) & (
            self.jump_times[np.minimum(idx, self.jump_times.size - 1)] == s
            if self.jump_times.size else np.zeros(s.shape, bool))
        dl = np.concatenate((self.hazard_increments, [0.0]))
        return np.where(hit, dl[idx], 0.0)

    def to_csv_rows(self) -> list[tuple[float, float]]:
        return [(0.0, 1.0)] + list(zip(self.jump_times.tolist(), self.survival.tolist()))


class UnitCensoring(CensoringModel):
    """The degenerate model ``G == 1`` (no censoring hazard)."""

    def __init__(self):
        empty = np.empty(0)
        super().__init__(empty, empty, empty, np.empty(0, dtype=np.int64))


def fit_km(data: Dataset) -> CensoringModel:
    """Kaplan-Meier estimate of ``G`` treating censorings as the events."""
    return _km_from_arrays(data.time, data.delta)


def _km_from_arrays(time: np.ndarray, delta: np.ndarray) -> CensoringModel:
    time = np.asarray(time, dtype=float)
    delta = np.asarray(delta)
    uniq, inv = np.unique(time, return_inverse=True)
    n_cens = np.bincount(inv, weights=(delta == 0), minlength=uniq.size)
    n_event = np.bincount(inv, weights=(delta == 1), minlength=uniq.size)
    n_total = np.bincount(inv, minlength=uniq.size)
    n_ge = n_total[::-1].cumsum()[::-1]
    at_risk = n_ge - n_event
    keep = n_cens > 0
    u = uniq[keep]
    y = at_risk[keep].astype(np.int64)
    dl = n_cens[keep] / y
    surv = np.cumprod(1.0 - dl)
    for a in (u, dl, surv, y):
        a.setflags(write=False)
    return CensoringModel(u, dl, surv, y)


def survival_at(model: CensoringModel, s, left: bool = False):
    out = model.survival_at(s, left=left)
    return float(out) if np.ndim(out) == 0 else out


def _check_floor(values: np.ndarray, floor: float | None, model: CensoringModel, what: str):
    if floor is None or floor <= 0 or values.size == 0:
        return
    lo = float(np.min(values))
    if lo < floor:
        raise PositivityError(
            f"censoring survival {lo:.4g} below positivity floor {floor} in {what}; "
            f"truncate follow-up at tau={choose_tau(model, floor=floor):.6g} or lower the floor",
            value=lo, tau_hint=choose_tau(model, floor=floor))


def ipcw_weights(model: CensoringModel, time, delta, t_star=np.inf,
                 floor: float | None = DEFAULT_FLOOR) -> np.ndarray:
    """Vectorised ``Delta(t*) / Ghat(T(t*)-)``.

    ``Delta(t*) = 1`` iff the event was observed or follow-up reached
    ``t*``; rows censored before ``t*`` get weight 0.
    """
    time = np.asarray(time, dtype=float)
    delta = np.asarray(delta)
    d_star = (delta == 1) | (time >= t_star)
    g = model.survival_at(np.minimum(time, t_star), left=True)
    _check_floor(g[d_star], floor, model, f"IPCW weights at t*={t_star}")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d_star, 1.0 / g, 0.0)


def ipcw_weight(model: CensoringModel, obs: Observation, t_star=np.inf,
                floor: float | None = DEFAULT_FLOOR) -> float:
    return float(ipcw_weights(model, [obs.time], [obs.delta], t_star, floor)[0])


def choose_tau(model: CensoringModel, data: Dataset | None = None,
               floor: float = DEFAULT_FLOOR) -> float:
    """Largest horizon ``tau`` with ``Ghat(min(T_i, tau)-) >= floor`` for all i.

    This is the first censoring jump at which ``Ghat`` drops below the
    floor, or ``inf`` if it never does. ``data`` is accepted for interface
    symmetry; the marginal estimate does not need it.
    """
    if not 0 < floor <= 1:
        raise ValueError("floor must lie in (0, 1]")
    below = np.flatnonzero(model.survival < floor)
    if below.size == 0:
        return float("inf")
    return float(model.jump_times[below[0]])


@dataclass(frozen=True)
class MartingaleTerms:
    """Masses of ``dM_G(u) / G(u)`` for one observation.

    ``times[k]`` are censoring jump times up to the follow-up time and
    ``weights[k]`` the corresponding mass; an integral of ``h`` is
    ``sum(h(times) * weights)``.
    """

    times: np.ndarray
    weights: np.ndarray


def martingale_terms(model: CensoringModel, obs: Observation) -> MartingaleTerms:
    T, D = obs.time, obs.delta
    before = model.jump_times < T
    u = model.jump_times[before]
    with np.errstate(divide="ignore"):
        w = -model.hazard_increments[before] / model.survival[before]
    if D == 0:
        u = np.append(u, T)
        w = np.append(w, 1.0 / model.survival_at(T, left=True))
    return MartingaleTerms(u, w)


def martingale_integral(model: CensoringModel, obs: Observation,
                        h: Callable[[np.ndarray], np.ndarray],
                        floor: float | None = None) -> float:
    """``int_0^T h(u) / G(u) dM_G(u)`` for one observation.

    ``h`` is called once with the array of censoring-jump times at or before
    the follow-up time.
    """
    terms = martingale_terms(model, obs)
    if floor is not None:
        dens = model.survival[model.jump_times < obs.time]
        if obs.delta == 0:
            dens = np.append(dens, model.survival_at(obs.time, left=True))
        _check_floor(dens, floor, model, "martingale integral")
    if terms.times.size == 0:
        return 0.0
    return float(np.sum(np.asarray(h(terms.times), dtype=float) * terms.weights))
