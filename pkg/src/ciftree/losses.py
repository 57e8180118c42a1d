"""Brier-type losses for CIF regression trees under censoring.

Every loss handled here is, for a fixed grid time ``t_j`` and node value
``beta``, a sum over node members of per-observation quadratics::

    a_ij - 2 b_ij beta + c_ij beta**2

so a node is summarised by ``(sum a, sum b, sum c)``; its minimiser is
``sum b / sum c`` and its minimal loss ``sum a - (sum b)**2 / sum c``.
The coefficients are:

======  ==========================  ==========================  ====================
kind    a                           b                           c
======  ==========================  ==========================  ====================
full    Z                           Z                           1
ipcw1   w(tau) Z                    w(tau) Z                    w(tau)
ipcw2   w(t_j) Z                    w(t_j) Z                    w(t_j)
bj      D Z + (1 - D) y(T)          same as a                   1
dr      TS1_point + TS1_mart        same as a                   TS0_point + TS0_mart
======  ==========================  ==========================  ====================

where ``Z = I(T <= t_j, M = m)`` on observed data, ``w(s)`` is the IPCW
weight with horizon ``s``, ``y`` the conditional CIF of the working model
and the ``TS`` terms the point-mass and martingale parts of the augmented
estimator. ``TS0_point + TS0_mart`` equals one per observation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .censoring import (DEFAULT_FLOOR, CensoringModel, PositivityError, _check_floor,
                        choose_tau, fit_km, ipcw_weights)
from .cif_models import CifModel, y_m
from .data import Dataset, TimeGrid

__all__ = [
    "LossKind",
    "LossStats",
    "NodeEstimate",
    "precompute_stats",
    "node_estimate",
    "node_loss",
    "node_loss_at_minimum",
    "split_gain",
    "split_gains",
    "observation_losses",
]


class LossKind(str, Enum):
    FULL = "full"
    IPCW1 = "ipcw1"
    IPCW2 = "ipcw2"
    BJ = "bj"
    DR = "dr"

    @property
    def is_ipcw(self) -> bool:
        return self in (LossKind.IPCW1, LossKind.IPCW2)


@dataclass(eq=False)
class LossStats:
    """Per-observation terms for every loss, all arrays of shape ``(n, J)``.

    Kinds whose nuisance inputs were missing, or whose weights violated the
    positivity floor, are stored as ``None`` with the reason in ``errors``;
    asking for their coefficients re-raises.
    """

    grid: TimeGrid
    cause: int
    time: np.ndarray
    delta: np.ndarray
    z_tilde: np.ndarray
    tau: float = float("inf")
    ipcw1_weight: np.ndarray | None = None
    ipcw2_weight: np.ndarray | None = None
    ts0_point: np.ndarray | None = None
    ts0_mart: np.ndarray | None = None
    ts1_point: np.ndarray | None = None
    ts1_mart: np.ndarray | None = None
    bj_response: np.ndarray | None = None
    dr_form: str = "truncated"
    errors: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    def available(self, kind) -> bool:
        try:
            self.coefficients(kind)
        except (ValueError, PositivityError):
            return False
        return True

    def coefficients(self, kind) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        kind = LossKind(kind)
        if kind in self.errors:
            raise self.errors[kind]
        ones = np.ones_like(self.z_tilde)
        if kind is LossKind.FULL:
            return self.z_tilde, self.z_tilde, ones
        if kind is LossKind.BJ:
            if self.bj_response is None:
                raise ValueError("Buckley-James loss needs a CIF working model")
            return self.bj_response, self.bj_response, ones
        if kind is LossKind.DR:
            if self.ts1_point is None:
                raise ValueError("doubly robust loss needs a CIF working model")
            resp = self.ts1_point + self.ts1_mart
            return resp, resp, self.ts0_point + self.ts0_mart
        w = self.ipcw1_weight if kind is LossKind.IPCW1 else self.ipcw2_weight
        if w is None:
            raise ValueError(f"{kind.value} loss needs a censoring model")
        wz = w * self.z_tilde
        return wz, wz, w

    def subset(self, idx) -> "LossStats":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return LossStats(self.grid, self.cause, self.time[idx], self.delta[idx],
                         self.z_tilde[idx], self.tau, pick(self.ipcw1_weight),
                         pick(self.ipcw2_weight), pick(self.ts0_point), pick(self.ts0_mart),
                         pick(self.ts1_point), pick(self.ts1_mart), pick(self.bj_response),
                         self.dr_form, dict(self.errors))


def _augmentation_terms(data: Dataset, cens: CensoringModel, psi: CifModel, grid: TimeGrid,
                        cause: int, form: str, floor: float | None):
    """Point-mass and martingale parts of the augmented estimator.

    ``form="full"`` integrates to the follow-up time (standard IPCW
    augmented); ``form="truncated"`` works with follow-up truncated at each
    grid time, which gives the same per-observation loss but only needs the
    censoring survival up to ``t_J``.
    """
    T, D, W = data.time, data.delta, data.X
    n, J = data.n, grid.J
    u = cens.jump_times
    if form == "truncated":
        u = u[u < grid.times[-1]]
    elif form != "full":
        raise ValueError("dr_form must be 'truncated' or 'full'")
    K = u.size
    g_u = cens.survival[:K]
    dl_u = cens.hazard_increments[:K]
    out = {k: np.zeros((n, J)) for k in ("ts0_point", "ts0_mart", "ts1_point", "ts1_mart")}
    used_dens = []
    for j, t in enumerate(grid.times):
        if form == "truncated":
            Tt = np.minimum(T, t)
            Dt = (D == 1) | (T >= t)
        else:
            Tt, Dt = T, D == 1
        z = ((T <= t) & (data.cause == cause)).astype(float)
        g_end = cens.survival_at(Tt, left=True)
        active = u[None, :] < Tt[:, None]
        if K:
            used_dens.append(g_u[active.any(axis=0)])
        used_dens.append(g_end)
        with np.errstate(divide="ignore"):
            inv_end = 1.0 / g_end
            comp = np.where(active, -dl_u / g_u, 0.0) if K else np.zeros((n, 0))
        point = np.where(Dt, inv_end, 0.0)
        cpoint = np.where(Dt, 0.0, inv_end)
        out["ts0_point"][:, j] = point
        out["ts1_point"][:, j] = point * z
        out["ts0_mart"][:, j] = comp.sum(axis=1) + cpoint
        y_end = y_m(psi, Tt[:, None], t, cause, W)[:, 0]
        y_jump = y_m(psi, u, t, cause, W) if K else np.zeros((n, 0))
        out["ts1_mart"][:, j] = (comp * y_jump).sum(axis=1) + cpoint * y_end
    if floor:
        _check_floor(np.concatenate(used_dens), floor, cens, "augmentation terms")
    return out


def precompute_stats(data: Dataset, cens: CensoringModel | None = None,
                     psi: CifModel | None = None, grid: TimeGrid | None = None,
                     cause: int = 1, floor: float | None = DEFAULT_FLOOR,
                     dr_form: str = "truncated", kinds=None) -> LossStats:
    """Compute all per-observation loss terms in one pass.

    Parameters
    ----------
    cens : censoring model; Kaplan-Meier on ``data`` when omitted.
    psi : CIF working model; required for ``bj`` and ``dr``.
    floor : positivity floor for censoring-survival denominators; the
        ``ipcw1`` horizon ``tau`` is chosen so that it always holds.
        ``None`` disables both the check and the truncation.
    dr_form : ``"truncated"`` (default) or ``"full"``; see
        :func:`_augmentation_terms`.
    kinds : restrict computation to these loss kinds.
    """
    if grid is None:
        raise ValueError("a time grid is required")
    if not 1 <= cause <= data.n_causes:
        raise ValueError(f"cause {cause} outside 1..{data.n_causes}")
    kinds = {LossKind(k) for k in (kinds or LossKind)}
    cens = fit_km(data) if cens is None else cens
    T, D = data.time, data.delta
    z = ((T[:, None] <= grid.times[None, :]) & (data.cause[:, None] == cause)).astype(float)
    stats = LossStats(grid, cause, T, D, z, dr_form=dr_form)

    if LossKind.IPCW1 in kinds:
        tau = choose_tau(cens, floor=floor) if floor else float("inf")
        stats.tau = tau
        w = ipcw_weights(cens, T, D, tau, floor=floor)
        stats.ipcw1_weight = np.repeat(w[:, None], grid.J, axis=1)
    if LossKind.IPCW2 in kinds:
        try:
            stats.ipcw2_weight = np.column_stack(
                [ipcw_weights(cens, T, D, t, floor=floor) for t in grid.times])
        except PositivityError as exc:
            stats.errors[LossKind.IPCW2] = exc
    if psi is None:
        for k in (LossKind.BJ, LossKind.DR):
            if k in kinds:
                stats.errors[k] = ValueError(f"{k.value} loss needs a CIF working model")
        return stats
    if LossKind.BJ in kinds:
        y_obs = np.column_stack([y_m(psi, T[:, None], t, cause, data.X)[:, 0]
                                 for t in grid.times])
        stats.bj_response = np.where(D[:, None] == 1, z, y_obs)
    if LossKind.DR in kinds:
        try:
            for k, v in _augmentation_terms(data, cens, psi, grid, cause, dr_form, floor).items():
                setattr(stats, k, v)
        except PositivityError as exc:
            stats.errors[LossKind.DR] = exc
    return stats


@dataclass(frozen=True)
class NodeEstimate:
    """Node CIF estimates per grid time.

    ``beta`` holds raw minimisers (not clipped; ``nan`` where the node is
    inestimable, i.e. every member has zero IPCW weight at that time).
    """

    beta: np.ndarray
    n_members: int
    loss_contribution: np.ndarray
    estimable: np.ndarray

    @property
    def clipped(self) -> np.ndarray:
        return np.clip(np.nan_to_num(self.beta, nan=0.0), 0.0, 1.0)


def _sums(stats: LossStats, members, kind):
    a, b, c = stats.coefficients(kind)
    idx = np.arange(stats.n) if members is None else np.asarray(members)
    return a[idx].sum(axis=0), b[idx].sum(axis=0), c[idx].sum(axis=0), idx.size


def node_estimate(stats: LossStats, members, kind, form: str = "mean") -> NodeEstimate:
    """Minimiser of the node loss at each grid time.

    For ``bj``/``dr``/``full`` the default ``form="mean"`` returns the
    member average of the pseudo-response; ``form="ratio"`` divides by the
    summed quadratic coefficient instead (identical for ``dr`` whenever the
    point-mass and martingale normalisation terms sum to one).
    """
    kind = LossKind(kind)
    A, B, C, N = _sums(stats, members, kind)
    if N < 1:
        raise ValueError("node must have at least one member")
    if kind.is_ipcw or form == "ratio":
        estimable = C > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(estimable, B / np.where(estimable, C, 1.0), np.nan)
    else:
        estimable = np.ones_like(B, dtype=bool)
        beta = B / N
    bz = np.nan_to_num(beta, nan=0.0)
    contrib = A - 2.0 * B * bz + C * bz * bz
    return NodeEstimate(beta, N, contrib, estimable)


def node_loss(stats: LossStats, members, estimate, kind, grid: TimeGrid | None = None) -> float:
    """Grid-weighted node loss at node values ``estimate``.

    ``estimate`` is a :class:`NodeEstimate` or an array of per-time values;
    inestimable (``nan``) entries contribute their ``beta = 0`` value, which
    is zero for IPCW nodes with no weight.
    """
    grid = grid or stats.grid
    beta = estimate.beta if isinstance(estimate, NodeEstimate) else np.asarray(estimate, float)
    beta = np.nan_to_num(np.broadcast_to(beta, (grid.J,)), nan=0.0)
    A, B, C, _ = _sums(stats, members, kind)
    return float(np.dot(grid.weights, A - 2.0 * B * beta + C * beta * beta))


def node_loss_at_minimum(stats: LossStats, members, kind) -> float:
    A, B, C, _ = _sums(stats, members, kind)
    return float(np.dot(stats.grid.weights, A - _ratio_sq(B, C)))


def _ratio_sq(B, C):
    pos = C > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(pos, B * B / np.where(pos, C, 1.0), 0.0)


def observation_losses(stats: LossStats, kind, beta) -> np.ndarray:
    """Per-observation grid-weighted loss at per-row predictions ``beta``.

    ``beta`` has shape ``(n, J)``; returns shape ``(n,)``.
    """
    a, b, c = stats.coefficients(kind)
    beta = np.asarray(beta, dtype=float)
    return (a - 2.0 * b * beta + c * beta * beta) @ stats.grid.weights


def split_gains(stats: LossStats, members, x: np.ndarray, kind, counts=None,
                order=None):
    """Loss reduction for every cutpoint of one covariate within a node.

    Parameters
    ----------
    members : node member indices.
    x : covariate values for all observations (indexed by ``members``).
    counts : per-observation size weights for ``minbucket`` (defaults to 1).
    order : optional pre-sorted member indices (sorted by ``x``).

    Returns
    -------
    cutpoints, gains, left_counts, right_counts : arrays over candidate
        cuts, i.e. midpoints between consecutive distinct sorted values.
    """
    a, b, c = stats.coefficients(kind)
    members = np.asarray(members)
    if order is None:
        order = members[np.argsort(x[members], kind="stable")]
    xs = x[order]
    distinct = np.flatnonzero(xs[1:] > xs[:-1])
    if distinct.size == 0:
        e = np.empty(0)
        return e, e, e, e
    Bc = np.cumsum(b[order], axis=0)
    Cc = np.cumsum(c[order], axis=0)
    Bt, Ct = Bc[-1], Cc[-1]
    BL, CL = Bc[distinct], Cc[distinct]
    BR, CR = Bt - BL, Ct - CL
    w = stats.grid.weights
    gains = (_ratio_sq(BL, CL) + _ratio_sq(BR, CR)) @ w - float(_ratio_sq(Bt, Ct) @ w)
    cnt = np.ones(order.size) if counts is None else np.asarray(counts, float)[order]
    cc = np.cumsum(cnt)
    left = cc[distinct]
    right = cc[-1] - left
    cut = 0.5 * (xs[distinct] + xs[distinct + 1])
    return cut, gains, left, right


def split_gain(stats: LossStats, members, x: np.ndarray, cutpoint: float, kind) -> float:
    """Parent loss minus the summed child losses for the cut ``x <= cutpoint``."""
    members = np.asarray(members)
    left = members[x[members] <= cutpoint]
    right = members[x[members] > cutpoint]
    parent = node_loss_at_minimum(stats, members, kind)
    if left.size == 0 or right.size == 0:
        return 0.0
    return parent - node_loss_at_minimum(stats, left, kind) - node_loss_at_minimum(stats, right, kind)
