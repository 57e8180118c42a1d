"""Brute-force reference implementations used to check the fast paths.

Nothing here touches :mod:`ciftree.losses` or :mod:`ciftree.tree`: the
censoring survival is rebuilt from the hazard increments by explicit
products, conditional CIFs are formed from raw model evaluations, and every
loss is summed observation by observation. The code favours transparency
over speed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .censoring import CensoringModel
from .cif_models import CifModel
from .data import Dataset, TimeGrid

__all__ = [
    "OracleReport",
    "ObservationLoss",
    "observation_loss_table",
    "naive_loss",
    "naive_node_loss",
    "exhaustive_best_split",
    "exhaustive_grow",
    "tree_signature",
    "augmented_forms_check",
    "normalisation_sum",
    "tail_martingale_integral",
    "km_table",
]


@dataclass(frozen=True)
class OracleReport:
    name: str
    fast: float
    oracle: float

    @property
    def abs_dev(self) -> float:
        return abs(self.fast - self.oracle)

    @property
    def rel_dev(self) -> float:
        return self.abs_dev / max(abs(self.oracle), 1e-300)


# censoring survival, rebuilt literally ------------------------------------------------

def _g_left(cens: CensoringModel, s: float) -> float:
    """``prod_{u_k < s} (1 - dLambda_k)``."""
    g = 1.0
    for u, dl in zip(cens.jump_times, cens.hazard_increments):
        if u < s:
            g *= 1.0 - dl
    return g


def _g_right(cens: CensoringModel, s: float) -> float:
    """``prod_{u_k <= s} (1 - dLambda_k)``."""
    g = 1.0
    for u, dl in zip(cens.jump_times, cens.hazard_increments):
        if u <= s:
            g *= 1.0 - dl
    return g


def km_table(time, delta):
    """Product-limit table for the censoring distribution, one row per jump.

    Returns a list of ``(u, at_risk, n_censored, G(u))`` built with explicit
    counting loops (events at ``u`` leave the risk set before censorings).
    """
    rows, g = [], 1.0
    for u in sorted(set(float(t) for t, d in zip(time, delta) if d == 0)):
        at_risk = sum(1 for t, d in zip(time, delta) if t > u or (t == u and d == 0))
        d_u = sum(1 for t, d in zip(time, delta) if t == u and d == 0)
        g *= 1.0 - d_u / at_risk
        rows.append((u, at_risk, d_u, g))
    return rows


def _tau(cens: CensoringModel, floor: float | None) -> float:
    if not floor:
        return np.inf
    for u in cens.jump_times:
        if _g_right(cens, u) < floor:
            return float(u)
    return np.inf


def _y(psi: CifModel, w, u: np.ndarray, t: float, m: int) -> np.ndarray:
    """Conditional cause-m probability on ``[u, t]`` given ``T >= u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size == 0:
        return u
    W = np.asarray(w, dtype=float)[None, :]
    num = psi.cif(np.array([t]), m, W)[0, 0] - psi.cif(u, m, W, left=True)[0]
    surv = 1.0 - sum(psi.cif(u, k, W, left=True)[0] for k in range(1, psi.n_causes + 1))
    out = np.zeros(u.size)
    for k in range(u.size):
        if u[k] <= t and surv[k] > 0:
            out[k] = min(max(num[k] / surv[k], 0.0), 1.0)
    return out


# per-observation losses ------------------------------------------------------------

@dataclass(frozen=True)
class ObservationLoss:
    """Loss of one observation at one grid time as an explicit function of beta.

    ``point * (z - beta)**2 + sum_k mass_k * V(y_k, beta)`` where
    ``V(y, beta) = y (1 - beta)**2 + (1 - y) beta**2`` is the conditional
    expected squared error of a Bernoulli(y) response.
    """

    z: float
    point: float
    masses: np.ndarray
    ys: np.ndarray

    def __call__(self, beta: float) -> float:
        v = self.ys * (1.0 - beta) ** 2 + (1.0 - self.ys) * beta ** 2
        return self.point * (self.z - beta) ** 2 + float(np.sum(self.masses * v))


def _mart_masses(cens: CensoringModel, end: float, censored_at_end: bool):
    """Masses of dM_G / G on jumps before ``end`` plus a censoring atom at ``end``."""
    us, ms = [], []
    for u, dl in zip(cens.jump_times, cens.hazard_increments):
        if u < end:
            us.append(float(u))
            ms.append(-dl / _g_right(cens, u))
    if censored_at_end:
        us.append(float(end))
        ms.append(1.0 / _g_left(cens, end))
    return np.array(us), np.array(ms)


def observation_loss_table(data: Dataset, cens: CensoringModel | None, psi: CifModel | None,
                           kind: str, grid: TimeGrid, cause: int = 1,
                           dr_form: str = "truncated", floor: float | None = 0.05):
    """``table[i][j]``: the :class:`ObservationLoss` of row ``i`` at ``t_j``."""
    kind = str(getattr(kind, "value", kind))
    tau = _tau(cens, floor) if kind == "ipcw1" else None
    table = []
    for i in range(data.n):
        T, D, M, w = float(data.time[i]), int(data.delta[i]), int(data.cause[i]), data.X[i]
        row = []
        for t in grid.times:
            z = 1.0 if (T <= t and M == cause) else 0.0
            none = np.empty(0)
            if kind == "full":
                row.append(ObservationLoss(z, 1.0, none, none))
            elif kind in ("ipcw1", "ipcw2"):
                ts = tau if kind == "ipcw1" else t
                seen = D == 1 or T >= ts
                wgt = 1.0 / _g_left(cens, min(T, ts)) if seen else 0.0
                row.append(ObservationLoss(z, wgt, none, none))
            elif kind == "bj":
                if D == 1:
                    row.append(ObservationLoss(z, 1.0, none, none))
                else:
                    row.append(ObservationLoss(z, 0.0, np.array([1.0]), _y(psi, w, [T], t, cause)))
            elif kind == "dr":
                if dr_form == "truncated":
                    end, seen = min(T, t), (D == 1 or T >= t)
                else:
                    end, seen = T, D == 1
                us, ms = _mart_masses(cens, end, not seen)
                point = 1.0 / _g_left(cens, end) if seen else 0.0
                row.append(ObservationLoss(z, point, ms, _y(psi, w, us, t, cause)))
            else:
                raise ValueError(f"unknown loss kind {kind!r}")
        table.append(row)
    return table


def naive_loss(data: Dataset, cens, psi, partition, betas, kind, grid: TimeGrid,
               cause: int = 1, dr_form: str = "truncated", floor: float | None = 0.05,
               table=None) -> float:
    """Total composite loss of a partition by direct double summation.

    ``partition[i]`` is the node label of row ``i`` and ``betas[label]`` the
    node's per-time values.
    """
    table = table or observation_loss_table(data, cens, psi, kind, grid, cause, dr_form, floor)
    total = 0.0
    for i in range(data.n):
        b = np.broadcast_to(np.asarray(betas[partition[i]], dtype=float), (grid.J,))
        for j in range(grid.J):
            total += grid.weights[j] * table[i][j](float(b[j]))
    return total


def naive_node_loss(table, members, betas, grid: TimeGrid) -> float:
    b = np.broadcast_to(np.asarray(betas, dtype=float), (grid.J,))
    return float(sum(grid.weights[j] * table[i][j](float(b[j]))
                     for i in members for j in range(grid.J)))


# exhaustive split search -------------------------------------------------------------

def _probe(table, grid: TimeGrid) -> np.ndarray:
    """Losses at beta = -1, 0, 1; shape ``(n, J, 3)``."""
    return np.array([[[table[i][j](b) for b in (-1.0, 0.0, 1.0)] for j in range(grid.J)]
                     for i in range(len(table))])


def _best_node_loss(probe: np.ndarray, members, weights) -> float:
    """Minimum over beta of a node's loss, recovered from three probes.

    Each per-time loss is quadratic in beta, so ``q(-1), q(0), q(1)``
    determine it: curvature ``c = (q(1) + q(-1) - 2 q(0)) / 2`` and slope
    ``s = (q(1) - q(-1)) / 2``, minimum ``q(0) - s**2 / (4 c)``.
    """
    total = 0.0
    for j, wj in enumerate(weights):
        qm = sum(probe[i, j, 0] for i in members)
        q0 = sum(probe[i, j, 1] for i in members)
        qp = sum(probe[i, j, 2] for i in members)
        c = (qp + qm - 2.0 * q0) / 2.0
        s = (qp - qm) / 2.0
        total += wj * (q0 - s * s / (4.0 * c) if c > 1e-14 else q0)
    return total


def exhaustive_best_split(data: Dataset, table, grid: TimeGrid, members=None,
                          minbucket: int = 1, counts=None):
    """Try every covariate and midpoint, recomputing child losses from scratch.

    Returns ``(covariate, cutpoint, gain)`` or ``None`` when no admissible
    cut exists. Ties within ``1e-10`` go to the lowest covariate, then the
    smallest cutpoint.
    """
    members = list(range(data.n)) if members is None else [int(i) for i in members]
    counts = np.ones(data.n) if counts is None else np.asarray(counts, dtype=float)
    probe = _probe(table, grid) if not isinstance(table, np.ndarray) else table
    parent = _best_node_loss(probe, members, grid.weights)
    cands = []
    for k in range(data.p):
        vals = sorted(set(float(data.X[i, k]) for i in members))
        for a, b in zip(vals[:-1], vals[1:]):
            cut = 0.5 * (a + b)
            left = [i for i in members if data.X[i, k] <= cut]
            right = [i for i in members if data.X[i, k] > cut]
            if sum(counts[left]) < minbucket or sum(counts[right]) < minbucket:
                continue
            gain = (parent - _best_node_loss(probe, left, grid.weights)
                    - _best_node_loss(probe, right, grid.weights))
            cands.append((k, cut, gain))
    if not cands:
        return None
    top = max(g for _, _, g in cands)
    tol = 1e-10 * max(1.0, abs(top))
    return min((c for c in cands if c[2] >= top - tol), key=lambda c: (c[0], c[1]))


def exhaustive_grow(data: Dataset, table, grid: TimeGrid, minbucket: int = 1,
                    minsplit: int = 2, max_depth: int = 30, counts=None):
    """Greedy tree built with :func:`exhaustive_best_split`.

    Returns a nested tuple ``(n_members, None)`` for leaves and
    ``(n_members, (covariate, cutpoint), left, right)`` for splits.
    """
    counts = np.ones(data.n) if counts is None else np.asarray(counts, dtype=float)
    probe = _probe(table, grid)

    def build(members, depth):
        node_loss = _best_node_loss(probe, members, grid.weights)
        if sum(counts[members]) < minsplit or depth >= max_depth:
            return (len(members), None)
        found = exhaustive_best_split(data, probe, grid, members, minbucket, counts)
        if found is None or found[2] <= 1e-10 * max(1.0, abs(node_loss)):
            return (len(members), None)
        k, cut, _ = found
        left = [i for i in members if data.X[i, k] <= cut]
        right = [i for i in members if data.X[i, k] > cut]
        return (len(members), (k, cut), build(left, depth + 1), build(right, depth + 1))

    return build(list(range(data.n)), 0)


def tree_signature(node):
    """Nested-tuple signature of a fitted tree, comparable with :func:`exhaustive_grow`."""
    if node.is_leaf:
        return (node.n_members, None)
    return (node.n_members, (node.split[0], node.split[1]), tree_signature(node.left),
            tree_signature(node.right))


# identities ----------------------------------------------------------------------------

def normalisation_sum(cens: CensoringModel, time: float, delta: int) -> float:
    """Point mass plus martingale integral of the constant 1 (should be 1)."""
    _, ms = _mart_masses(cens, time, delta == 0)
    return (1.0 / _g_left(cens, time) if delta == 1 else 0.0) + float(np.sum(ms))


def tail_martingale_integral(cens: CensoringModel, time: float, delta: int, t: float) -> tuple[float, float]:
    """``int_t^T dM_G / G`` by direct summation and by its closed form."""
    if time < t:
        return 0.0, 0.0
    direct = 0.0
    for u, dl in zip(cens.jump_times, cens.hazard_increments):
        if t <= u < time:
            direct -= dl / _g_right(cens, u)
    if delta == 0:
        direct += 1.0 / _g_left(cens, time)
    closed = 1.0 / _g_left(cens, t) - (delta / _g_left(cens, time))
    return direct, closed


@dataclass(frozen=True)
class AugmentedFormsResult:
    omega: np.ndarray          # closed-form Omega_i
    difference: np.ndarray     # full-form minus truncated-form loss per observation
    a_term: np.ndarray         # (A)_i
    b_term: np.ndarray         # (B)_i by direct summation
    tail_dev: np.ndarray         # |direct - closed form| of the identity for int dM/G

    def report(self) -> list[OracleReport]:
        return [
            OracleReport("max |Omega_i|", float(np.max(np.abs(self.omega))), 0.0),
            OracleReport("max |L_full_i - L_trunc_i|", float(np.max(np.abs(self.difference))), 0.0),
            OracleReport("max |(A)_i + (B)_i - diff_i|",
                         float(np.max(np.abs(self.a_term + self.b_term - self.difference))), 0.0),
            OracleReport("max tail-identity deviation", float(np.max(self.tail_dev)), 0.0),
        ]


def augmented_forms_check(data: Dataset, cens: CensoringModel, psi: CifModel, t: float, betas,
                      cause: int = 1) -> AugmentedFormsResult:
    """Per-observation comparison of the two augmented losses at one time ``t``.

    ``betas`` gives each row's node value (scalar or length ``n``). The loss
    built by augmenting the IPCW loss with horizon infinity differs from the
    one built on follow-up truncated at ``t`` by ``(A)_i + (B)_i``, where
    ``(A)_i`` is the difference of the IPCW parts and ``(B)_i`` the
    martingale integral over ``(T(t), T]``; the closed form ``Omega_i`` of
    that sum vanishes identically.
    """
    times = np.concatenate([data.time, [t]])
    if np.unique(times).size != times.size:
        raise ValueError("tied times (or a time equal to t) violate the continuity assumption")
    grid = TimeGrid([t])
    full = observation_loss_table(data, cens, psi, "dr", grid, cause, "full")
    trunc = observation_loss_table(data, cens, psi, "dr", grid, cause, "truncated")
    b = np.broadcast_to(np.asarray(betas, dtype=float), (data.n,))
    n = data.n
    omega, diff, A, B, tail = (np.zeros(n) for _ in range(5))
    for i in range(n):
        T, D, M = float(data.time[i]), int(data.delta[i]), int(data.cause[i])
        z = 1.0 if (T <= t and M == cause) else 0.0
        bi = float(b[i])
        diff[i] = full[i][0](bi) - trunc[i][0](bi)
        Tt = min(T, t)
        Dt = 1 if (D == 1 or T >= t) else 0
        A[i] = (D / _g_left(cens, T) - Dt / _g_left(cens, Tt)) * (z - bi) ** 2
        # direct martingale sum over (T(t), T] with V evaluated at each mass point
        us, ms = _mart_masses(cens, T, D == 0)
        keep = us >= Tt if T >= t else np.zeros(us.size, bool)
        ys = _y(psi, data.X[i], us[keep], t, cause)
        B[i] = float(np.sum(ms[keep] * (ys * (1 - bi) ** 2 + (1 - ys) * bi ** 2)))
        ind = 1.0 if T >= t else 0.0
        omega[i] = A[i] + ind * (1.0 / _g_left(cens, t) - D / _g_left(cens, T)) * bi ** 2
        direct, closed = tail_martingale_integral(cens, T, D, t)
        tail[i] = abs(direct - closed)
    return AugmentedFormsResult(omega, diff, A, B, tail)
