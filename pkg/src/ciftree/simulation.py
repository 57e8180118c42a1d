"""Fine-Gray simulation design, censoring calibration and performance metrics.

Covariates are ten independent ``U(0, 1)`` variables; only the subgroup
indicator ``Z = I(W1 <= 0.5, W2 > 0.5)`` affects the outcome, so the true
tree has three leaves (split on ``W1`` and ``W2`` at 0.5). Censoring is
exponential and independent of everything else.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

from .cif_models import PRESETS, FineGrayModel, FineGrayParams, _fg_cif, fg_z, fit_aalen_johansen
from .data import Dataset, TimeGrid
from .losses import LossKind
from .tree import FitConfig, TreeNode, fit_tree, predict

__all__ = [
    "SimDesign",
    "PerfReport",
    "Method",
    "sample_full",
    "sample_cause1_time",
    "apply_censoring",
    "censoring_rate",
    "calibrate_gamma",
    "true_quantiles",
    "marginal_cdf",
    "evaluate",
    "prediction_error",
    "run_replication",
    "run_experiment",
    "METHODS",
    "P_Z1",
]

P_Z1 = 0.25  # P(W1 <= 0.5) * P(W2 > 0.5)
TRUE_SPLIT_COVARIATES = frozenset({0, 1})


@dataclass(frozen=True)
class SimDesign:
    fg: FineGrayParams = PRESETS["high"]
    n: int = 500
    p_cov: int = 10
    censor_rate_target: float = 0.5
    gamma: float | None = None
    n_test: int = 2000
    n_reps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.n_test < 1 or self.n_reps < 1:
            raise ValueError("n, n_test and n_reps must be positive")
        if self.p_cov < 2:
            raise ValueError("the design needs at least the two signal covariates")
        if not 0 <= self.censor_rate_target < 1:
            raise ValueError("censor_rate_target must lie in [0, 1)")

    @classmethod
    def preset(cls, name: str, **kw) -> "SimDesign":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(fg=PRESETS[name], **kw)

    def resolved_gamma(self) -> float:
        return calibrate_gamma(self) if self.gamma is None else float(self.gamma)


# sampling -----------------------------------------------------------------------

def _psi1_inf(params: FineGrayParams, eta):
    return -np.expm1(eta * math.log1p(-params.p))


def sample_cause1_time(params: FineGrayParams, z, u):
    """Invert the cause-1 conditional CDF ``psi_1(t) / psi_1(inf)`` at ``u``."""
    eta = np.exp(params.beta1 * np.asarray(z, dtype=float))
    target = np.asarray(u, dtype=float) * _psi1_inf(params, eta)
    x = -np.expm1(np.log1p(-target) / eta) / params.p
    return -np.log1p(-x)


def sample_full(design: SimDesign, rng: np.random.Generator, n: int | None = None) -> Dataset:
    """Draw uncensored ``(T, M, W)`` from the design (``delta`` is all ones)."""
    n = design.n if n is None else n
    prm = design.fg
    W = rng.random((n, design.p_cov))
    z = fg_z(W)
    eta = np.exp(prm.beta1 * z)
    cause1 = rng.random(n) < _psi1_inf(prm, eta)
    u = rng.random(n)
    t1 = sample_cause1_time(prm, z, u)
    t2 = -np.log(u) / np.exp(prm.beta2 * z)
    # u is in [0, 1); u = 0 is a probability-zero event that would give t = 0
    T = np.where(cause1, t1, t2)
    T = np.where(T > 0, T, np.finfo(float).tiny)
    M = np.where(cause1, 1, 2)
    return Dataset(T, np.ones(n, dtype=np.int64), M, W, 2)


def apply_censoring(full: Dataset, gamma: float, rng: np.random.Generator) -> Dataset:
    """Censor with independent ``C ~ Exp(gamma)``; ``gamma = 0`` means no censoring."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    C = rng.exponential(1.0 / gamma, full.n) if gamma > 0 else np.full(full.n, np.inf)
    event = full.time <= C
    return Dataset(np.where(event, full.time, C), event.astype(np.int64),
                   np.where(event, full.cause, 0), full.X, full.n_causes, full.covariate_names)


# exact marginal quantities --------------------------------------------------------

def _surv_given_z(params: FineGrayParams, t, z):
    return 1.0 - _fg_cif(params, t, 1, z) - _fg_cif(params, t, 2, z)


def marginal_cdf(params: FineGrayParams, t):
    """``P(T <= t)`` averaging over the distribution of ``Z``."""
    return 1.0 - ((1 - P_Z1) * _surv_given_z(params, t, 0.0)
                  + P_Z1 * _surv_given_z(params, t, 1.0))


def censoring_rate(params: FineGrayParams, gamma: float) -> float:
    """Exact ``P(C < T)`` for ``C ~ Exp(gamma)``: ``int gamma e^{-gamma c} P(T > c) dc``."""
    if gamma <= 0:
        return 0.0
    f = lambda c: gamma * math.exp(-gamma * c) * (1.0 - float(marginal_cdf(params, c)))  # noqa: E731
    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200)
    return val


def calibrate_gamma(design: SimDesign, tol: float = 1e-8) -> float:
    """Censoring rate ``gamma`` giving ``P(C < T)`` equal to the design target.

    The censoring probability is a smooth increasing function of ``gamma``
    computed by quadrature, so a bracketing root finder replaces Monte Carlo
    bisection. A zero target returns the boundary value 0.
    """
    target = design.censor_rate_target
    if target <= 0:
        return 0.0
    lo, hi = 1e-8, 1.0
    for _ in range(60):
        if censoring_rate(design.fg, hi) > target:
            break
        hi *= 2.0
    else:
        raise RuntimeError("could not bracket the censoring rate target")
    return float(optimize.brentq(lambda g: censoring_rate(design.fg, g) - target, lo, hi,
                                 xtol=tol, rtol=1e-12))


@lru_cache(maxsize=64)
def _quantiles_cached(beta1, beta2, p, probs):
    prm = FineGrayParams(beta1, beta2, p)
    out = []
    for q in probs:
        hi = 1.0
        while float(marginal_cdf(prm, hi)) < q:
            hi *= 2.0
        out.append(optimize.brentq(lambda t: float(marginal_cdf(prm, t)) - q, 0.0, hi,
                                   xtol=1e-14, rtol=1e-14))
    return tuple(out)


def true_quantiles(params: FineGrayParams, probs=(0.25, 0.5, 0.75)) -> np.ndarray:
    """Quantiles of the marginal event-time distribution (cached per design)."""
    probs = tuple(float(q) for q in probs)
    if any(not 0 < q < 1 for q in probs):
        raise ValueError("quantile levels must lie in (0, 1)")
    return np.array(_quantiles_cached(params.beta1, params.beta2, params.p, probs))


# performance ----------------------------------------------------------------------

@dataclass(frozen=True)
class PerfReport:
    pred_error: np.ndarray
    n_leaves: int
    size_dev: int
    nsp: int
    pcsp: int
    split_covariates: tuple[int, ...] = ()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["pred_error"] = [float(v) for v in self.pred_error]
        d["split_covariates"] = list(self.split_covariates)
        return d


def prediction_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mean squared difference per grid time, rows averaged."""
    return np.mean((np.asarray(pred) - np.asarray(truth)) ** 2, axis=0)


def evaluate(tree: TreeNode, params: FineGrayParams, W_test, grid: TimeGrid,
             true_leaves: int = 3) -> PerfReport:
    """Prediction error against the true cause-1 CIF plus structure metrics.

    NSP counts splits on any covariate other than ``W1``/``W2``; PCSP is 1
    when the tree has ``true_leaves`` leaves and splits on exactly ``W1``
    and ``W2`` (split points may differ from 0.5).
    """
    W_test = np.asarray(W_test, dtype=float)
    truth = _fg_cif(params, grid.times[None, :], 1, fg_z(W_test)[:, None])
    pe = prediction_error(predict(tree, W_test), truth)
    covs = tree.split_covariates()
    L = tree.n_leaves
    nsp = sum(1 for k in covs if k not in TRUE_SPLIT_COVARIATES)
    pcsp = int(L == true_leaves and set(covs) == TRUE_SPLIT_COVARIATES)
    return PerfReport(pe, L, abs(L - true_leaves), nsp, pcsp, tuple(covs))


# methods and experiment loop ------------------------------------------------------

@dataclass(frozen=True)
class Method:
    """A loss family together with the source of the CIF working model."""

    name: str
    loss: LossKind
    psi: str | None = None  # "fg" (true model), "aj" or None

    @classmethod
    def parse(cls, name: str) -> "Method":
        name = name.strip().lower()
        if name in METHODS:
            return METHODS[name]
        raise ValueError(f"unknown method {name!r}; choose from {sorted(METHODS)}")


METHODS = {
    "full": Method("full", LossKind.FULL),
    "ipcw1": Method("ipcw1", LossKind.IPCW1),
    "ipcw2": Method("ipcw2", LossKind.IPCW2),
    "bj-fg": Method("bj-fg", LossKind.BJ, "fg"),
    "dr-fg": Method("dr-fg", LossKind.DR, "fg"),
    "bj-aj": Method("bj-aj", LossKind.BJ, "aj"),
    "dr-aj": Method("dr-aj", LossKind.DR, "aj"),
}


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep]))


def run_replication(design: SimDesign, methods, rep: int, gamma: float, grid: TimeGrid,
                    base: FitConfig | None = None) -> dict:
    """One simulated training/test pair, every method fitted on the same data.

    Returns ``{method name: PerfReport dict or {"error": message}}``.
    """
    rng = _rep_rng(design.seed, rep)
    full = sample_full(design, rng)
    data = apply_censoring(full, gamma, rng)
    W_test = rng.random((design.n_test, design.p_cov))
    base = base or FitConfig()
    out = {}
    for m in methods:
        m = Method.parse(m) if isinstance(m, str) else m
        psi = None
        if m.psi == "fg":
            psi = FineGrayModel(design.fg)
        elif m.psi == "aj":
            psi = fit_aalen_johansen(data)
        fit_data = full if m.loss is LossKind.FULL else data
        cfg = FitConfig(**{**_config_fields(base), "loss": m.loss, "grid": grid,
                           "seed": design.seed * 100003 + rep})
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = fit_tree(fit_data, cfg, psi=psi)
            out[m.name] = evaluate(res.tree, design.fg, W_test, grid).as_dict()
        except (ArithmeticError, ValueError) as exc:
            out[m.name] = {"error": f"{type(exc).__name__}: {exc}"}
    return out


def _config_fields(cfg: FitConfig) -> dict:
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


@dataclass
class ExperimentResult:
    records: list = field(default_factory=list)  # (setting, rep, method, report-dict)
    grids: dict = field(default_factory=dict)
    gammas: dict = field(default_factory=dict)

    def reports(self, setting: str, method: str) -> list[dict]:
        return [r for s, _, m, r in self.records if s == setting and m == method
                and "error" not in r]

    def failures(self, setting: str, method: str) -> int:
        return sum(1 for s, _, m, r in self.records if s == setting and m == method
                   and "error" in r)

    def summary(self, setting: str, method: str) -> dict:
        reps = self.reports(setting, method)
        if not reps:
            return {"reps_ok": 0, "reps_failed": self.failures(setting, method)}
        pe = np.array([r["pred_error"] for r in reps])
        return {
            "reps_ok": len(reps),
            "reps_failed": self.failures(setting, method),
            "size_dev": float(np.mean([r["size_dev"] for r in reps])),
            "nsp": float(np.mean([r["nsp"] for r in reps])),
            "pcsp": float(np.mean([r["pcsp"] for r in reps])),
            "mean_leaves": float(np.mean([r["n_leaves"] for r in reps])),
            "pred_error_mean": pe.mean(axis=0).tolist(),
            "pred_error_median": np.median(pe, axis=0).tolist(),
        }


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def run_experiment(designs: dict, methods, base: FitConfig | None = None,
                   out_dir=None, quantiles=(0.25, 0.5, 0.75), header: tuple = (),
                   workers: int | None = None, progress=None) -> ExperimentResult:
    """Replicate every method on every design.

    Parameters
    ----------
    designs : mapping from setting label to :class:`SimDesign`.
    methods : method names (see ``METHODS``) or :class:`Method` objects.
    out_dir : when given, per-replication results are stored under
        ``out_dir/reps`` (finished replications are reused on rerun) and
        ``table1.csv`` / ``prederr.csv`` are written.
    workers : process count; defaults to ``CIFTREE_THREADS`` or 1.
    """
    methods = [Method.parse(m) if isinstance(m, str) else m for m in methods]
    result = ExperimentResult()
    workers = workers or int(os.environ.get("CIFTREE_THREADS", "1") or 1)
    rep_dir = None
    if out_dir is not None:
        rep_dir = Path(out_dir) / "reps"
        rep_dir.mkdir(parents=True, exist_ok=True)
    for setting, design in designs.items():
        gamma = design.resolved_gamma()
        grid = TimeGrid(true_quantiles(design.fg, quantiles))
        result.gammas[setting] = gamma
        result.grids[setting] = grid
        todo, done = [], {}
        for rep in range(design.n_reps):
            f = rep_dir / f"{setting}-{rep:04d}.json" if rep_dir else None
            if f is not None and f.exists():
                stored = json.loads(f.read_text())
                if all(m.name in stored for m in methods):
                    done[rep] = stored
                    continue
            todo.append(rep)
        args = [(design, methods, rep, gamma, grid, base) for rep in todo]
        if workers > 1 and len(args) > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(workers) as ex:
                outs = list(ex.map(_run_rep_star, args))
        else:
            outs = [_run_rep_star(a) for a in args]
        for rep, out in zip(todo, outs):
            done[rep] = out
            if rep_dir is not None:
                (rep_dir / f"{setting}-{rep:04d}.json").write_text(
                    json.dumps(out, sort_keys=True) + "\n")
            if progress:
                progress(setting, rep)
        for rep in sorted(done):
            for m in methods:
                result.records.append((setting, rep, m.name, done[rep][m.name]))
    if out_dir is not None:
        write_tables(result, [m.name for m in methods], Path(out_dir), header)
    return result


def _run_rep_star(args):
    return run_replication(*args)


def write_tables(result: ExperimentResult, methods, out_dir: Path, header=()) -> None:
    settings = list(result.grids)
    J = max(g.J for g in result.grids.values())
    cols = (["setting", "method", "reps_ok", "reps_failed", "gamma", "size_dev", "nsp",
             "pcsp", "mean_leaves"] + [f"pred_error_mean_t{j + 1}" for j in range(J)]
            + [f"pred_error_median_t{j + 1}" for j in range(J)])
    with open(out_dir / "table1.csv", "w", newline="") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for s in settings:
            for m in methods:
                summ = result.summary(s, m)
                row = [s, m, summ["reps_ok"], summ["reps_failed"], _fmt(result.gammas[s])]
                if summ["reps_ok"]:
                    row += [_fmt(summ[k]) for k in ("size_dev", "nsp", "pcsp", "mean_leaves")]
                    row += [_fmt(v) for v in summ["pred_error_mean"]]
                    row += [_fmt(v) for v in summ["pred_error_median"]]
                else:
                    row += [""] * (4 + 2 * J)
                w.writerow(row)
    with open(out_dir / "prederr.csv", "w", newline="") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "setting", "t_index", "t", "rep", "value"])
        for s, rep, m, r in result.records:
            if "error" in r:
                continue
            for j, v in enumerate(r["pred_error"]):
                w.writerow([m, s, j + 1, _fmt(result.grids[s].times[j]), rep, _fmt(v)])
