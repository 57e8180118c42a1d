"""Growing, pruning, cross-validating and applying CIF regression trees.

The engine works on precomputed :class:`~ciftree.losses.LossStats`, so any
loss family plugs in unchanged. Losses used for pruning are divided by the
number of training observations, which makes the cost-complexity penalty
``alpha`` comparable between the full-data tree and the fold trees.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .censoring import DEFAULT_FLOOR, CensoringModel, fit_km
from .cif_models import CifModel
from .data import Dataset, TimeGrid, split_folds
from .losses import (LossKind, LossStats, NodeEstimate, node_estimate, node_loss,
                     observation_losses, precompute_stats, split_gains)

__all__ = [
    "CountMode",
    "SelectRule",
    "FitConfig",
    "TreeNode",
    "PrunePath",
    "FitResult",
    "grow",
    "prune_path",
    "cross_validate",
    "select",
    "fit_tree",
    "predict",
    "leaves",
    "format_tree",
    "tree_to_dict",
    "tree_from_dict",
    "save_tree",
    "load_tree",
    "TREE_SCHEMA",
]

TREE_SCHEMA = "ciftree.tree/1"
MAX_DEPTH_CAP = 30


class CountMode(str, Enum):
    ALL_OBS = "all"
    UNCENSORED_ONLY = "uncensored"


class SelectRule(str, Enum):
    MIN = "min"
    ONE_SE = "1se"


@dataclass(frozen=True)
class FitConfig:
    """Settings for growing and selecting a tree.

    ``count_mode=None`` picks ``UNCENSORED_ONLY`` for the IPCW losses and
    ``ALL_OBS`` otherwise, so ``minbucket``/``minsplit`` count only
    observed events when the loss ignores censored rows.

    ``cp`` is an optional complexity threshold during growth: a split is
    kept only if it lowers the loss by at least ``cp`` times the root-node
    loss. The default 0 grows the maximal tree.
    """

    loss: LossKind = LossKind.DR
    grid: TimeGrid | None = None
    cause: int = 1
    minbucket: int = 10
    minsplit: int = 30
    max_depth: int = MAX_DEPTH_CAP
    Q: int = 10
    cv_repeats: int = 1
    seed: int = 0
    count_mode: CountMode | None = None
    alpha_eval: str = "geometric"
    rule: SelectRule = SelectRule.MIN
    refit_per_fold: bool = False
    floor: float | None = DEFAULT_FLOOR
    dr_form: str = "truncated"
    cp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "rule", SelectRule(self.rule))
        if self.count_mode is not None:
            object.__setattr__(self, "count_mode", CountMode(self.count_mode))
        if self.minbucket < 1:
            raise ValueError("minbucket must be at least 1")
        if self.minsplit < 2:
            raise ValueError("minsplit must be at least 2")
        if not 0 <= self.max_depth <= MAX_DEPTH_CAP:
            raise ValueError(f"max_depth must lie in 0..{MAX_DEPTH_CAP}")
        if self.Q < 2 or self.cv_repeats < 1:
            raise ValueError("need Q >= 2 folds and at least one CV repeat")
        if not 0 <= self.cp < 1:
            raise ValueError("cp must lie in [0, 1)")
        if self.alpha_eval not in ("geometric", "endpoint"):
            raise ValueError("alpha_eval must be 'geometric' or 'endpoint'")
        if self.minsplit < 2 * self.minbucket:
            warnings.warn("minsplit < 2*minbucket: some eligible nodes can never split",
                          stacklevel=3)

    @property
    def effective_count_mode(self) -> CountMode:
        if self.count_mode is not None:
            return self.count_mode
        return CountMode.UNCENSORED_ONLY if self.loss.is_ipcw else CountMode.ALL_OBS


@dataclass(frozen=True, eq=False)
class TreeNode:
    """One node of a fitted tree.

    ``loss`` is the node's unnormalised training loss at its own estimate;
    ``members`` (training row indices) is kept in memory only and is not
    serialised.
    """

    node_id: int
    depth: int
    estimate: NodeEstimate
    n_members: int
    n_eligible: float
    loss: float
    split: tuple[int, float] | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    members: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend((node.right, node.left))

    @property
    def n_leaves(self) -> int:
        return sum(1 for nd in self.iter_nodes() if nd.is_leaf)

    def split_covariates(self) -> list[int]:
        return [nd.split[0] for nd in self.iter_nodes() if not nd.is_leaf]

    def same_structure(self, other: "TreeNode", atol: float = 0.0) -> bool:
        """Same splits (covariate and cutpoint) and member counts."""
        if self.is_leaf != other.is_leaf or self.n_members != other.n_members:
            return False
        if self.is_leaf:
            return True
        if self.split[0] != other.split[0] or abs(self.split[1] - other.split[1]) > atol:
            return False
        return self.left.same_structure(other.left, atol) and self.right.same_structure(
            other.right, atol)


def leaves(tree: TreeNode) -> list[TreeNode]:
    return [nd for nd in tree.iter_nodes() if nd.is_leaf]


def format_tree(tree: TreeNode, names=None, digits: int = 3) -> str:
    """Indented text rendering, one line per node.

    Leaves show the clamped estimates at each grid time.
    """
    lines = []

    def name(k):
        return names[k] if names is not None else f"x{k + 1}"

    def walk(node, prefix, label):
        head = f"{prefix}{label}n={node.n_members}"
        if node.is_leaf:
            vals = ", ".join(f"{v:.{digits}f}" for v in node.estimate.clipped)
            lines.append(f"{head}  cif=[{vals}]")
            return
        lines.append(head)
        k, cut = node.split
        walk(node.left, prefix + "  ", f"{name(k)} <= {cut:.{digits}g}: ")
        walk(node.right, prefix + "  ", f"{name(k)} > {cut:.{digits}g}: ")

    walk(tree, "", "")
    return "\n".join(lines)


# growing -----------------------------------------------------------------------

def _counts(stats: LossStats, mode: CountMode) -> np.ndarray:
    if mode is CountMode.UNCENSORED_ONLY:
        return (stats.delta == 1).astype(float)
    return np.ones(stats.n)


def best_split(stats: LossStats, X: np.ndarray, members: np.ndarray, kind, counts,
               minbucket: int, orders=None, mask=None):
    """Best admissible ``(covariate, cutpoint, gain)`` for a node, or ``None``.

    Ties within ``1e-10`` (relative to the larger of 1 and the best gain) go
    to the lowest covariate index, then the smallest cutpoint.
    """
    best = []
    for k in range(X.shape[1]):
        order = None
        if orders is not None:
            order = orders[k][mask[orders[k]]]
        cut, gain, nl, nr = split_gains(stats, members, X[:, k], kind, counts, order)
        ok = (nl >= minbucket) & (nr >= minbucket)
        if not ok.any():
            continue
        best.append((k, cut[ok], gain[ok]))
    if not best:
        return None
    top = max(float(g.max()) for _, _, g in best)
    tol = 1e-10 * max(1.0, abs(top))
    for k, cut, gain in best:
        hit = np.flatnonzero(gain >= top - tol)
        if hit.size:
            return k, float(cut[hit[0]]), float(gain[hit[0]])
    return None  # pragma: no cover


def grow(data: Dataset, stats: LossStats, config: FitConfig) -> TreeNode:
    """Greedy depth-first growth of the maximal tree.

    A node is split when its eligible count reaches ``minsplit``, both
    children keep at least ``minbucket`` eligible observations, the depth
    cap is not reached, and the loss reduction exceeds a small tolerance.
    """
    kind = config.loss
    counts = _counts(stats, config.effective_count_mode)
    X = data.X
    orders = [np.argsort(X[:, k], kind="stable") for k in range(X.shape[1])]
    mask = np.zeros(stats.n, dtype=bool)
    next_id = [0]
    root = np.arange(stats.n)
    min_gain = config.cp * node_loss(stats, root, node_estimate(stats, root, kind), kind)

    def build(members: np.ndarray, depth: int) -> TreeNode:
        node_id = next_id[0]
        next_id[0] += 1
        est = node_estimate(stats, members, kind)
        loss = node_loss(stats, members, est, kind)
        n_elig = float(counts[members].sum())
        leaf = TreeNode(node_id, depth, est, members.size, n_elig, loss, members=members)
        if n_elig < config.minsplit or depth >= config.max_depth:
            return leaf
        mask[:] = False
        mask[members] = True
        found = best_split(stats, X, members, kind, counts, config.minbucket, orders, mask)
        if found is None:
            return leaf
        k, cut, gain = found
        if gain <= 1e-10 * max(1.0, abs(loss)) or gain < min_gain:
            return leaf
        go_left = X[members, k] <= cut
        left = build(members[go_left], depth + 1)
        right = build(members[~go_left], depth + 1)
        return replace(leaf, split=(k, cut), left=left, right=right)

    return build(root, 0)


# pruning ------------------------------------------------------------------------

@dataclass(eq=False)
class PrunePath:
    """Nested cost-complexity subtrees of ``tree``.

    Entry ``r`` is the optimal subtree for ``alphas[r] <= alpha <
    alphas[r+1]``; it is ``tree`` with the internal nodes in
    ``collapsed[r]`` turned into leaves. The last entry is the root alone.
    """

    tree: TreeNode
    alphas: np.ndarray
    collapsed: list[frozenset]
    n_leaves: np.ndarray
    train_loss: np.ndarray
    risks: np.ndarray | None = None
    risk_se: np.ndarray | None = None

    def __len__(self) -> int:
        return self.alphas.size

    def subtree(self, r: int) -> TreeNode:
        return _collapse(self.tree, self.collapsed[r])

    def index_for(self, alpha: float) -> int:
        """Entry optimal at penalty ``alpha``."""
        return int(np.searchsorted(self.alphas, alpha, side="right") - 1) if alpha >= 0 else 0

    def eval_points(self, mode: str = "geometric") -> np.ndarray:
        a = self.alphas
        if mode == "endpoint":
            return a.copy()
        out = np.empty_like(a)
        out[:-1] = np.sqrt(a[:-1] * a[1:])
        out[-1] = np.inf
        return out


def _collapse(node: TreeNode, collapsed) -> TreeNode:
    if node.is_leaf:
        return node
    if node.node_id in collapsed:
        return replace(node, split=None, left=None, right=None)
    return replace(node, left=_collapse(node.left, collapsed),
                   right=_collapse(node.right, collapsed))


def prune_path(tree: TreeNode, n: int) -> PrunePath:
    """Weakest-link pruning sequence.

    ``n`` is the number of training observations; node losses are divided
    by it before forming the critical values
    ``g(t) = (R(t) - R(T_t)) / (|T_t| - 1)``.
    """
    collapsed: set = set()

    def summarize(node):
        """(subtree loss, leaf count) of the current pruned subtree."""
        if node.is_leaf or node.node_id in collapsed:
            return node.loss / n, 1
        l1, c1 = summarize(node.left)
        l2, c2 = summarize(node.right)
        return l1 + l2, c1 + c2

    def internal(node):
        if node.is_leaf or node.node_id in collapsed:
            return []
        return [node] + internal(node.left) + internal(node.right)

    alphas, sets, nleaves, losses = [], [], [], []

    def record(a):
        total, cnt = summarize(tree)
        alphas.append(a)
        sets.append(frozenset(collapsed))
        nleaves.append(cnt)
        losses.append(total)

    alpha = 0.0
    while True:
        cand = internal(tree)
        if not cand:
            record(alpha)
            break
        g = {}
        for nd in cand:
            sub_loss, sub_leaves = summarize(nd)
            g[nd.node_id] = (nd.loss / n - sub_loss) / (sub_leaves - 1)
        gmin = min(g.values())
        if gmin > alpha + 1e-12 * max(1.0, abs(alpha)):
            # the current subtree is optimal on [alpha, gmin)
            record(alpha)
            alpha = gmin
        tol = 1e-12 * max(1.0, abs(alpha))
        collapsed.update(nid for nid, val in g.items() if val <= alpha + tol)
    return PrunePath(tree, np.array(alphas), sets, np.array(nleaves), np.array(losses))


# cross-validation ---------------------------------------------------------------

def _leaf_betas(tree: TreeNode, X: np.ndarray) -> np.ndarray:
    out = np.empty((X.shape[0], tree.estimate.beta.size))
    stack = [(tree, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            out[rows] = node.estimate.clipped
            continue
        k, cut = node.split
        go = X[rows, k] <= cut
        stack.append((node.left, rows[go]))
        stack.append((node.right, rows[~go]))
    return out


def cross_validate(data: Dataset, stats: LossStats, config: FitConfig,
                   cens: CensoringModel | None = None, psi: CifModel | None = None,
                   path: PrunePath | None = None) -> PrunePath:
    """Q-fold cross-validated risk for every entry of the pruning path.

    For each fold the tree is grown and pruned on the remaining rows; the
    held-out rows are scored with their per-observation loss (same family
    as the fit) at the clamped predictions of the fold tree pruned at each
    evaluation ``alpha``. The risk is the average over folds of the fold
    mean, averaged again over repeats. Folds with no eligible held-out row
    are skipped with a warning.
    """
    if path is None:
        path = prune_path(grow(data, stats, config), data.n)
    points = path.eval_points(config.alpha_eval)
    counts = _counts(stats, config.effective_count_mode)
    R = len(path)
    rep_risks = np.zeros((config.cv_repeats, R))
    phi_all = np.zeros((config.cv_repeats, data.n, R))
    for rep in range(config.cv_repeats):
        folds = split_folds(data.n, config.Q, np.random.SeedSequence([config.seed, rep]))
        used = 0
        for test in folds:
            if counts[test].sum() == 0:
                warnings.warn("fold without eligible held-out observations skipped",
                              stacklevel=2)
                continue
            train = np.setdiff1d(np.arange(data.n), test)
            sub = data.subset(train)
            if config.refit_per_fold:
                fold_stats = precompute_stats(
                    sub, fit_km(sub), _refit_psi(psi, sub), stats.grid, stats.cause,
                    floor=config.floor, dr_form=stats.dr_form, kinds=[config.loss])
            else:
                fold_stats = stats.subset(train)
            fold_path = prune_path(grow(sub, fold_stats, config), sub.n)
            held = stats.subset(test)
            Xt = data.X[test]
            cache = {}
            for r, a in enumerate(points):
                idx = fold_path.index_for(a)
                if idx not in cache:
                    pred = _leaf_betas(fold_path.subtree(idx), Xt)
                    cache[idx] = observation_losses(held, config.loss, pred)
                phi_all[rep, test, r] = cache[idx]
                rep_risks[rep, r] += cache[idx].mean()
            used += 1
        rep_risks[rep] /= max(used, 1)
    phi = phi_all.mean(axis=0)
    path.risks = rep_risks.mean(axis=0)
    path.risk_se = phi.std(axis=0, ddof=1) / np.sqrt(data.n) if data.n > 1 else np.zeros(R)
    return path


def _refit_psi(psi, sub):
    if psi is None:
        return None
    from .cif_models import AalenJohansenModel, fit_aalen_johansen
    return fit_aalen_johansen(sub) if isinstance(psi, AalenJohansenModel) else psi


def select(path: PrunePath, rule=SelectRule.MIN) -> TreeNode:
    """Pick a subtree from a cross-validated path.

    ``MIN`` takes the lowest risk, ``ONE_SE`` the smallest tree within one
    standard error of it; ties go to the smaller tree.
    """
    return path.subtree(select_index(path, rule))


def select_index(path: PrunePath, rule=SelectRule.MIN) -> int:
    if path.risks is None:
        raise ValueError("path has no cross-validated risks")
    risks = path.risks
    r_min = int(np.argmin(risks))
    bound = risks[r_min] + 1e-12 * max(1.0, abs(risks[r_min]))
    if SelectRule(rule) is SelectRule.ONE_SE:
        bound = risks[r_min] + path.risk_se[r_min]
    # entries are ordered from the largest to the smallest tree
    return int(np.flatnonzero(risks <= bound)[-1])


# end-to-end ---------------------------------------------------------------------

@dataclass(eq=False)
class FitResult:
    tree: TreeNode
    path: PrunePath
    selected: int
    stats: LossStats
    config: FitConfig
    covariate_names: tuple[str, ...]

    @property
    def maximal_tree(self) -> TreeNode:
        return self.path.tree


def fit_tree(data: Dataset, config: FitConfig, cens: CensoringModel | None = None,
             psi: CifModel | None = None, stats: LossStats | None = None,
             cv: bool = True) -> FitResult:
    """Precompute statistics, grow, prune and (optionally) cross-validate."""
    if stats is None:
        if config.grid is None:
            raise ValueError("config.grid is required")
        cens = fit_km(data) if cens is None else cens
        stats = precompute_stats(data, cens, psi, config.grid, config.cause,
                                 floor=config.floor, dr_form=config.dr_form,
                                 kinds=[config.loss])
    stats.coefficients(config.loss)  # surface positivity / missing-model errors early
    path = prune_path(grow(data, stats, config), data.n)
    if cv and len(path) > 1:
        cross_validate(data, stats, config, cens, psi, path)
        r = select_index(path, config.rule)
    else:
        r = 0
        if path.risks is None:
            path.risks = np.full(len(path), np.nan)
            path.risk_se = np.full(len(path), np.nan)
    return FitResult(path.subtree(r), path, r, stats, config, data.covariate_names)


def predict(tree: TreeNode, W, raw: bool = False) -> np.ndarray:
    """Leaf CIF estimates for covariate rows ``W``; shape ``(n, J)``.

    Rows go left when ``w_k <= cutpoint``. Values are clamped to ``[0, 1]``
    unless ``raw`` is set.
    """
    W = np.asarray(W, dtype=float)
    single = W.ndim == 1
    W = np.atleast_2d(W)
    p = _n_features(tree)
    if p is not None and W.shape[1] < p:
        raise ValueError(f"covariate vector has length {W.shape[1]}, tree uses index {p - 1}")
    out = _leaf_betas(tree, W) if not raw else _leaf_raw(tree, W)
    return out[0] if single else out


def _n_features(tree: TreeNode):
    ks = tree.split_covariates()
    return max(ks) + 1 if ks else None


def _leaf_raw(tree, W):
    out = np.empty((W.shape[0], tree.estimate.beta.size))
    for i, w in enumerate(W):
        node = tree
        while not node.is_leaf:
            node = node.left if w[node.split[0]] <= node.split[1] else node.right
        out[i] = node.estimate.beta
    return out


# serialisation ------------------------------------------------------------------

def _num(v):
    return None if not np.isfinite(v) else float(v)


def tree_to_dict(tree: TreeNode, meta: dict | None = None,
                 covariate_names=None) -> dict:
    def enc(nd: TreeNode) -> dict:
        d = {
            "id": nd.node_id,
            "depth": nd.depth,
            "n": nd.n_members,
            "n_eligible": nd.n_eligible,
            "loss": nd.loss,
            "beta": [_num(b) for b in nd.estimate.beta],
            "loss_by_time": [float(v) for v in nd.estimate.loss_contribution],
        }
        if not nd.is_leaf:
            k, cut = nd.split
            d["split"] = {"covariate": k, "cutpoint": cut}
            if covariate_names:
                d["split"]["name"] = covariate_names[k]
            d["left"] = enc(nd.left)
            d["right"] = enc(nd.right)
        return d

    doc = {"schema": TREE_SCHEMA}
    if meta:
        doc["meta"] = meta
    if covariate_names is not None:
        doc["covariates"] = list(covariate_names)
    doc["root"] = enc(tree)
    return doc


def tree_from_dict(doc: dict) -> TreeNode:
    if doc.get("schema") != TREE_SCHEMA:
        raise ValueError(f"unsupported tree document schema {doc.get('schema')!r}")

    def dec(d: dict) -> TreeNode:
        beta = np.array([np.nan if b is None else b for b in d["beta"]], dtype=float)
        est = NodeEstimate(beta, d["n"], np.array(d["loss_by_time"], dtype=float),
                           np.isfinite(beta))
        node = TreeNode(d["id"], d["depth"], est, d["n"], d["n_eligible"], d["loss"])
        if "split" in d:
            node = replace(node, split=(int(d["split"]["covariate"]),
                                        float(d["split"]["cutpoint"])),
                           left=dec(d["left"]), right=dec(d["right"]))
        return node

    return dec(doc["root"])


def save_tree(tree: TreeNode, path, meta=None, covariate_names=None) -> None:
    with open(path, "w") as fh:
        json.dump(tree_to_dict(tree, meta, covariate_names), fh, indent=1)
        fh.write("\n")


def load_tree(path) -> tuple[TreeNode, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return tree_from_dict(doc), doc
