"""Command-line interface: ``ciftree simulate|fit|predict|evaluate|experiment``.

Every command is deterministic given its flags. CSV outputs start with
``#`` comment lines recording the package version, the command and its
flags; no timestamps are written, so reruns produce byte-identical files.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (positivity),
4 experiment finished with failed replications.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .censoring import PositivityError, fit_km
from .cif_models import PRESETS, FineGrayModel, FineGrayParams, fg_z, _fg_cif, fit_aalen_johansen
from .data import DataError, Dataset, TimeGrid, load_csv, read_covariates_csv, save_csv
from .losses import LossKind
from .simulation import (METHODS, SimDesign, apply_censoring, calibrate_gamma, prediction_error,
                         run_experiment, sample_full, true_quantiles)
from .tree import (FitConfig, SelectRule, fit_tree, leaves, load_tree, predict, save_tree)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _optional_floor(text: str):
    v = float(text)
    return None if v <= 0 else v


# parser ------------------------------------------------------------------------

def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("tree fitting")
    g.add_argument("--cause", type=int, default=1, help="cause of interest (default 1)")
    g.add_argument("--minbucket", type=int, default=10)
    g.add_argument("--minsplit", type=int, default=30)
    g.add_argument("--max-depth", type=int, default=30)
    g.add_argument("--folds", type=int, default=10, help="cross-validation folds Q")
    g.add_argument("--repeats", type=int, default=1, help="cross-validation repeats")
    g.add_argument("--rule", choices=[r.value for r in SelectRule], default="min")
    g.add_argument("--alpha-eval", choices=["geometric", "endpoint"], default="geometric")
    g.add_argument("--floor", type=_optional_floor, default=0.05,
                   help="positivity floor for censoring weights (0 disables)")
    g.add_argument("--dr-form", choices=["truncated", "full"], default="truncated")
    g.add_argument("--cp", type=float, default=0.0,
                   help="complexity threshold during growth, relative to the root loss")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--times", type=_floats, help="evaluation times t_1,...,t_J")
    g.add_argument("--quantiles", type=_floats, help="quantile levels of the event-time distribution")
    p.add_argument("--weights", type=_floats, help="composite weights (default uniform)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ciftree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ciftree {__version__}")
    parser.add_argument("--config", help="flat key=value file of flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw training and test data from the simulation design")
    s.add_argument("--preset", choices=sorted(PRESETS), default="high")
    s.add_argument("--beta1", type=float)
    s.add_argument("--beta2", type=float)
    s.add_argument("--p", type=float, dest="p_mix")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--n-test", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gamma", default="auto", help="censoring rate or 'auto'")
    s.add_argument("--censor-rate", type=float, default=0.5)
    _add_grid_flags(s)
    s.add_argument("--out", default=".", help="output directory")

    f = sub.add_parser("fit", help="fit, prune and cross-validate a tree")
    f.add_argument("--data", required=True)
    f.add_argument("--loss", choices=[k.value for k in LossKind], default="dr")
    f.add_argument("--psi", default="aj", help="aj | none | fg-true[:beta1,beta2,p]")
    _add_grid_flags(f)
    _add_fit_flags(f)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", default=".")

    pr = sub.add_parser("predict", help="per-subject CIF predictions from a fitted tree")
    pr.add_argument("--tree", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--raw", action="store_true", help="do not clamp to [0, 1]")
    pr.add_argument("--out", default="predictions.csv")

    ev = sub.add_parser("evaluate", help="prediction error against a truth file")
    ev.add_argument("--tree", required=True)
    ev.add_argument("--data", required=True, help="test covariates CSV")
    ev.add_argument("--truth", required=True, help="truth CSV written by 'simulate'")
    ev.add_argument("--true-leaves", type=int, default=3)
    ev.add_argument("--out", default="evaluation.csv")

    ex = sub.add_parser("experiment", help="replicated simulation study")
    ex.add_argument("--methods", default="ipcw1,ipcw2,bj-fg,dr-fg",
                    help=f"comma list from {','.join(sorted(METHODS))}")
    ex.add_argument("--preset", default="high", help="comma list of signal presets")
    ex.add_argument("--n", type=int, default=500)
    ex.add_argument("--reps", type=int, default=100)
    ex.add_argument("--n-test", type=int, default=2000)
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--censor-rate", type=float, default=0.5)
    ex.add_argument("--quantiles", type=_floats, default=[0.25, 0.5, 0.75])
    ex.add_argument("--workers", type=int, default=None,
                    help="worker processes (default: CIFTREE_THREADS or 1)")
    _add_fit_flags(ex)
    ex.add_argument("--out", default="experiment")
    return parser


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    return {}


def _apply_config(parser, argv) -> None:
    """Install ``--config`` key=value pairs as defaults of the chosen command."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cmd = next((a for a in rest if not a.startswith("-")), None)
    sp = _subparsers(parser).get(cmd)
    if sp is None:
        return
    dests = {a.dest: a for a in sp._actions if a.dest != "help"}
    values = {}
    for k, line in enumerate(Path(known.config).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{known.config}:{k}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest == "p":
            dest = "p_mix"
        if dest not in dests:
            raise UsageError(f"{known.config}:{k}: unknown key {key!r} for '{cmd}'")
        act = dests[dest]
        if isinstance(act, argparse._StoreTrueAction):
            values[dest] = val.lower() in ("1", "true", "yes")
        elif act.type is not None:
            values[dest] = act.type(val)
        else:
            values[dest] = val
    sp.set_defaults(**values)


# helpers -----------------------------------------------------------------------

def _header(args) -> list[str]:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    return [f"ciftree {__version__}", f"command: {args.command}",
            f"seed: {flags.get('seed', 'n/a')}",
            "flags: " + " ".join(f"{k}={_flag_str(v)}" for k, v in flags.items())]


def _flag_str(v) -> str:
    if isinstance(v, list):
        return ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def _write_csv(path: Path, header: list[str], cols: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for h in header:
            fh.write(f"# {h}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _fg_params(args) -> FineGrayParams:
    base = PRESETS[args.preset]
    return FineGrayParams(base.beta1 if args.beta1 is None else args.beta1,
                          base.beta2 if args.beta2 is None else args.beta2,
                          base.p if args.p_mix is None else args.p_mix)


def _parse_psi(text: str, data: Dataset):
    text = text.strip().lower()
    if text == "none":
        return None
    if text == "aj":
        return fit_aalen_johansen(data)
    if text.startswith("fg-true"):
        _, _, rest = text.partition(":")
        if not rest:
            return FineGrayModel(PRESETS["high"])
        vals = _floats(rest)
        if len(vals) != 3:
            raise UsageError("--psi fg-true needs beta1,beta2,p")
        return FineGrayModel(FineGrayParams(*vals))
    raise UsageError(f"unknown --psi {text!r} (aj | none | fg-true:beta1,beta2,p)")


def _empirical_quantiles(data: Dataset, probs) -> np.ndarray:
    """Quantiles of the all-cause event-time distribution (product-limit estimate)."""
    aj = fit_aalen_johansen(data)
    cdf = 1.0 - aj.survival
    out = []
    for q in probs:
        k = np.searchsorted(cdf, q - 1e-12, side="left")
        if k >= cdf.size:
            raise UsageError(f"quantile {q} exceeds the estimated event distribution "
                             f"(max {cdf[-1] if cdf.size else 0:.3f})")
        out.append(aj.jump_times[k])
    return np.array(out)


def _grid_from(args, data: Dataset | None, psi=None) -> TimeGrid:
    if args.times:
        return TimeGrid(args.times, args.weights)
    probs = args.quantiles or [0.25, 0.5, 0.75]
    if isinstance(psi, FineGrayModel):
        times = true_quantiles(psi.params, probs)
    elif data is not None:
        times = _empirical_quantiles(data, probs)
    else:
        raise UsageError("need --times or data to derive quantiles")
    return TimeGrid(times, args.weights)


def _fit_config(args, loss, grid, seed) -> FitConfig:
    return FitConfig(loss=loss, grid=grid, cause=args.cause, minbucket=args.minbucket,
                     minsplit=args.minsplit, max_depth=args.max_depth, Q=args.folds,
                     cv_repeats=args.repeats, seed=seed, rule=args.rule,
                     alpha_eval=args.alpha_eval, floor=args.floor, dr_form=args.dr_form,
                     cp=args.cp)


# commands ------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prm = _fg_params(args)
    design = SimDesign(prm, n=args.n, n_test=args.n_test, seed=args.seed,
                       censor_rate_target=args.censor_rate)
    if str(args.gamma).lower() == "auto":
        gamma = calibrate_gamma(design)
        print(f"calibrated censoring rate gamma={gamma!r} for target {args.censor_rate}",
              file=sys.stderr)
    else:
        gamma = float(args.gamma)
    rng = np.random.default_rng(args.seed)
    full = sample_full(design, rng)
    train = apply_censoring(full, gamma, rng)
    test = sample_full(design, rng, n=args.n_test)
    grid = (TimeGrid(args.times, args.weights) if args.times
            else TimeGrid(true_quantiles(prm, args.quantiles or [0.25, 0.5, 0.75]), args.weights))
    head = _header(args) + [f"gamma: {gamma!r}"]
    save_csv(train, out / "train.csv", head)
    save_csv(test, out / "test.csv", head + ["uncensored test sample"])
    truth = _fg_cif(prm, grid.times[None, :], 1, fg_z(test.X)[:, None])
    _write_csv(out / "truth.csv", head, ["row"] + [f"t{j + 1}" for j in range(grid.J)],
               ([i + 1, *truth[i]] for i in range(test.n)))
    side = {"beta1": prm.beta1, "beta2": prm.beta2, "p": prm.p, "gamma": gamma,
            "censor_rate_target": args.censor_rate, "seed": args.seed,
            "times": grid.times.tolist(), "weights": grid.weights.tolist(),
            "train_censoring": train.censoring_rate()}
    (out / "simulation.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_csv(args.data)
    psi = _parse_psi(args.psi, data)
    grid = _grid_from(args, data, psi)
    cfg = _fit_config(args, LossKind(args.loss), grid, args.seed)
    res = fit_tree(data, cfg, cens=fit_km(data), psi=psi)
    head = _header(args)
    meta = {"loss": cfg.loss.value, "cause": cfg.cause, "times": grid.times.tolist(),
            "weights": grid.weights.tolist(), "n": data.n, "psi": args.psi,
            "tau": None if not np.isfinite(res.stats.tau) else res.stats.tau,
            "selected_index": res.selected, "version": __version__}
    save_tree(res.tree, out / "tree.json", meta, data.covariate_names)
    path = res.path
    _write_csv(out / "cv.csv", head,
               ["index", "alpha", "n_leaves", "train_loss", "cv_risk", "cv_se", "selected"],
               ([r, float(path.alphas[r]), int(path.n_leaves[r]), float(path.train_loss[r]),
                 float(path.risks[r]), float(path.risk_se[r]), int(r == res.selected)]
                for r in range(len(path))))
    _write_csv(out / "leaves.csv", head,
               ["leaf_id", "n"] + [f"cif_t{j + 1}" for j in range(grid.J)]
               + [f"raw_t{j + 1}" for j in range(grid.J)],
               ([lf.node_id, lf.n_members, *lf.estimate.clipped, *lf.estimate.beta]
                for lf in sorted(leaves(res.tree), key=lambda nd: nd.node_id)))
    print(f"selected subtree {res.selected} with {res.tree.n_leaves} leaves", file=sys.stderr)
    return EXIT_OK


def _tree_and_covariates(args):
    tree, doc = load_tree(args.tree)
    names = doc.get("covariates")
    if not names:
        raise UsageError("tree document lacks covariate names")
    return tree, doc, read_covariates_csv(args.data, names)


def cmd_predict(args) -> int:
    tree, doc, W = _tree_and_covariates(args)
    pred = predict(tree, W, raw=args.raw)
    J = pred.shape[1]
    _write_csv(Path(args.out), _header(args), ["row"] + [f"cif_t{j + 1}" for j in range(J)],
               ([i + 1, *pred[i]] for i in range(pred.shape[0])))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tree, doc, W = _tree_and_covariates(args)
    truth_rows = []
    with open(args.truth) as fh:
        rows = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    for ln in csv.reader(rows[1:]):
        truth_rows.append([float(v) for v in ln[1:]])
    truth = np.array(truth_rows)
    pred = predict(tree, W)
    if truth.shape != pred.shape:
        raise UsageError(f"truth has shape {truth.shape}, predictions {pred.shape}")
    pe = prediction_error(pred, truth)
    covs = tree.split_covariates()
    L = tree.n_leaves
    nsp = sum(1 for k in covs if k not in (0, 1))
    pcsp = int(L == args.true_leaves and set(covs) == {0, 1})
    rows = [[f"pred_error_t{j + 1}", float(v)] for j, v in enumerate(pe)]
    rows += [["n_leaves", L], ["size_dev", abs(L - args.true_leaves)], ["nsp", nsp],
             ["pcsp", pcsp]]
    _write_csv(Path(args.out), _header(args), ["metric", "value"], rows)
    for name, v in rows:
        print(f"{name}: {v}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
    presets = [p.strip() for p in args.preset.split(",") if p.strip()]
    designs = {}
    for p in presets:
        if p not in PRESETS:
            raise UsageError(f"unknown preset {p!r}")
        designs[p] = SimDesign(PRESETS[p], n=args.n, n_test=args.n_test, n_reps=args.reps,
                               seed=args.seed, censor_rate_target=args.censor_rate)
    base = _fit_config(args, LossKind.DR, None, args.seed)
    res = run_experiment(designs, methods, base, out_dir=args.out, quantiles=args.quantiles,
                         header=tuple(_header(args)), workers=args.workers)
    failed = 0
    for s in designs:
        for m in methods:
            summ = res.summary(s, m)
            failed += summ["reps_failed"]
            if summ["reps_ok"]:
                print(f"{s:>6} {m:>6}: PCSP={summ['pcsp']:.3f} |L-3|={summ['size_dev']:.3f} "
                      f"NSP={summ['nsp']:.3f} ok={summ['reps_ok']} failed={summ['reps_failed']}")
            else:
                print(f"{s:>6} {m:>6}: all {summ['reps_failed']} replications failed")
    if failed:
        print(f"{failed} replication fits failed; see {args.out}/reps", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "experiment": cmd_experiment}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ciftree: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except PositivityError as exc:
        print(f"ciftree: numerical failure: {exc}", file=sys.stderr)
        if np.isfinite(exc.tau_hint):
            print(f"hint: truncate follow-up at tau={exc.tau_hint:.6g} "
                  f"(choose --times below it) or lower --floor", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, DataError, ValueError, OSError, argparse.ArgumentTypeError) as exc:
        print(f"ciftree: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
