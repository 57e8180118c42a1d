import csv

import numpy as np
import pytest
from scipy import stats

from ciftree.cif_models import PRESETS, FineGrayParams, _fg_cif, fg_true_cif, fg_z
from ciftree.data import Dataset, TimeGrid
from ciftree.losses import NodeEstimate
from ciftree.simulation import (SimDesign, apply_censoring, calibrate_gamma, censoring_rate,
                                evaluate, marginal_cdf, run_experiment, sample_cause1_time,
                                sample_full, true_quantiles)
from ciftree.tree import TreeNode

HIGH = PRESETS["high"]


def test_inversion_round_trip():
    u = np.random.default_rng(0).random(10_000)
    for prm in PRESETS.values():
        for z in (0.0, 1.0):
            t = sample_cause1_time(prm, z, u)
            cdf = _fg_cif(prm, t, 1, z) / _fg_cif(prm, np.inf, 1, z)
            assert np.max(np.abs(cdf - u)) < 1e-10


def test_cause1_times_match_conditional_cdf():
    rng = np.random.default_rng(1)
    full = sample_full(SimDesign(HIGH), rng, n=400_000)
    z = fg_z(full.X)
    for zv in (0.0, 1.0):
        t = full.time[(z == zv) & (full.cause == 1)][:100_000]
        assert t.size > 50_000
        cdf = lambda s, zv=zv: _fg_cif(HIGH, s, 1, zv) / _fg_cif(HIGH, np.inf, 1, zv)  # noqa: E731
        assert stats.kstest(t, cdf).statistic < 0.01
        t2 = full.time[(z == zv) & (full.cause == 2)]
        ks = stats.kstest(t2, "expon", args=(0, np.exp(-HIGH.beta2 * zv)))
        # cause 2 is rare when Z = 1 (probability 0.7 ** e**3), so only a p-value check there
        assert ks.statistic < 0.01 if t2.size > 50_000 else ks.pvalue > 1e-3


def test_cause_probabilities():
    rng = np.random.default_rng(2)
    d = sample_full(SimDesign(FineGrayParams(0.0, -0.5, 0.3)), rng, n=100_000)
    assert abs((d.cause == 1).mean() - 0.3) < 0.01
    d = sample_full(SimDesign(HIGH), rng, n=200_000)
    z1 = fg_z(d.X) == 1
    assert abs((d.cause[z1] == 1).mean() - (1 - 0.7 ** np.exp(3))) < 0.01
    assert abs(z1.mean() - 0.25) < 0.01


def test_cif_limits_sum_to_one():
    rng = np.random.default_rng(3)
    W = rng.random((1000, 10))
    for prm in PRESETS.values():
        z = fg_z(W)
        total = _fg_cif(prm, np.inf, 1, z) + _fg_cif(prm, np.inf, 2, z)
        assert np.max(np.abs(total - 1.0)) < 1e-12


def test_calibration():
    for name in ("high", "low"):
        design = SimDesign.preset(name)
        gamma = calibrate_gamma(design)
        assert censoring_rate(design.fg, gamma) == pytest.approx(0.5, abs=1e-8)
        rng = np.random.default_rng(4)
        d = apply_censoring(sample_full(design, rng, n=100_000), gamma, rng)
        assert 0.48 <= d.censoring_rate() <= 0.52
        z = fg_z(d.X)
        rates = [1 - d.delta[z == v].mean() for v in (0, 1)]
        # exact conditional rates differ because T depends on Z; compare to them
        for v, r in zip((0, 1), rates):
            exact = _exact_rate_given_z(design.fg, gamma, v)
            assert abs(r - exact) < 0.02
    assert calibrate_gamma(SimDesign(censor_rate_target=0.0)) == 0.0


def _exact_rate_given_z(prm, gamma, z):
    from scipy import integrate
    f = lambda c: gamma * np.exp(-gamma * c) * (  # noqa: E731
        1 - _fg_cif(prm, c, 1, z) - _fg_cif(prm, c, 2, z))
    return integrate.quad(f, 0, np.inf)[0]


def test_censoring_independent_of_covariates():
    rng = np.random.default_rng(5)
    full = sample_full(SimDesign(HIGH), rng, n=100_000)
    # push every event time out of reach so the observed times are the censoring draws
    far = Dataset(np.full(full.n, 1e300), full.delta, full.cause, full.X, 2)
    C = apply_censoring(far, 1.3, rng)
    assert not C.delta.any()
    z = fg_z(C.X)
    assert abs((C.time[z == 0] < 0.5).mean() - (C.time[z == 1] < 0.5).mean()) < 0.02
    assert stats.ks_2samp(C.time[z == 0], C.time[z == 1]).statistic < 0.02


def test_censoring_monotone_and_zero():
    rng = np.random.default_rng(6)
    full = sample_full(SimDesign(HIGH), rng, n=20_000)
    rates = [apply_censoring(full, g, np.random.default_rng(7)).censoring_rate()
             for g in (0.5, 1.0, 2.0)]
    assert rates[0] < rates[1] < rates[2]
    assert censoring_rate(HIGH, 0.5) < censoring_rate(HIGH, 1.0)
    none = apply_censoring(full, 0.0, rng)
    assert none.equals(full)
    cens = apply_censoring(full, 1.0, rng)
    assert np.all(cens.cause[cens.delta == 0] == 0)


def test_true_quantiles():
    q = true_quantiles(HIGH)
    np.testing.assert_allclose(marginal_cdf(HIGH, q), [0.25, 0.5, 0.75], atol=1e-12)
    rng = np.random.default_rng(8)
    t = sample_full(SimDesign(HIGH), rng, n=200_000).time
    np.testing.assert_allclose(np.quantile(t, [0.25, 0.5, 0.75]), q, rtol=0.02)
    with pytest.raises(ValueError):
        true_quantiles(HIGH, (0.0, 0.5))


def _leaf(i, beta):
    return TreeNode(i, 1, NodeEstimate(np.asarray(beta, float), 1, np.zeros(len(beta)),
                                       np.ones(len(beta), bool)), 1, 1, 0.0)


def test_evaluate_root_only_and_oracle():
    grid = TimeGrid(true_quantiles(HIGH))
    W = np.random.default_rng(9).random((500, 10))
    rep = evaluate(_leaf(0, [0.1, 0.2, 0.3]), HIGH, W, grid)
    assert (rep.size_dev, rep.nsp, rep.pcsp, rep.n_leaves) == (2, 0, 0, 1)
    # the true partition with the true CIFs at each leaf predicts without error
    c1 = [fg_true_cif(HIGH, t, 1, [0.2, 0.8]) for t in grid.times]
    c0 = [fg_true_cif(HIGH, t, 1, [0.8, 0.8]) for t in grid.times]
    right = TreeNode(2, 1, _leaf(2, c0).estimate, 1, 1, 0.0, (1, 0.5),
                     _leaf(3, c0), _leaf(4, c1))
    left = right  # W1 <= 0.5, then W2 > 0.5 gives Z = 1
    tree = TreeNode(0, 0, _leaf(0, c0).estimate, 1, 1, 0.0, (0, 0.5), left, _leaf(5, c0))
    rep = evaluate(tree, HIGH, W, grid)
    assert np.all(rep.pred_error < 1e-28)
    assert (rep.size_dev, rep.nsp, rep.pcsp) == (0, 0, 1)
    noisy = TreeNode(0, 0, _leaf(0, c0).estimate, 1, 1, 0.0, (4, 0.5), left, _leaf(5, c0))
    rep = evaluate(noisy, HIGH, W, grid)
    assert (rep.nsp, rep.pcsp) == (1, 0)


def test_hand_audited_replication():
    from ciftree.simulation import run_replication
    design = SimDesign(HIGH, n=500, n_test=500, seed=2)
    grid = TimeGrid(true_quantiles(HIGH))
    out = run_replication(design, ["dr-fg"], 0, design.resolved_gamma(), grid)["dr-fg"]
    assert out["n_leaves"] == len(out["split_covariates"]) + 1
    assert out["size_dev"] == abs(out["n_leaves"] - 3)
    assert out["nsp"] == sum(k not in (0, 1) for k in out["split_covariates"])
    assert out["pcsp"] == int(out["n_leaves"] == 3 and set(out["split_covariates"]) == {0, 1})
    assert all(v >= 0 for v in out["pred_error"])


def test_run_experiment_small(tmp_path):
    designs = {"high": SimDesign(HIGH, n=200, n_test=200, n_reps=2, seed=1)}
    res = run_experiment(designs, ["ipcw1"], out_dir=tmp_path, header=("test",))
    assert len(res.reports("high", "ipcw1")) == 2
    with open(tmp_path / "table1.csv") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    assert len(rows) == 2 and rows[1][:2] == ["high", "ipcw1"]
    body = (tmp_path / "prederr.csv").read_bytes()
    # a second run reuses the stored replications and writes identical tables
    res2 = run_experiment(designs, ["ipcw1"], out_dir=tmp_path, header=("test",))
    assert (tmp_path / "prederr.csv").read_bytes() == body
    assert res2.records == res.records


def test_design_validation():
    with pytest.raises(ValueError):
        SimDesign(n=0)
    with pytest.raises(ValueError):
        SimDesign.preset("extreme")
    assert isinstance(sample_full(SimDesign(), np.random.default_rng(0), n=5), Dataset)
