import numpy as np
import pytest

from ciftree.censoring import PositivityError, UnitCensoring, fit_km
from ciftree.cif_models import PRESETS, FineGrayModel, fit_aalen_johansen
from ciftree.data import Dataset, TimeGrid
from ciftree.losses import (LossKind, node_estimate, node_loss, node_loss_at_minimum,
                            observation_losses, precompute_stats, split_gain, split_gains)
from ciftree.oracles import observation_loss_table
from conftest import random_competing

KINDS = ["full", "ipcw1", "ipcw2", "bj", "dr"]
FG = FineGrayModel(PRESETS["medium"])


def uncensored(rng, n=40, p=3):
    d = random_competing(rng, n, p=p, gamma=0.0)
    assert d.delta.all()
    return d


def test_no_censoring_terms(rng):
    d = uncensored(rng)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.3, 0.8]))
    assert np.all(st.ts0_point == 1.0)
    assert np.all(st.ts0_mart == 0.0)
    assert np.all(st.ts1_mart == 0.0)
    np.testing.assert_array_equal(st.ts1_point, st.z_tilde)


def test_hand_dataset_matches_direct_summation():
    d = Dataset([0.5, 1.0, 1.5, 2.5], [1, 0, 1, 1], [1, 0, 2, 1],
                [[0.2, 0.9], [0.4, 0.6], [0.7, 0.1], [0.1, 0.8]])
    cens = fit_km(d)
    grid = TimeGrid([0.7, 2.0])
    for form in ("truncated", "full"):
        st = precompute_stats(d, cens, FG, grid, floor=None, dr_form=form)
        for kind in KINDS:
            a, b, c = st.coefficients(kind)
            table = observation_loss_table(d, cens, FG, kind, grid, dr_form=form, floor=None)
            for beta in (0.0, 0.35, 0.9):
                for i in range(d.n):
                    for j in range(grid.J):
                        fast = a[i, j] - 2 * b[i, j] * beta + c[i, j] * beta ** 2
                        assert abs(fast - table[i][j](beta)) < 1e-12


def test_psi_changes_only_augmentation(rng):
    d = random_competing(rng, 50, gamma=1.2)
    cens = fit_km(d)
    grid = TimeGrid([0.3, 0.9])
    s_fg = precompute_stats(d, cens, FG, grid)
    s_aj = precompute_stats(d, cens, fit_aalen_johansen(d), grid)
    np.testing.assert_array_equal(s_fg.ts0_point, s_aj.ts0_point)
    np.testing.assert_array_equal(s_fg.ts0_mart, s_aj.ts0_mart)
    assert not np.allclose(s_fg.ts1_mart, s_aj.ts1_mart)


def test_uncensored_estimators_agree(rng):
    d = uncensored(rng)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.2, 0.6, 1.5]))
    members = np.arange(0, d.n, 2)
    ref = node_estimate(st, members, "full").beta
    frac = st.z_tilde[members].mean(axis=0)
    np.testing.assert_allclose(ref, frac, atol=1e-15)
    for kind in KINDS[1:]:
        assert np.max(np.abs(node_estimate(st, members, kind).beta - ref)) < 1e-12


def test_singleton_event():
    d = Dataset([0.5], [1], [1], [[0.0, 0.0]])
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([1.0]))
    for kind in KINDS:
        assert node_estimate(st, [0], kind).beta[0] == pytest.approx(1.0)


def test_dr_ratio_and_mean_forms(toy_data):
    for psi in (FG, fit_aalen_johansen(toy_data)):
        st = precompute_stats(toy_data, fit_km(toy_data), psi, TimeGrid([2.5, 4.5]), floor=None)
        for members in ([0, 1, 2, 3, 4, 5], [1, 4], [0, 2, 5]):
            mean = node_estimate(st, members, "dr").beta
            ratio = node_estimate(st, members, "dr", form="ratio").beta
            assert np.max(np.abs(mean - ratio)) < 1e-12


def test_minimiser_beats_perturbations(rng):
    d = random_competing(rng, 60, gamma=1.0)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.3, 0.8]))
    members = np.flatnonzero(d.X[:, 0] < 0.6)
    for kind in KINDS:
        est = node_estimate(st, members, kind, form="ratio")
        base = node_loss(st, members, est, kind)
        assert base == pytest.approx(node_loss_at_minimum(st, members, kind), abs=1e-10)
        for _ in range(10):
            pert = np.nan_to_num(est.beta) + rng.normal(0, 0.2, 2)
            assert base <= node_loss(st, members, pert, kind) + 1e-12


def test_dr_with_unit_censoring_is_bj(rng):
    for ties in (False, True):
        d = random_competing(rng, 70, gamma=1.5, ties=ties)
        grid = TimeGrid([0.25, 0.75, 1.25])
        for form in ("truncated", "full"):
            unit = precompute_stats(d, UnitCensoring(), FG, grid, dr_form=form)
            np.testing.assert_allclose(unit.coefficients("dr")[0], unit.coefficients("bj")[0],
                                       rtol=0, atol=1e-15)
            for members in (np.arange(d.n), np.arange(10)):
                beta = node_estimate(unit, members, "bj").beta
                assert node_loss(unit, members, beta, "dr") == pytest.approx(
                    node_loss(unit, members, beta, "bj"), abs=1e-12)


def test_augmented_forms_agree(rng):
    for _ in range(10):
        d = random_competing(rng, 100, gamma=1.3)
        cens = fit_km(d)
        grid = TimeGrid([0.2, 0.6, 1.1])
        full = precompute_stats(d, cens, FG, grid, floor=None, dr_form="full")
        trunc = precompute_stats(d, cens, FG, grid, floor=None, dr_form="truncated")
        beta = rng.random((d.n, grid.J))
        assert abs(observation_losses(full, "dr", beta).sum()
                   - observation_losses(trunc, "dr", beta).sum()) < 1e-10


def test_weight_normalisation(rng):
    for ties in (False, True):
        d = random_competing(rng, 80, gamma=1.0, ties=ties)
        for form in ("truncated", "full"):
            st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.4, 1.0]), floor=None,
                                  dr_form=form)
            assert np.max(np.abs(st.ts0_point + st.ts0_mart - 1.0)) < 1e-10


def test_additivity_across_causes(rng):
    d = uncensored(rng, 80)
    grid = TimeGrid([0.3, 0.9, 2.0])
    s1 = precompute_stats(d, fit_km(d), FG, grid, cause=1)
    s2 = precompute_stats(d, fit_km(d), FG, grid, cause=2)
    members = np.flatnonzero(d.X[:, 1] > 0.3)
    surv = (d.time[members][:, None] > grid.times).mean(axis=0)
    total = node_estimate(s1, members, "dr").beta + node_estimate(s2, members, "dr").beta + surv
    np.testing.assert_allclose(total, 1.0, atol=1e-12)


def test_permutation_invariance(rng):
    d = random_competing(rng, 60, gamma=1.0)
    perm = rng.permutation(d.n)
    grid = TimeGrid([0.3, 0.9])
    a = precompute_stats(d, fit_km(d), FG, grid)
    dp = d.subset(perm)
    b = precompute_stats(dp, fit_km(dp), FG, grid)
    for kind in KINDS:
        la = node_loss_at_minimum(a, np.arange(d.n), kind)
        lb = node_loss_at_minimum(b, np.arange(d.n), kind)
        assert la == pytest.approx(lb, rel=1e-12)


def test_loss_additive_over_nodes(rng):
    d = random_competing(rng, 60, gamma=1.0)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.5]))
    left = np.flatnonzero(d.X[:, 0] <= 0.5)
    right = np.flatnonzero(d.X[:, 0] > 0.5)
    bl, br = node_estimate(st, left, "dr").beta, node_estimate(st, right, "dr").beta
    beta = np.where((d.X[:, 0] <= 0.5)[:, None], bl, br)
    total = observation_losses(st, "dr", beta).sum()
    assert total == pytest.approx(node_loss(st, left, bl, "dr") + node_loss(st, right, br, "dr"))


def test_constant_response_zero_gain():
    n = 30
    X = np.column_stack([np.linspace(0, 1, n), np.zeros(n)])
    d = Dataset(np.full(n, 0.5), np.ones(n), np.ones(n), X)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([1.0]))
    _, gains, _, _ = split_gains(st, np.arange(n), d.X[:, 0], "dr")
    assert np.allclose(gains, 0.0, atol=1e-12)


def test_prefix_gains_match_recompute(rng):
    for _ in range(20):
        d = random_competing(rng, int(rng.integers(10, 60)), gamma=1.0, ties=True)
        st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.3, 0.9]), floor=None)
        members = np.sort(rng.choice(d.n, size=max(4, d.n // 2), replace=False))
        for kind in KINDS:
            for k in range(d.p):
                cuts, gains, _, _ = split_gains(st, members, d.X[:, k], kind)
                for c, g in zip(cuts, gains):
                    assert abs(g - split_gain(st, members, d.X[:, k], c, kind)) < 1e-10


def test_inestimable_ipcw_node():
    d = Dataset([0.5, 1.0, 2.0, 3.0], [1, 0, 0, 1], [1, 0, 0, 2], [[0.0], [1.0], [1.0], [0.0]])
    st = precompute_stats(d, fit_km(d), None, TimeGrid([2.5]), floor=None, kinds=["ipcw2"])
    est = node_estimate(st, [1, 2], "ipcw2")
    assert not est.estimable[0] and np.isnan(est.beta[0])
    assert est.clipped[0] == 0.0


def test_positivity_raised_lazily(rng):
    d = random_competing(rng, 100, gamma=3.0)
    st = precompute_stats(d, fit_km(d), FG, TimeGrid([0.5, 6.0]), floor=0.3)
    assert st.available("ipcw1") and st.available("bj")
    with pytest.raises(PositivityError):
        st.coefficients("ipcw2")
    with pytest.raises(ValueError, match="working model"):
        precompute_stats(d, fit_km(d), None, TimeGrid([0.5])).coefficients("dr")


def test_losskind_values():
    assert LossKind("dr") is LossKind.DR
    assert LossKind.IPCW1.is_ipcw and not LossKind.BJ.is_ipcw
