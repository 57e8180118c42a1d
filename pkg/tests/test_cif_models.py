import mpmath
import numpy as np
import pytest

from ciftree.cif_models import (PRESETS, FineGrayModel, FineGrayParams, fg_true_cif,
                                fit_aalen_johansen, y_m)
from ciftree.data import Dataset
from conftest import random_competing

W_Z1 = np.array([[0.2, 0.8, 0.5]])
W_Z0 = np.array([[0.8, 0.8, 0.5]])


def test_fg_origin_and_limit():
    for prm in PRESETS.values():
        for w in (W_Z0, W_Z1):
            assert fg_true_cif(prm, 0.0, 1, w[0]) == 0.0
            assert fg_true_cif(prm, 0.0, 2, w[0]) == 0.0
            total = fg_true_cif(prm, 1e6, 1, w[0]) + fg_true_cif(prm, 1e6, 2, w[0])
            assert abs(total - 1.0) < 1e-12


def test_fg_against_high_precision():
    mpmath.mp.dps = 50
    p, b1, t = mpmath.mpf("0.3"), mpmath.mpf(3), mpmath.mpf(1)
    ref = 1 - (1 - p * (1 - mpmath.e ** (-t))) ** mpmath.e ** b1
    val = fg_true_cif(FineGrayParams(3.0, -0.5, 0.3), 1.0, 1, W_Z1[0])
    assert abs(val - float(ref)) < 1e-14
    ref2 = (1 - p) ** mpmath.e ** b1 * (1 - mpmath.e ** (-t * mpmath.e ** mpmath.mpf(-0.5)))
    assert abs(fg_true_cif(FineGrayParams(3.0, -0.5, 0.3), 1.0, 2, W_Z1[0]) - float(ref2)) < 1e-14


def test_params_validation():
    with pytest.raises(ValueError):
        FineGrayParams(1.0, 1.0, 1.0)
    assert PRESETS["low"] == FineGrayParams(1.5, -0.5, 0.3)


def test_y_m_examples():
    model = FineGrayModel(PRESETS["high"])
    t = 1.3
    assert y_m(model, [0.0], t, 1, W_Z1)[0, 0] == pytest.approx(model.cif([t], 1, W_Z1)[0, 0])
    assert y_m(model, [t + 0.1], t, 1, W_Z1)[0, 0] == 0.0
    # Z = 0: exp(0) = 1 collapses the exponent so the cause-1 limit is p
    assert y_m(model, [0.0], 1e9, 1, W_Z0)[0, 0] == pytest.approx(0.3, abs=1e-12)


def test_y_m_range_and_flag(rng):
    model = FineGrayModel(PRESETS["medium"])
    W = rng.random((50, 10))
    u = np.linspace(0, 3, 7)
    y, flag = y_m(model, u, 2.0, 1, W, return_flag=True)
    assert np.all((y >= 0) & (y <= 1)) and not flag.any()
    aj = fit_aalen_johansen(random_competing(rng, 30))
    y, flag = y_m(aj, [aj.jump_times[-1] + 1.0], 1e9, 1, W[:3], return_flag=True)
    if aj.survival[-1] == 0:
        assert flag.all() and np.all(y == 0)


def test_model_invariants(rng):
    W = rng.random((20, 10))
    grid = np.linspace(0, 6, 40)
    for model in (FineGrayModel(PRESETS["low"]), fit_aalen_johansen(random_competing(rng, 80))):
        c1 = model.cif(grid, 1, W)
        c2 = model.cif(grid, 2, W)
        assert np.all(np.diff(c1, axis=1) >= -1e-15)
        assert np.all((c1 >= 0) & (c1 <= 1))
        ef = model.event_free(grid, W)
        assert np.all(np.diff(ef, axis=1) <= 1e-15)
        assert np.allclose(ef[:, 0], 1.0)
        left = model.cif(grid, 1, W, left=True) + model.cif(grid, 2, W, left=True)
        np.testing.assert_allclose(ef, 1 - left, atol=1e-8)
        assert np.all(c1[:, -1] + c2[:, -1] <= 1 + 1e-8)


def test_aj_no_censoring_is_ecdf():
    t = np.array([3.0, 1.0, 2.0, 2.0, 5.0])
    d = Dataset(t, np.ones(5), [1, 2, 1, 2, 1], np.zeros((5, 1)))
    aj = fit_aalen_johansen(d)
    grid = np.array([0.5, 1.0, 2.0, 4.0, 9.0])
    total = aj.cif(grid, 1, [[0]]) + aj.cif(grid, 2, [[0]])
    np.testing.assert_allclose(total[0], [(t <= g).mean() for g in grid], atol=1e-15)
    assert aj.cif([9.0], 1, [[0]])[0, 0] == pytest.approx(3 / 5)
    assert aj.cif([9.0], 2, [[0]])[0, 0] == pytest.approx(2 / 5)


def test_aj_five_point_hand_table():
    # (1, cause 1), (2, censored), (3, cause 2), (4, cause 1), (5, censored)
    d = Dataset([1, 2, 3, 4, 5], [1, 0, 1, 1, 0], [1, 0, 2, 1, 0], np.zeros((5, 1)))
    aj = fit_aalen_johansen(d)
    assert aj.jump_times.tolist() == [1.0, 3.0, 4.0]
    hand_inc1 = [1 / 5, 0.0, (4 / 5) * (1 - 1 / 3) * (1 / 2)]
    hand_inc2 = [0.0, (4 / 5) * (1 / 3), 0.0]
    hand_surv = [1 - 1 / 5, (1 - 1 / 5) * (1 - 1 / 3), (1 - 1 / 5) * (1 - 1 / 3) * (1 - 1 / 2)]
    assert aj.increments[0].tolist() == hand_inc1
    assert aj.increments[1].tolist() == hand_inc2
    assert aj.survival.tolist() == hand_surv
    total = aj._cum[:, 1:].sum(axis=0) + aj.survival
    np.testing.assert_allclose(total, 1.0, atol=1e-10)
    assert len(aj.to_csv_rows()) == 3
