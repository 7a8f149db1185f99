import numpy as np
import pytest

from cesrisk.data import Dataset
from cesrisk.diagnostics import PLOT_FILES, bp_style_test, emit_plot_data, white_style_test
from cesrisk.errors import DataError
from cesrisk.justpope import stage1_fit
from cesrisk.ols import solve_ols

from conftest import tiny_dataset


def test_bp_matches_direct_ols(rng):
    d = tiny_dataset(40, seed=2)
    u = rng.normal(size=40)
    rep = bp_style_test(d, u)
    ref = solve_ols(np.column_stack([d.water, d.nitrogen, np.ones(40)]), u**2)
    np.testing.assert_allclose(rep.ols.coef, ref.coef, rtol=1e-12)
    assert rep.ols.names == ("water", "nitrogen", "_cons")
    assert rep.f == pytest.approx(ref.f)
    assert rep.kind == "inputs-regression"


def test_nitrogen_shift_only_moves_intercept(rng):
    d = tiny_dataset(40, seed=3)
    u = rng.normal(size=40)
    a = bp_style_test(d, u).ols
    raw = solve_ols(np.column_stack([d.water, d.raw_nitrogen, np.ones(40)]), u**2)
    np.testing.assert_allclose(a.coef[:2], raw.coef[:2], rtol=1e-9)
    assert a.f == pytest.approx(raw.f, rel=1e-9)


def test_white_regressors(rng):
    d = tiny_dataset(30, seed=4)
    u = rng.normal(size=30)
    yhat = rng.uniform(5, 9, 30)
    rep = white_style_test(d, u, yhat)
    assert rep.ols.names == ("yhat", "yhat2", "_cons")
    ref = solve_ols(np.column_stack([yhat, yhat**2, np.ones(30)]), u**2)
    np.testing.assert_allclose(rep.ols.coef, ref.coef, rtol=1e-10)


def test_detects_strong_heteroscedasticity(rng):
    d = tiny_dataset(200, seed=5)
    u = rng.normal(size=200) * d.water / 10
    rep = bp_style_test(d, u)
    assert rep.heteroscedastic
    assert rep.verdict == "heteroscedastic"
    assert rep.directions["water"] == {"sign": 1, "significant": True}


def test_homoscedastic_verdict():
    d = tiny_dataset(200, seed=6)
    u = np.random.default_rng(60).normal(size=200)
    rep = bp_style_test(d, u)
    assert rep.verdict == ("heteroscedastic" if rep.p_value < 0.05 else "no heteroscedasticity detected")


def test_length_mismatch():
    d = tiny_dataset(10)
    with pytest.raises(ValueError, match="residuals has 3 entries"):
        bp_style_test(d, np.ones(3))


def test_plot_files(tmp_path, noisy_dataset):
    fit = stage1_fit(noisy_dataset)
    paths = emit_plot_data(noisy_dataset, fit.residuals, fit.fitted, tmp_path / "pts")
    assert tuple(paths) == PLOT_FILES
    assert len(list((tmp_path / "pts").glob("*.points"))) == 6
    xy = np.loadtxt(paths["yield_vs_nitrogen"])
    assert xy.shape == (noisy_dataset.n, 2)
    np.testing.assert_array_equal(xy[:, 0], noisy_dataset.raw_nitrogen)
    np.testing.assert_array_equal(xy[:, 1], noisy_dataset.yield_)
    rv = np.loadtxt(paths["resid_vs_fitted"])
    np.testing.assert_array_equal(rv[:, 1], fit.residuals)
    first = paths["resid2_vs_water"].read_text().splitlines()[0].split()
    assert len(first) == 2 and not first[0].startswith("#")


def test_plot_files_empty_dataset(tmp_path):
    empty = Dataset.from_raw([], [], [], [])
    with pytest.raises(DataError, match="no observations"):
        emit_plot_data(empty, [], [], tmp_path)
