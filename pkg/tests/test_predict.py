from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhdgm.basis import BasisTriple
from fhdgm.errors import DomainError
from fhdgm.estimation import FittedModel, ModelParams, make_layout, simulate
from fhdgm.ingest import split_validation
from fhdgm.predict import (
    KrigingGrid, KrigingOptions, krige, krige_block, nearest_neighbors, validate, validation_metrics,
)
from conftest import H5


def test_nearest_neighbors_examples():
    sites = np.column_stack([np.zeros(5), np.arange(5.0)])
    assert sorted(nearest_neighbors(sites, [0, 1.6], 5, "km").tolist()) == [0, 1, 2, 3, 4]
    assert nearest_neighbors(sites, [0, 3.0], 1, "km").tolist() == [3]
    assert nearest_neighbors(sites, [0, 1.6], 2, "km").tolist() == [2, 1]


def test_ties_break_by_index():
    sites = np.array([[0, 1.0], [0, -1.0], [1.0, 0]])
    assert nearest_neighbors(sites, [0, 0], 2, "km").tolist() == [0, 1]


def test_grid_layout_row_major():
    g = KrigingGrid.regular(40.0, 40.0 + 34 * 0.1, 0.1, 8.0, 8.0 + 42 * 0.1, 0.1)
    assert g.shape == (35, 43) and g.m == 35 * 43
    np.testing.assert_allclose(g.coords[1], [40.0, 8.1])
    np.testing.assert_allclose(g.coords[43], [40.1, 8.0])


@pytest.fixture(scope="module")
def fitted():
    bt = BasisTriple.bspline((0.0, 1.0), 2, 2, p_beta=2)
    params = ModelParams([np.log(0.05)], [1.0, -0.5], [0.7, 0.4], [1.0, 0.5], [3.0, 2.0])
    ds = simulate(make_layout(12, 8, H5, seed=5, missing=0.2), bt, params, seed=6)
    return FittedModel(ds, bt, params)


def _targets(seed=0, m=7):
    return np.random.default_rng(seed).uniform(0, 10, (m, 2))


def test_block_and_worker_invariance(fitted):
    grid = KrigingGrid(_targets(), "km")
    ref = krige(fitted, grid, KrigingOptions(), h=H5)
    for bs, w in [(1, 1), (3, 2), (7, 3), (2, 4)]:
        out = krige(fitted, grid, KrigingOptions(block_size=bs, workers=w), h=H5)
        assert np.max(np.abs(out.f_hat - ref.f_hat)) <= 1e-12
        assert np.max(np.abs(out.var_f - ref.var_f)) <= 1e-12


def test_single_target_grid_equals_block(fitted):
    tgt = _targets(1, 1)
    a = krige(fitted, KrigingGrid(tgt, "km"), h=H5)
    b = krige_block(fitted, tgt, h=H5)
    np.testing.assert_array_equal(a.f_hat, b.f_hat)


def test_target_at_site_matches_fit_smoother(fitted):
    from fhdgm.estimation import ModelDesign
    from fhdgm.statespace import kalman_smoother

    d = ModelDesign(fitted.ds, fitted.bases)
    sm = kalman_smoother(d.system(fitted.params))
    out = krige_block(fitted, fitted.ds.coords()[[3]], h=H5)
    n = fitted.ds.n
    np.testing.assert_allclose(out.z_hat[0], sm.z_smooth[1:, [3, n + 3]], atol=1e-12)


def test_interpolation_limit():
    bt = BasisTriple.bspline((0.0, 1.0), 2, 2, p_beta=1)
    params = ModelParams([np.log(1e-14)], [0.7], [0.7, 0.4], [1.0, 0.5], [3.0, 2.0])
    h2 = np.array([0.0, 1.0])       # one observation per latent basis function
    ds = simulate(make_layout(6, 5, h2, seed=1), bt, params, seed=2)
    model = FittedModel(ds, bt, params)
    X = np.ones((ds.n, ds.T, h2.size, 1))
    out = krige(model, KrigingGrid(ds.coords(), "km"), h=h2, covariates=X)
    for k, rec in enumerate(ds.records):
        i = int(ds.record_site[k])
        np.testing.assert_allclose(out.f_hat[i, rec.time_index - 1], rec.y, atol=1e-6)


def test_screening_of_a_far_site():
    bt = BasisTriple.bspline((0.0, 1.0), 2, 2, p_beta=1)
    params = ModelParams([np.log(0.05)], [0.0], [0.7, 0.4], [1.0, 0.5], [1.0, 0.8])
    layout = make_layout(20, 10, H5, extent=(0, 10, 0, 10), seed=3)
    # move site 19 far away from everything else
    from fhdgm.ingest import Coordinate, ProfileDataset, ProfileRecord
    far = Coordinate(500.0, 500.0, "km")
    recs = [ProfileRecord(far, r.time_index, r.h, r.y, r.covariates) if r.site == layout.sites[19] else r
            for r in layout.records]
    layout = ProfileDataset(recs, layout.domain, layout.covariate_names, T=layout.T)
    ds = simulate(layout, bt, params, seed=4)
    model = FittedModel(ds, bt, params)
    tg = KrigingGrid(_targets(2, 5), "km")
    a = krige(model, tg, KrigingOptions(nn_size=19), h=H5)
    b = krige(model, tg, KrigingOptions(nn_size=20), h=H5)
    sd = np.nanstd(np.concatenate([r.y for r in ds.records]))
    assert np.max(np.abs(a.f_hat - b.f_hat)) <= 1e-6 * sd


def test_no_variance_option(fitted):
    out = krige(fitted, KrigingGrid(_targets(), "km"), KrigingOptions(compute_variance=False), h=H5)
    assert out.var_f is None
    assert all(np.isnan(r[5]) for r in out.rows())


def test_kriging_errors(fitted):
    with pytest.raises(DomainError):
        krige(fitted, KrigingGrid(_targets(), "km"), KrigingOptions(nn_size=99))
    with pytest.raises(DomainError):
        krige(fitted, KrigingGrid([[45.0, 9.0]], "deg"))
    with pytest.raises(DomainError):
        krige(fitted, KrigingGrid(_targets(), "km"), t=[0])


def test_variance_nonnegative_and_smaller_near_sites(fitted):
    site = fitted.ds.coords()[0]
    tg = KrigingGrid(np.array([site + 1e-3, [200.0, 200.0]]), "km")
    out = krige(fitted, tg, h=H5)
    assert np.all(out.var_f >= 0)
    assert np.all(out.var_f[0] < out.var_f[1])


# ---------------------------------------------------------------------------
# Validation metrics
# ---------------------------------------------------------------------------

def _obs(seed, N=400, T=10, n=4):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=N), rng.integers(1, T + 1, N), rng.integers(0, n, N), rng.uniform(0, 1, N))


def test_perfect_prediction():
    y, t, s, h = _obs(0)
    rep = validation_metrics(y, y, t, s, h, 10, 4, (0, 1), 5)
    for arr in (rep.mse_t, rep.mse_s, rep.mse_h):
        assert np.all(arr == 0.0)
    for arr in (rep.r2_t, rep.r2_s, rep.r2_h):
        assert np.all(arr == 1.0)


def test_constant_predictor_r2_zero():
    y, t, s, h = _obs(1, N=20000)
    rep = validation_metrics(y, np.full_like(y, y.mean()), t, s, h, 10, 4, (0, 1), 5)
    assert np.all(np.abs(rep.r2_t) < 0.05)


def test_single_bin():
    y, t, s, h = _obs(2)
    yhat = y + np.random.default_rng(3).normal(size=y.size)
    rep = validation_metrics(y, yhat, t, s, h, 10, 4, (0, 1), 1)
    assert rep.h_bar[0] == pytest.approx(h.mean(), rel=1e-14)
    assert rep.mse_h[0] == pytest.approx(np.mean((y - yhat) ** 2), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), B=st.integers(1, 12))
def test_binned_mse_accounting(seed, B):
    y, t, s, h = _obs(seed, N=300)
    h[:3] = [0.0, 1.0, 1.0]     # edges go in the first and last bins
    yhat = y + np.random.default_rng(seed + 1).normal(size=y.size)
    rep = validation_metrics(y, yhat, t, s, h, 10, 4, (0, 1), B)
    assert rep.n_h.sum() == y.size
    pooled = np.nansum(rep.mse_h * rep.n_h) / rep.n_h.sum()
    assert abs(pooled - rep.mse) <= 1e-9 * rep.mse
    assert abs(np.nansum(rep.mse_t * rep.n_t) / rep.n_t.sum() - rep.mse) <= 1e-9 * rep.mse


def test_validate_end_to_end(fitted):
    est, val = split_validation(fitted.ds, [0, 6, 9])
    model = FittedModel(est, fitted.bases, fitted.params)
    rep = validate(model, val, 4)
    assert rep.mse_s.shape == (3,)
    assert rep.n_s.sum() == val.n_observations()
    assert np.isfinite(rep.mse) and rep.mse > 0
