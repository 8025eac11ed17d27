from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhdgm.statespace import (
    SmootherOutput, StateSpaceSystem, expected_sufficient_stats, innovations, kalman_filter, kalman_smoother,
)
from oracles import joint_conditional, joint_loglik, random_system


def _scalar(y):
    one = np.ones(1)
    return StateSpaceSystem([np.array([y])], [np.ones((1, 1))], [np.zeros(1)], [one],
                            np.zeros(1), np.eye(1), np.zeros(1), np.eye(1))


def test_scalar_closed_form():
    assert kalman_filter(_scalar(0.0)).loglik == pytest.approx(-0.5 * np.log(2 * np.pi * 2), abs=1e-15)


def test_missing_is_pure_prediction():
    f = kalman_filter(_scalar(np.nan))
    assert f.loglik == 0.0
    np.testing.assert_array_equal(f.x_filt[1], f.x_pred[1])
    np.testing.assert_array_equal(f.P_filt[1], f.P_pred[1])


def test_random_system_against_joint_gaussian():
    rng = np.random.default_rng(7)
    sys = random_system(rng, n=3, p=2, T=4, q=2, missing=0.3)
    ref = joint_loglik(sys)
    assert abs(kalman_filter(sys).loglik - ref) <= 1e-8 * abs(ref)


def test_smoother_against_joint_gaussian():
    rng = np.random.default_rng(8)
    sys = random_system(rng, n=2, p=2, T=3, q=2, missing=0.2)
    means, covs, lags = joint_conditional(sys)
    out = kalman_smoother(sys)
    np.testing.assert_allclose(out.z_smooth, means, atol=1e-8)
    np.testing.assert_allclose(out.P_smooth, covs, atol=1e-8)
    np.testing.assert_allclose(out.P_lag, lags, atol=1e-8)


def test_single_time_smoothed_equals_filtered():
    sys = random_system(np.random.default_rng(1), T=1)
    f, s = kalman_filter(sys), kalman_smoother(sys)
    np.testing.assert_allclose(s.z_smooth[1], f.x_filt[1], atol=1e-14)
    np.testing.assert_allclose(s.P_smooth[1], f.P_filt[1], atol=1e-14)


def test_all_missing_propagates_prior():
    sys = random_system(np.random.default_rng(2), T=4, missing=1.0)
    s = kalman_smoother(sys)
    for t in range(sys.T + 1):
        np.testing.assert_allclose(s.z_smooth[t], sys.transition ** t * sys.mu0, atol=1e-13)
    assert s.loglik == 0.0


def test_cov_index_subset_matches_full():
    sys = random_system(np.random.default_rng(3), n=3, p=2, T=5)
    full = kalman_smoother(sys)
    idx = [4, 1]
    sub = kalman_smoother(sys, cov_index=idx)
    np.testing.assert_allclose(sub.P_smooth, full.P_smooth[:, idx][:, :, idx], atol=1e-13)
    np.testing.assert_allclose(sub.z_smooth, full.z_smooth, atol=1e-13)


def test_innovations_reproduce_loglik():
    sys = random_system(np.random.default_rng(4), T=5, missing=0.4)
    total = 0.0
    for item in innovations(sys):
        if item is None:
            continue
        e, F = item
        _, logdet = np.linalg.slogdet(F)
        total += -0.5 * (e.size * np.log(2 * np.pi) + logdet + e @ np.linalg.solve(F, e))
    assert total == pytest.approx(kalman_filter(sys).loglik, rel=1e-10)


def test_sufficient_stats_trivial():
    out = SmootherOutput(np.zeros((3, 1)), np.stack([np.eye(1)] * 3), np.zeros((2, 1, 1)), 0.0, np.zeros(2))
    sys = StateSpaceSystem([np.array([np.nan])] * 2, [np.ones((1, 1))] * 2, [np.zeros(1)] * 2,
                           [np.ones(1)] * 2, np.zeros(1), np.eye(1), np.zeros(1), np.eye(1))
    st_ = expected_sufficient_stats(out, sys)
    assert st_.S11[0, 0] == 2.0 and st_.S00[0, 0] == 2.0 and st_.S10[0, 0] == 0.0


def test_sufficient_stats_loop_oracle():
    sys = random_system(np.random.default_rng(5), n=2, p=2, T=4)
    out = kalman_smoother(sys)
    stats = expected_sufficient_stats(out, sys)
    z, P, L = out.z_smooth, out.P_smooth, out.P_lag
    S11 = S10 = S00 = 0
    for t in range(1, sys.T + 1):
        S11 = S11 + np.outer(z[t], z[t]) + P[t]
        S00 = S00 + np.outer(z[t - 1], z[t - 1]) + P[t - 1]
        S10 = S10 + np.outer(z[t], z[t - 1]) + L[t - 1]
    np.testing.assert_allclose(stats.S11, S11, atol=1e-12)
    np.testing.assert_allclose(stats.S10, S10, atol=1e-12)
    np.testing.assert_allclose(stats.S00, S00, atol=1e-12)
    for t in range(sys.T):
        obs = ~np.isnan(sys.y[t])
        H = sys.H[t][obs]
        e = sys.y[t][obs] - sys.offset[t][obs] - H @ z[t + 1]
        expect = e ** 2 + np.diag(H @ P[t + 1] @ H.T)
        np.testing.assert_allclose(stats.residual_moments()[t], expect, atol=1e-12)


def test_small_noise_residual_moments_vanish():
    rng = np.random.default_rng(6)
    sys = random_system(rng, n=2, p=1, T=6, q=1, missing=0.0)
    sys = StateSpaceSystem(sys.y, sys.H, sys.offset, [np.full_like(r, 1e-12) for r in sys.r],
                           sys.transition, sys.Q, sys.mu0, sys.Sigma0)
    stats = expected_sufficient_stats(kalman_smoother(sys), sys)
    assert max(float(np.max(m)) for m in stats.residual_moments()) < 1e-8


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_smoothed_covariances_psd(seed):
    sys = random_system(np.random.default_rng(seed), n=2, p=2, T=4)
    out = kalman_smoother(sys)
    for P in out.P_smooth:
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        assert np.linalg.eigvalsh(P).min() > -1e-10
