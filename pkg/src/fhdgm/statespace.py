"""Kalman filter, RTS smoother and lag-one smoother with missing observations.

State x_t (dimension m) follows x_t = diag(a) x_{t-1} + eta_t, eta_t ~ N(0, Q),
observations y_t = H_t x_t + o_t + eps_t with eps_t ~ N(0, diag(r_t)).
Missing entries of y_t (NaN) are deleted from y_t, H_t, o_t and r_t before
the update, so a time with no observed entry is a pure prediction step.

The measurement update is computed in information form through the
Cholesky factor of I + L' H' R^{-1} H L (P_pred = L L'), which keeps the
filtered covariance symmetric positive semidefinite by construction and
costs O(m^3 + N_t m^2) whatever the number of observations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .errors import NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class StateSpaceSystem:
    y: Sequence[np.ndarray]
    H: Sequence[np.ndarray]
    offset: Sequence[np.ndarray]
    r: Sequence[np.ndarray]
    transition: np.ndarray
    Q: np.ndarray
    mu0: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        m = self.m
        if not (len(self.y) == len(self.H) == len(self.offset) == len(self.r)):
            raise ValueError("y, H, offset and r must have one entry per time")
        if self.Q.shape != (m, m) or self.Sigma0.shape != (m, m) or self.mu0.shape != (m,):
            raise ValueError("Q, Sigma0 and mu0 must match the state dimension")
        for t, (y, H, o, r) in enumerate(zip(self.y, self.H, self.offset, self.r), start=1):
            if H.shape != (y.size, m) or o.shape != y.shape or r.shape != y.shape:
                raise ValueError(f"inconsistent observation shapes at t={t}")

    @property
    def m(self) -> int:
        return self.transition.size

    @property
    def T(self) -> int:
        return len(self.y)


@dataclass
class FilterResult:
    x_pred: np.ndarray      # (T+1, m); row 0 unused
    P_pred: np.ndarray      # (T+1, m, m)
    x_filt: np.ndarray      # (T+1, m); row 0 = mu0
    P_filt: np.ndarray
    loglik_t: np.ndarray    # (T,)
    n_obs_t: np.ndarray

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_t))


@dataclass
class SmootherOutput:
    z_smooth: np.ndarray    # (T+1, m), row t = E[x_t | Y]
    P_smooth: np.ndarray    # (T+1, m, m) or (T+1, k, k) for a covariance subset
    P_lag: np.ndarray | None  # (T, m, m); entry t-1 = Cov(x_t, x_{t-1} | Y)
    loglik: float
    loglik_t: np.ndarray
    cov_index: np.ndarray | None = None


def _sym(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _chol(P: np.ndarray, t: int, what: str) -> np.ndarray:
    try:
        return cholesky(P, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{what} covariance not positive definite at t={t}") from None


def filter_steps(sys: StateSpaceSystem) -> Iterator[tuple]:
    """Yield (x_pred, L_pred, P_pred, x_filt, P_filt, loglik_t, n_obs, innov) for t = 1..T.

    ``innov`` is (e, HL, r) over the observed rows, with innovation
    covariance F = HL HL' + diag(r), or None when nothing is observed.
    """
    a = np.asarray(sys.transition, dtype=float)
    m = a.size
    I = np.eye(m)
    x = np.asarray(sys.mu0, dtype=float)
    P = np.asarray(sys.Sigma0, dtype=float)
    for t in range(1, sys.T + 1):
        x_pred = a * x
        P_pred = _sym(a[:, None] * P * a[None, :] + sys.Q)
        Lp = _chol(P_pred, t, "predicted")
        y = sys.y[t - 1]
        obs = ~np.isnan(y)
        n_obs = int(np.count_nonzero(obs))
        if n_obs == 0:
            x, P, ll, innov = x_pred, P_pred, 0.0, None
        else:
            H = sys.H[t - 1][obs]
            rr = sys.r[t - 1][obs]
            e = y[obs] - sys.offset[t - 1][obs] - H @ x_pred
            HL = H @ Lp
            innov = (e, HL, rr)
            W = HL / rr[:, None]
            Lm = _chol(I + HL.T @ W, t, "update")
            B = solve_triangular(Lm, Lp.T, lower=True, check_finite=False)
            P = B.T @ B
            bvec = H.T @ (e / rr)
            x = x_pred + P @ bvec
            logdet = float(np.sum(np.log(rr)) + 2.0 * np.sum(np.log(np.diag(Lm))))
            quad = float(e @ (e / rr) - bvec @ P @ bvec)
            ll = -0.5 * (n_obs * LOG_2PI + logdet + quad)
            if not np.isfinite(ll) or not np.all(np.isfinite(x)):
                raise NumericalError(f"non-finite filter quantity at t={t}")
        yield x_pred, Lp, P_pred, x, P, ll, n_obs, innov


def innovation_logliks(sys: StateSpaceSystem) -> Iterator[float]:
    """Per-time innovation log-densities log p(y_t | y_1..y_{t-1}), lazily."""
    for step in filter_steps(sys):
        yield step[5]


def innovations(sys: StateSpaceSystem) -> Iterator[tuple[np.ndarray, np.ndarray] | None]:
    """Per-time innovation e_t and its covariance F_t over observed rows, lazily."""
    for step in filter_steps(sys):
        innov = step[7]
        if innov is None:
            yield None
        else:
            e, HL, r = innov
            F = HL @ HL.T
            F[np.diag_indices_from(F)] += r
            yield e, F


def kalman_filter(sys: StateSpaceSystem) -> FilterResult:
    T, m = sys.T, sys.m
    x_pred = np.zeros((T + 1, m))
    P_pred = np.zeros((T + 1, m, m))
    x_filt = np.zeros((T + 1, m))
    P_filt = np.zeros((T + 1, m, m))
    x_filt[0] = sys.mu0
    P_filt[0] = sys.Sigma0
    ll = np.zeros(T)
    n_obs = np.zeros(T, dtype=int)
    for t, (xp, _, Pp, xf, Pf, l, k, _) in enumerate(filter_steps(sys), start=1):
        x_pred[t], P_pred[t], x_filt[t], P_filt[t], ll[t - 1], n_obs[t - 1] = xp, Pp, xf, Pf, l, k
    return FilterResult(x_pred, P_pred, x_filt, P_filt, ll, n_obs)


def kalman_smoother(sys: StateSpaceSystem, cov_index: Sequence[int] | None = None) -> SmootherOutput:
    """RTS smoother with lag-one covariances.

    With ``cov_index`` only the sub-block of each smoothed covariance for
    those state indices is kept and lag-one covariances are skipped, which
    bounds memory when only a few states are of interest.
    """
    T, m = sys.T, sys.m
    a = np.asarray(sys.transition, dtype=float)
    x_pred = np.zeros((T + 1, m))
    L_pred = np.zeros((T + 1, m, m))
    x_filt = np.zeros((T + 1, m))
    P_filt = np.zeros((T + 1, m, m))
    x_filt[0] = sys.mu0
    P_filt[0] = sys.Sigma0
    ll = np.zeros(T)
    for t, (xp, Lp, _, xf, Pf, l, _, _) in enumerate(filter_steps(sys), start=1):
        x_pred[t], L_pred[t], x_filt[t], P_filt[t], ll[t - 1] = xp, Lp, xf, Pf, l

    idx = None if cov_index is None else np.asarray(cov_index, dtype=int)
    k = m if idx is None else idx.size
    zs = np.zeros((T + 1, m))
    Ps_out = np.zeros((T + 1, k, k))
    P_lag = None if idx is not None else np.zeros((T, m, m))

    zs[T] = x_filt[T]
    Ps = P_filt[T]
    Ps_out[T] = Ps if idx is None else Ps[np.ix_(idx, idx)]
    I = np.eye(m)
    for t in range(T - 1, -1, -1):
        # J = P_f F' P_pred^{-1}; F diagonal and P_pred symmetric
        J = cho_solve((L_pred[t + 1], True), a[:, None] * P_filt[t], check_finite=False).T
        zs[t] = x_filt[t] + J @ (zs[t + 1] - x_pred[t + 1])
        IJF = I - J * a[None, :]
        Ps_next = Ps
        Ps = _sym(IJF @ P_filt[t] @ IJF.T + J @ (sys.Q + Ps_next) @ J.T)
        if P_lag is not None:
            P_lag[t] = Ps_next @ J.T
        Ps_out[t] = Ps if idx is None else Ps[np.ix_(idx, idx)]
    return SmootherOutput(zs, Ps_out, P_lag, float(ll.sum()), ll, idx)


@dataclass
class SufficientStats:
    S11: np.ndarray
    S10: np.ndarray
    S00: np.ndarray
    X0: np.ndarray              # E[x_0 x_0' | Y]
    resid: list[np.ndarray]     # y - o - H E[x_t|Y] over observed rows
    hph: list[np.ndarray]       # diag(H P_{t|T} H') over observed rows
    observed: list[np.ndarray]  # boolean masks per time
    T: int

    def residual_moments(self) -> list[np.ndarray]:
        """E[(y - o - H x_t)^2 | Y] per observed row."""
        return [e * e + d for e, d in zip(self.resid, self.hph)]


def expected_sufficient_stats(out: SmootherOutput, sys: StateSpaceSystem) -> SufficientStats:
    if out.P_lag is None:
        raise ValueError("sufficient statistics need full smoothed covariances")
    z, P = out.z_smooth, out.P_smooth
    T = sys.T
    S11 = z[1:].T @ z[1:] + P[1:].sum(axis=0)
    S00 = z[:-1].T @ z[:-1] + P[:-1].sum(axis=0)
    S10 = z[1:].T @ z[:-1] + out.P_lag.sum(axis=0)
    X0 = np.outer(z[0], z[0]) + P[0]
    resid, hph, observed = [], [], []
    for t in range(1, T + 1):
        y = sys.y[t - 1]
        obs = ~np.isnan(y)
        H = sys.H[t - 1][obs]
        resid.append(y[obs] - sys.offset[t - 1][obs] - H @ z[t])
        hph.append(np.sum((H @ P[t]) * H, axis=1))
        observed.append(obs)
    return SufficientStats(S11, S10, S00, X0, resid, hph, observed, T)
