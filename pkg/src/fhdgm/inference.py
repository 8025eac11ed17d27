"""Parameter uncertainty: truncated observed information, chi-square tests, bands.

I_t = sum_{s<=t} i_s accumulates per-time information increments. Two
increments are available, both from central finite differences of
perturbed Kalman filters:

* ``innovations`` (default): the Gaussian information of the time-s
  innovation, de' F^{-1} de + tr(F^{-1} dF F^{-1} dF) / 2, where e_s and F_s
  are the innovation and its covariance;
* ``opg``: the outer product u_s u_s' of the score of log p(y_s | past).

The truncated covariance is ((T / t*) I_{t*})^{-1}, where t* is the first
t >= t_min at which the relative Frobenius change of ((T / t) I_t)^{-1}
drops below delta.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import gammaincc
from scipy.stats import norm

from .basis import BasisSpec, basis_matrix
from .errors import ChiSquareTestError, ConditioningError, NumericalError
from .estimation import FittedModel, ModelParams
from .statespace import innovation_logliks, innovations

FD_STEP = 1e-5
FD_FLOOR = 1e-2
T_MIN = 10
METHODS = ("innovations", "opg")


@dataclass
class VarCov:
    matrix: np.ndarray
    t_star: int
    delta_used: float
    truncated: bool
    labels: list[tuple[str, int]] = field(default_factory=list)
    information: np.ndarray | None = None
    method: str = "innovations"

    def standard_errors(self) -> np.ndarray:
        """Square roots of the diagonal after flooring negative eigenvalues at 0."""
        w, V = np.linalg.eigh(0.5 * (self.matrix + self.matrix.T))
        fixed = (V * np.maximum(w, 0.0)) @ V.T
        return np.sqrt(np.maximum(np.diag(fixed), 0.0))


def _steps(psi: np.ndarray) -> np.ndarray:
    return FD_STEP * np.maximum(np.abs(psi), FD_FLOOR)


class _PerturbedFilters:
    """Filters at psi +/- h_l e_l for every parameter l, advanced together in t.

    Each perturbed model keeps its own running filter, so stopping at t*
    costs t* filter steps per perturbation and nothing more.
    """

    def __init__(self, model: FittedModel, method: str, workers: int = 1):
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        self.method = method
        self.designs = model.designs()
        self.psi = model.params.vector()
        self.h = _steps(self.psi)
        self.T = model.ds.T
        self.labels = model.params.labels(model.ds.covariate_names)
        source = innovations if method == "innovations" else innovation_logliks
        self._gens = []
        for l in range(self.psi.size):
            pair = []
            for sign in (1.0, -1.0):
                vec = self.psi.copy()
                vec[l] += sign * self.h[l]
                try:
                    params = model.params.with_vector(vec)
                except ValueError as exc:
                    raise NumericalError(f"cannot perturb parameter {self.labels[l]}: {exc}") from None
                pair.append([source(d.system(params)) for d in self.designs])
            self._gens.append(pair)
        self._base = (
            [innovations(d.system(model.params)) for d in self.designs] if method == "innovations" else None
        )
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()

    def _next(self, l: int) -> list:
        return [[next(g) for g in self._gens[l][s]] for s in range(2)]

    def _check(self, rows: np.ndarray, t: int) -> None:
        ok = np.isfinite(rows).reshape(rows.shape[0], -1).all(axis=1)
        if not ok.all():
            bad = int(np.flatnonzero(~ok)[0])
            raise NumericalError(f"non-finite score for parameter {self.labels[bad]} at t={t}")

    def _score(self, t: int, outs) -> np.ndarray:
        u = np.array([(sum(o[0]) - sum(o[1])) / (2.0 * hl) for o, hl in zip(outs, self.h)])
        self._check(u[:, None], t)
        return u

    def _fisher(self, t: int, outs) -> np.ndarray:
        P = self.psi.size
        info = np.zeros((P, P))
        for k, gen in enumerate(self._base):
            base = next(gen)
            if base is None:
                continue
            F0 = base[1]
            de = np.array([(o[0][k][0] - o[1][k][0]) / (2.0 * hl) for o, hl in zip(outs, self.h)])
            self._check(de, t)
            L = cholesky(F0, lower=True, check_finite=False)
            W = solve_triangular(L, de.T, lower=True, check_finite=False)
            V = np.empty((P, F0.size))
            for l, (o, hl) in enumerate(zip(outs, self.h)):
                dF = (o[0][k][1] - o[1][k][1]) / (2.0 * hl)
                X = solve_triangular(L, dF, lower=True, check_finite=False)
                V[l] = solve_triangular(L, X.T, lower=True, check_finite=False).ravel()
            self._check(V, t)
            info += W.T @ W + 0.5 * (V @ V.T)
        return info

    def __iter__(self):
        """Yield (i_t, u_t) for t = 1..T; u_t is None for the innovations form."""
        idx = range(self.psi.size)
        for t in range(1, self.T + 1):
            if self._pool is not None:
                outs = list(self._pool.map(self._next, idx))
            else:
                outs = [self._next(l) for l in idx]
            if self.method == "opg":
                u = self._score(t, outs)
                yield np.outer(u, u), u
            else:
                yield self._fisher(t, outs), None


def scores(model: FittedModel, t_max: int | None = None, workers: int = 1) -> np.ndarray:
    """(t_max, |psi|) array of per-time innovation scores by central differences."""
    t_max = model.ds.T if t_max is None else t_max
    out = []
    if t_max > 0:
        stream = _PerturbedFilters(model, "opg", workers)
        try:
            for t, (_, u) in enumerate(stream, start=1):
                out.append(u)
                if t >= t_max:
                    break
        finally:
            stream.close()
    return np.array(out).reshape(-1, model.params.vector().size)


def observed_information(model: FittedModel, t_max: int | None = None, workers: int = 1,
                         method: str = "innovations") -> np.ndarray:
    """I_{t_max}: information increments summed over t = 1..t_max."""
    t_max = model.ds.T if t_max is None else t_max
    P = model.params.vector().size
    info = np.zeros((P, P))
    if t_max <= 0:
        return info
    stream = _PerturbedFilters(model, method, workers)
    try:
        for t, (i_t, _) in enumerate(stream, start=1):
            info += i_t
            if t >= t_max:
                break
    finally:
        stream.close()
    return info


def _try_inverse(M: np.ndarray, rcond: float = 1e-12) -> np.ndarray | None:
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    if w.size == 0 or w[-1] <= 0 or w[0] <= rcond * w[-1]:
        return None
    inv = np.linalg.inv(M)
    return 0.5 * (inv + inv.T)


def _missing_at_end_warning(designs, T: int) -> None:
    counts = np.zeros(T)
    for d in designs:
        counts += np.array([np.count_nonzero(o) for o in d.observed])
    if counts.max() <= 0:
        return
    rate = 1.0 - counts / counts.max()
    tail = rate[int(np.floor(0.9 * rate.size)):]
    if rate.mean() > 0 and tail.size and tail.mean() > 2.0 * rate.mean():
        warnings.warn(
            "missing data concentrate at the end of the series; the truncated "
            "information may overstate precision",
            stacklevel=3,
        )


def varcov_truncated(model: FittedModel, delta: float, t_min: int = T_MIN, workers: int = 1,
                     method: str = "innovations") -> VarCov:
    """Covariance of psi-hat from the information accumulated up to t*."""
    if not delta >= 0:
        raise ValueError("delta must be >= 0")
    T = model.ds.T
    stream = _PerturbedFilters(model, method, workers)
    _missing_at_end_warning(stream.designs, T)
    P = stream.psi.size
    info = np.zeros((P, P))
    prev = None
    try:
        for t, (i_t, _) in enumerate(stream, start=1):
            info += i_t
            if t >= min(t_min, T) - 1 and t < T:
                sig = _try_inverse((T / t) * info)
                if t >= t_min and sig is not None and prev is not None:
                    ratio = np.linalg.norm(sig - prev, "fro") / np.linalg.norm(sig, "fro")
                    if ratio <= delta:
                        return VarCov(sig, t, delta, True, stream.labels, info.copy(), method)
                prev = sig
    finally:
        stream.close()
    full = _try_inverse(info)
    if full is None:
        w = np.linalg.eigvalsh(0.5 * (info + info.T))
        raise ConditioningError(
            f"information matrix is singular at T={T} (smallest eigenvalue {w[0]:.3g})",
            float(w[0]) if w.size else None,
        )
    return VarCov(full, T, delta, False, stream.labels, info, method)


# ---------------------------------------------------------------------------
# Tests and bands
# ---------------------------------------------------------------------------

def chi2_sf(x: float, df: int) -> float:
    """Upper tail of chi-square via the regularised incomplete gamma function."""
    if x <= 0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


@dataclass
class Chi2Row:
    name: str
    statistic: float
    df: int
    p_value: float
    error: str | None = None


@dataclass
class Chi2Report:
    rows: list[Chi2Row]

    def format(self) -> str:
        lines = [f"{'covariate':<24}{'chi2':>14}{'df':>5}{'p-value':>12}"]
        for r in self.rows:
            if r.error:
                lines.append(f"{r.name:<24}{'--':>14}{r.df:>5}{'--':>12}")
            else:
                lines.append(f"{r.name:<24}{r.statistic:>14.4f}{r.df:>5}{r.p_value:>12.4g}")
        return "\n".join(lines)


def beta_indices(params: ModelParams, j: int, p_beta: int) -> np.ndarray:
    start = params.c_eps.size + j * p_beta
    return np.arange(start, start + p_beta)


def wald(c: np.ndarray, cov: np.ndarray) -> float:
    return float(c @ np.linalg.solve(cov, c))


def beta_chi2_test(vc: VarCov, params: ModelParams, covariate_names: Sequence[str]) -> Chi2Report:
    """Wald test of beta_j(h) = 0 for each covariate, df = p_beta."""
    b = len(covariate_names)
    rows = []
    if b == 0:
        return Chi2Report(rows)
    p_beta = params.c_beta.size // b
    for j, name in enumerate(covariate_names):
        idx = beta_indices(params, j, p_beta)
        c = params.c_beta[j * p_beta:(j + 1) * p_beta]
        if not np.any(c != 0):
            rows.append(Chi2Row(name, 0.0, p_beta, 1.0))
            continue
        cov = vc.matrix[np.ix_(idx, idx)]
        if _try_inverse(cov) is None:
            rows.append(Chi2Row(name, float("nan"), p_beta, float("nan"),
                                error=f"singular covariance block for {name!r}"))
            continue
        stat = max(wald(c, cov), 0.0)
        rows.append(Chi2Row(name, stat, p_beta, chi2_sf(stat, p_beta)))
    return Chi2Report(rows)


def raise_on_errors(report: Chi2Report) -> None:
    for r in report.rows:
        if r.error:
            raise ChiSquareTestError(r.error)


@dataclass
class BandTable:
    """Pointwise estimates and bands on a grid of h; one entry per function."""

    h: np.ndarray
    names: list[str]
    estimate: np.ndarray          # (k, len(h))
    se: np.ndarray
    levels: tuple[float, ...]
    lower: dict[float, np.ndarray]
    upper: dict[float, np.ndarray]

    def rows(self):
        for k, name in enumerate(self.names):
            for i, h in enumerate(self.h):
                yield (h, name, self.estimate[k, i], self.se[k, i],
                       *[v for lev in self.levels for v in (self.lower[lev][k, i], self.upper[lev][k, i])])


def _check_levels(levels):
    levels = tuple(float(l) for l in levels)
    if any(not 0 < l < 1 for l in levels):
        raise ValueError("confidence levels must lie in (0, 1)")
    return levels


def beta_confidence_bands(
    vc: VarCov,
    params: ModelParams,
    beta_basis: BasisSpec,
    h_grid,
    levels=(0.90, 0.95, 0.99),
    covariate_names: Sequence[str] = (),
) -> BandTable:
    levels = _check_levels(levels)
    h = np.asarray(h_grid, dtype=float)
    Phi = basis_matrix(beta_basis, h)
    p_beta = Phi.shape[1]
    b = params.c_beta.size // p_beta
    names = list(covariate_names) or [f"beta{j}" for j in range(b)]
    est = np.zeros((b, h.size))
    se = np.zeros((b, h.size))
    for j in range(b):
        idx = beta_indices(params, j, p_beta)
        cov = vc.matrix[np.ix_(idx, idx)]
        est[j] = Phi @ params.c_beta[j * p_beta:(j + 1) * p_beta]
        se[j] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Phi, cov, Phi), 0.0))
    lower, upper = {}, {}
    for lev in levels:
        z = norm.ppf(0.5 * (1.0 + lev))
        lower[lev], upper[lev] = est - z * se, est + z * se
    return BandTable(h, names, est, se, levels, lower, upper)


def sigma_confidence_bands(vc: VarCov, params: ModelParams, sigma_basis: BasisSpec, h_grid,
                           levels=(0.90, 0.95, 0.99)) -> BandTable:
    """sigma^2_eps(h) with bands built on the log scale; se by the delta method."""
    levels = _check_levels(levels)
    h = np.asarray(h_grid, dtype=float)
    Phi = basis_matrix(sigma_basis, h)
    idx = np.arange(params.c_eps.size)
    cov = vc.matrix[np.ix_(idx, idx)]
    log_est = Phi @ params.c_eps
    se_log = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Phi, cov, Phi), 0.0))
    est = np.exp(log_est)
    lower, upper = {}, {}
    for lev in levels:
        z = norm.ppf(0.5 * (1.0 + lev))
        lower[lev] = np.exp(log_est - z * se_log)[None, :]
        upper[lev] = np.exp(log_est + z * se_log)[None, :]
    return BandTable(h, ["sigma2_eps"], est[None, :], (est * se_log)[None, :], levels, lower, upper)
