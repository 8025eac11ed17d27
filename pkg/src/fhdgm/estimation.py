"""f-HDGM assembly, EM estimation and forward simulation.

Model, for site s, point h in [h1, h2] and time t:

    y(s,h,t) = x(s,h,t)' beta(h) + phi_z(h)' z(s,t) + eps,  eps ~ N(0, sigma2(h))
    z(s,t)   = G z(s,t-1) + eta(s,t)
    beta_j(h) = phi_beta(h)' c_beta_j,   log sigma2(h) = phi_sigma(h)' c_eps

with G = diag(g) and eta spatially correlated per basis component,
Cov(eta_j(s), eta_j(s')) = v_j exp(-d(s,s') / theta_j).

The latent state is stored basis-major: index j*n + i holds z_j(s_i, t),
which makes the innovation covariance block diagonal with one n x n block
per basis function.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .basis import BasisTriple, basis_matrix
from .errors import BuildError, DomainError, InitializationError, NumericalError
from .ingest import Coordinate, ProfileDataset, ProfileRecord
from .partition import Partitioning, partition_dataset
from .spatial import (
    SpatialParams,
    check_distinct,
    correlation_matrix,
    distance_matrix,
    full_innovation_covariance,
)
from .statespace import (
    SmootherOutput,
    StateSpaceSystem,
    SufficientStats,
    expected_sufficient_stats,
    kalman_smoother,
)

log = logging.getLogger(__name__)

G_BOUND = 0.999
THETA_BRACKET = (1e-3, 3.0)      # multiples of the largest site distance
THETA_RTOL = 1e-4
EPS_FLOOR = 1e-6


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class ModelParams:
    """psi = (c_eps, c_beta, g, v, theta); c_beta is covariate-major."""

    c_eps: np.ndarray
    c_beta: np.ndarray
    g: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        for name in ("c_eps", "c_beta", "g", "v", "theta"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy())
        if self.c_beta.size == 1 and self.c_beta.ndim == 0:
            self.c_beta = self.c_beta.reshape(1)
        if not (self.g.size == self.v.size == self.theta.size):
            raise DomainError("g, v and theta must all have length p")
        if np.any(np.abs(self.g) >= 1.0):
            raise DomainError(f"|g_j| must be < 1 for a stationary latent process, got {self.g}")
        SpatialParams(self.v, self.theta)
        if not all(np.all(np.isfinite(getattr(self, k))) for k in ("c_eps", "c_beta")):
            raise DomainError("coefficients must be finite")

    @property
    def p(self) -> int:
        return self.g.size

    @property
    def spatial(self) -> SpatialParams:
        return SpatialParams(self.v, self.theta)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.c_eps, self.c_beta, self.g, self.v, self.theta])

    def with_vector(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        sizes = [self.c_eps.size, self.c_beta.size, self.p, self.p, self.p]
        parts = np.split(vec, np.cumsum(sizes)[:-1])
        return ModelParams(*parts)

    def labels(self, covariate_names: Sequence[str] = ()) -> list[tuple[str, int]]:
        """(name, index) per entry of :meth:`vector`."""
        out = [("c_eps", i) for i in range(self.c_eps.size)]
        b = len(covariate_names)
        if b:
            pb = self.c_beta.size // b
            out += [(f"c_beta[{name}]", i) for name in covariate_names for i in range(pb)]
        else:
            out += [("c_beta", i) for i in range(self.c_beta.size)]
        out += [("g", i) for i in range(self.p)]
        out += [("v", i) for i in range(self.p)]
        out += [("theta", i) for i in range(self.p)]
        return out

    def beta_block(self, j: int, p_beta: int) -> np.ndarray:
        return self.c_beta[j * p_beta:(j + 1) * p_beta]

    def copy(self) -> "ModelParams":
        return ModelParams(self.c_eps, self.c_beta, self.g, self.v, self.theta)


@dataclass
class EmOptions:
    exit_toll_par: float = 1e-4
    exit_toll_loglike: float = 1e-4
    max_iterations: int = 100
    partitions: Partitioning | None = None
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.exit_toll_par <= 0 or self.exit_toll_loglike <= 0:
            raise DomainError("exit tolerances must be positive")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


# ---------------------------------------------------------------------------
# Design: everything about the data that does not depend on psi
# ---------------------------------------------------------------------------

class ModelDesign:
    """Basis evaluations and state-space layout for one dataset."""

    def __init__(self, ds: ProfileDataset, bases: BasisTriple, D: np.ndarray | None = None):
        if bases.range[0] > ds.domain[0] or bases.range[1] < ds.domain[1]:
            raise BuildError(f"basis range {bases.range} does not cover data domain {ds.domain}")
        self.ds = ds
        self.bases = bases
        self.n = ds.n
        self.p = bases.z.p
        self.p_beta = bases.beta.p
        self.p_sigma = bases.sigma.p
        self.b = ds.b
        self.m = self.n * self.p
        self.T = ds.T
        self.D = distance_matrix(ds.coords(), ds.unit) if D is None else D
        check_distinct(self.D)

        recs = ds.records
        q = np.array([r.q for r in recs], dtype=int)
        rec_of_row = np.repeat(np.arange(len(recs)), q)
        t_of_row = np.repeat(np.array([r.time_index for r in recs], dtype=int), q)
        site_of_row = np.repeat(np.asarray(ds.record_site, dtype=int), q)
        if recs:
            h_all = np.concatenate([r.h for r in recs])
            y_all = np.concatenate([r.y for r in recs])
            X_all = np.vstack([r.covariate_matrix(ds.covariate_names) for r in recs])
        else:
            h_all = y_all = np.zeros(0)
            X_all = np.zeros((0, self.b))
        phi_z = basis_matrix(bases.z, h_all)
        Xt_all = tilde_x(X_all, basis_matrix(bases.beta, h_all))
        Phis_all = basis_matrix(bases.sigma, h_all)
        # stable sort keeps record order (and h order) within each time
        order = np.argsort(t_of_row, kind="stable")
        bounds = np.searchsorted(t_of_row[order], np.arange(1, self.T + 2))
        self.y, self.H, self.Xt, self.Phis = [], [], [], []
        self.site, self.h, self.rec = [], [], []
        cols = np.arange(self.p) * self.n
        for t in range(self.T):
            rows = order[bounds[t]:bounds[t + 1]]
            H = np.zeros((rows.size, self.m))
            H[np.arange(rows.size)[:, None], cols[None, :] + site_of_row[rows][:, None]] = phi_z[rows]
            self.H.append(H)
            self.y.append(y_all[rows])
            self.Xt.append(Xt_all[rows])
            self.Phis.append(Phis_all[rows])
            self.site.append(site_of_row[rows])
            self.h.append(h_all[rows])
            self.rec.append(rec_of_row[rows])
        self.observed = [~np.isnan(y) for y in self.y]
        self.Xt_obs = np.vstack([X[o] for X, o in zip(self.Xt, self.observed)])
        self.Phis_obs = np.vstack([S[o] for S, o in zip(self.Phis, self.observed)])
        self.y_obs = np.concatenate([y[o] for y, o in zip(self.y, self.observed)])

    def check_params(self, params: ModelParams) -> None:
        if params.p != self.p:
            raise BuildError(f"params have p={params.p}, latent basis has {self.p} functions")
        if params.c_beta.size != self.p_beta * self.b:
            raise BuildError(
                f"c_beta has {params.c_beta.size} entries, expected p_beta*b = {self.p_beta}*{self.b}"
            )
        if params.c_eps.size != self.p_sigma:
            raise BuildError(f"c_eps has {params.c_eps.size} entries, expected {self.p_sigma}")

    def system(self, params: ModelParams) -> StateSpaceSystem:
        self.check_params(params)
        Q = full_innovation_covariance(self.D, params.spatial)
        offsets = [X @ params.c_beta for X in self.Xt]
        r = [np.exp(S @ params.c_eps) for S in self.Phis]
        return StateSpaceSystem(
            self.y, self.H, offsets, r, np.repeat(params.g, self.n), Q, np.zeros(self.m), Q.copy()
        )


def tilde_x(X: np.ndarray, phi_beta: np.ndarray) -> np.ndarray:
    """Rows x(h)' (kron) phi_beta(h)', covariate-major."""
    q, b = X.shape
    return (X[:, :, None] * phi_beta[:, None, :]).reshape(q, b * phi_beta.shape[1])


def build_system(ds: ProfileDataset, bases: BasisTriple, params: ModelParams) -> StateSpaceSystem:
    return ModelDesign(ds, bases).system(params)


# ---------------------------------------------------------------------------
# Initial values
# ---------------------------------------------------------------------------

def initialize(ds: ProfileDataset, bases: BasisTriple) -> ModelParams:
    """OLS starting values for c_beta and c_eps; g = 0.5, v = residual variance."""
    if not ds.records:
        raise InitializationError("cannot initialise from an empty dataset")
    design = ModelDesign(ds, bases)
    y, X, S = design.y_obs, design.Xt_obs, design.Phis_obs
    if X.shape[1]:
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise InitializationError(
                "covariate design is rank deficient; use fewer beta basis functions"
            )
        c_beta = np.linalg.lstsq(X, y, rcond=None)[0]
        res = y - X @ c_beta
    else:
        c_beta = np.zeros(0)
        res = y.copy()
    c_eps = np.linalg.lstsq(S, np.log(res ** 2 + EPS_FLOOR), rcond=None)[0]
    p = bases.z.p
    var = float(np.var(res, ddof=1)) if res.size > 1 else 1.0
    var = var if var > 0 else 1.0
    maxd = float(design.D.max()) if ds.n > 1 else 0.0
    theta = maxd / 4.0 if maxd > 0 else 1.0
    return ModelParams(c_eps, c_beta, np.full(p, 0.5), np.full(p, var), np.full(p, theta))


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------

@dataclass
class PartitionEStep:
    smoother: SmootherOutput
    stats: SufficientStats
    loglik: float


def _e_step_one(design: ModelDesign, params: ModelParams) -> PartitionEStep:
    sys = design.system(params)
    out = kalman_smoother(sys)
    return PartitionEStep(out, expected_sufficient_stats(out, sys), out.loglik)


def e_step(designs: Sequence[ModelDesign], params: ModelParams, workers: int = 1) -> list[PartitionEStep]:
    """Smoother per partition; results come back in partition order."""
    if workers > 1 and len(designs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda d: _e_step_one(d, params), designs))
    return [_e_step_one(d, params) for d in designs]


# ---------------------------------------------------------------------------
# M-step
# ---------------------------------------------------------------------------

def _update_measurement(designs, results, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """GLS for c_beta, then exact maximisation in c_eps (Newton with halving)."""
    u_parts, hph_parts = [], []
    for d, res in zip(designs, results):
        st = res.stats
        for t in range(d.T):
            obs = d.observed[t]
            u_parts.append(st.resid[t] + d.Xt[t][obs] @ params.c_beta)
            hph_parts.append(st.hph[t])
    u = np.concatenate(u_parts)
    hph = np.concatenate(hph_parts)
    X = np.vstack([d.Xt_obs for d in designs])
    S = np.vstack([d.Phis_obs for d in designs])

    c_beta = params.c_beta.copy()
    if X.shape[1]:
        w = np.exp(-(S @ params.c_eps))
        XtW = X.T * w
        try:
            c_beta = cho_solve(cho_factor(XtW @ X), XtW @ u)
        except np.linalg.LinAlgError:
            raise NumericalError("covariate normal equations are singular") from None
    m = (u - X @ c_beta) ** 2 + hph

    def q_eps(c):
        eta = S @ c
        return float(np.sum(-0.5 * eta - 0.5 * m * np.exp(-eta)))

    c = params.c_eps.copy()
    current = q_eps(c)
    for _ in range(100):
        eta = S @ c
        wm = m * np.exp(-eta)
        grad = 0.5 * S.T @ (wm - 1.0)
        hess = 0.5 * (S.T * wm) @ S
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-10:
            cand = c + lam * step
            val = q_eps(cand)
            if val >= current:
                break
            lam *= 0.5
        else:
            break
        gain = val - current
        c, current = cand, val
        if gain <= 1e-13 * max(1.0, abs(current)) or np.max(np.abs(lam * step)) < 1e-12:
            break
    return c, c_beta


@dataclass
class _LatentBlock:
    D: np.ndarray
    S11: np.ndarray
    S10: np.ndarray
    S00: np.ndarray
    X0: np.ndarray


def _latent_blocks(designs, results, j: int) -> list[_LatentBlock]:
    out = []
    for d, res in zip(designs, results):
        sl = slice(j * d.n, (j + 1) * d.n)
        st = res.stats
        out.append(_LatentBlock(d.D, st.S11[sl, sl], st.S10[sl, sl], st.S00[sl, sl], st.X0[sl, sl]))
    return out


def profile_latent(blocks: Sequence[_LatentBlock], theta: float, T: int) -> tuple[float, float, float]:
    """Maximise the latent Q-term over (g, v) at fixed theta.

    Returns (Q value, g, v). The initial state z_0 ~ N(0, Sigma_eta) shares
    v and theta, so it contributes one extra "time" to the variance update.
    """
    a10 = a00 = a11 = ax0 = logdet = 0.0
    n = 0
    for blk in blocks:
        R = correlation_matrix(blk.D, theta)
        cf = cho_factor(R, lower=True)
        Rinv = cho_solve(cf, np.eye(R.shape[0]))
        a10 += float(np.sum(Rinv * blk.S10.T))
        a00 += float(np.sum(Rinv * blk.S00))
        a11 += float(np.sum(Rinv * blk.S11))
        ax0 += float(np.sum(Rinv * blk.X0))
        logdet += 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        n += R.shape[0]
    g = float(np.clip(a10 / a00, -G_BOUND, G_BOUND))
    M = a11 - 2.0 * g * a10 + g * g * a00 + ax0
    v = M / (n * (T + 1))
    q = -0.5 * n * (T + 1) * (math.log(v) + 1.0) - 0.5 * (T + 1) * logdet
    return q, g, v


def _golden_max(f, lo: float, hi: float, rtol: float) -> float:
    """Golden-section search for a maximum of f on [lo, hi] (log-theta scale)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > rtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _update_latent(designs, results, params: ModelParams, maxdist: float, T: int):
    p = params.p
    g = params.g.copy()
    v = params.v.copy()
    theta = params.theta.copy()
    for j in range(p):
        blocks = _latent_blocks(designs, results, j)
        q_old, g_old, v_old = profile_latent(blocks, theta[j], T)
        best = (q_old, theta[j], g_old, v_old)
        if maxdist > 0 and any(b.D.shape[0] > 1 for b in blocks):
            lo = math.log(THETA_BRACKET[0] * maxdist)
            hi = math.log(THETA_BRACKET[1] * maxdist)
            lt = _golden_max(lambda x: profile_latent(blocks, math.exp(x), T)[0], lo, hi, THETA_RTOL)
            cand = math.exp(lt)
            q_new, g_new, v_new = profile_latent(blocks, cand, T)
            if q_new > q_old:
                best = (q_new, cand, g_new, v_new)
        _, theta[j], g[j], v[j] = best
    return g, v, theta


def m_step(designs, results, params: ModelParams, maxdist: float) -> ModelParams:
    c_eps, c_beta = _update_measurement(designs, results, params)
    g, v, theta = _update_latent(designs, results, params, maxdist, designs[0].T)
    new = ModelParams(c_eps, c_beta, g, v, theta)
    if not np.all(np.isfinite(new.vector())):
        raise NumericalError(f"non-finite parameter after M-step: {new.vector()}")
    return new


# ---------------------------------------------------------------------------
# EM driver
# ---------------------------------------------------------------------------

@dataclass
class FittedModel:
    """What prediction and inference need: data, bases, estimates, partitions."""

    ds: ProfileDataset
    bases: BasisTriple
    params: ModelParams
    partitions: Partitioning | None = None

    def designs(self) -> list[ModelDesign]:
        return make_designs(self.ds, self.bases, self.partitions)


@dataclass
class FitResult:
    params: ModelParams
    loglik_trace: list[float]
    iterations: int
    exit_reason: str
    smoother: list[SmootherOutput]
    partition_members: list[np.ndarray]
    model: FittedModel
    timings: dict[str, float] = field(default_factory=dict)
    param_trace: list[np.ndarray] = field(default_factory=list)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    def smoothed_states(self) -> np.ndarray:
        """E[z(s_i, t) | Y] as a (T+1, n, p) array in the dataset's site order."""
        n, p = self.model.ds.n, self.params.p
        T = self.model.ds.T
        out = np.zeros((T + 1, n, p))
        for members, sm in zip(self.partition_members, self.smoother):
            k = len(members)
            out[:, members, :] = sm.z_smooth.reshape(T + 1, p, k).transpose(0, 2, 1)
        return out


def make_designs(ds: ProfileDataset, bases: BasisTriple, partitions: Partitioning | None) -> list[ModelDesign]:
    if partitions is None:
        return [ModelDesign(ds, bases)]
    if len(partitions.assignment) != ds.n:
        raise DomainError(f"partitioning covers {len(partitions.assignment)} sites, dataset has {ds.n}")
    D = distance_matrix(ds.coords(), ds.unit)
    subs = partition_dataset(ds, partitions)
    return [
        ModelDesign(sub, bases, D[np.ix_(partitions.members(j), partitions.members(j))])
        for j, sub in enumerate(subs)
    ]


def _loglik_tolerance(value: float) -> float:
    return max(1e-6, 1e-11 * abs(value))


def em_fit(
    ds: ProfileDataset,
    bases: BasisTriple,
    init: ModelParams | None = None,
    opts: EmOptions | None = None,
) -> FitResult:
    """Maximum likelihood by EM with smoother-based E-steps.

    Stops when the largest relative parameter change drops below
    ``exit_toll_par``, the relative log-likelihood change below
    ``exit_toll_loglike``, or after ``max_iterations`` iterations.
    """
    opts = opts or EmOptions()
    init = initialize(ds, bases) if init is None else init
    t0 = time.perf_counter()
    designs = make_designs(ds, bases, opts.partitions)
    for d in designs:
        d.check_params(init)
    members = (
        [np.arange(ds.n)] if opts.partitions is None
        else [opts.partitions.members(j) for j in range(opts.partitions.k)]
    )
    maxdist = float(distance_matrix(ds.coords(), ds.unit).max()) if ds.n > 1 else 0.0
    timings = {"setup": time.perf_counter() - t0, "e_step": 0.0, "m_step": 0.0}

    params = init.copy()
    t1 = time.perf_counter()
    results = e_step(designs, params, opts.workers)
    timings["e_step"] += time.perf_counter() - t1
    trace = [sum(r.loglik for r in results)]
    ptrace = [params.vector()]
    exit_reason = "max_iter"
    iterations = 0
    while iterations < opts.max_iterations:
        iterations += 1
        t1 = time.perf_counter()
        new = m_step(designs, results, params, maxdist)
        timings["m_step"] += time.perf_counter() - t1
        t1 = time.perf_counter()
        results = e_step(designs, new, opts.workers)
        timings["e_step"] += time.perf_counter() - t1
        L = sum(r.loglik for r in results)
        if not math.isfinite(L):
            raise NumericalError(f"log-likelihood became non-finite at iteration {iterations}")
        if L < trace[-1] - _loglik_tolerance(L):
            raise NumericalError(
                f"log-likelihood decreased at iteration {iterations}: {trace[-1]!r} -> {L!r}; "
                f"trace={trace + [L]}"
            )
        trace.append(L)
        old_vec, new_vec = params.vector(), new.vector()
        ptrace.append(new_vec)
        params = new
        denom = np.where(new_vec != 0, np.abs(new_vec), 1.0)
        par_change = float(np.max(np.abs(new_vec - old_vec) / denom))
        ll_change = abs(trace[-1] - trace[-2]) / abs(trace[-1]) if trace[-1] != 0 else abs(trace[-1] - trace[-2])
        log.debug("EM iteration %d: loglik=%.10g par=%.3g ll=%.3g", iterations, L, par_change, ll_change)
        if par_change < opts.exit_toll_par:
            exit_reason = "par_toll"
            break
        if ll_change < opts.exit_toll_loglike:
            exit_reason = "loglik_toll"
            break
    timings["total"] = time.perf_counter() - t0
    model = FittedModel(ds, bases, params, opts.partitions)
    return FitResult(
        params, trace, iterations, exit_reason, [r.smoother for r in results], members, model,
        timings, ptrace,
    )


def loglik(ds: ProfileDataset, bases: BasisTriple, params: ModelParams,
           partitions: Partitioning | None = None) -> float:
    """Observed-data log-likelihood (partitioned when ``partitions`` is given)."""
    from .statespace import innovation_logliks

    return float(sum(sum(innovation_logliks(d.system(params)))
                     for d in make_designs(ds, bases, partitions)))


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def simulate(
    template: ProfileDataset,
    bases: BasisTriple,
    params: ModelParams,
    seed: int,
    return_latent: bool = False,
):
    """Draw y from the model on the site/time/h layout of ``template``.

    Entries missing in the template stay missing. With ``return_latent``
    the (T+1, n, p) latent draw is returned as well.
    """
    rng = np.random.default_rng(seed)
    design = ModelDesign(template, bases)
    sys = design.system(params)
    n, p, T = design.n, design.p, design.T
    Lq = np.linalg.cholesky(sys.Q)
    x = Lq @ rng.standard_normal(design.m)
    states = [x]
    values, rec_ids = [], []
    for t in range(1, T + 1):
        x = sys.transition * x + Lq @ rng.standard_normal(design.m)
        states.append(x)
        mean = sys.offset[t - 1] + design.H[t - 1] @ x
        values.append(mean + np.sqrt(sys.r[t - 1]) * rng.standard_normal(mean.size))
        rec_ids.append(design.rec[t - 1])
    values = np.concatenate(values)
    order = np.argsort(np.concatenate(rec_ids), kind="stable")
    q = [rec.q for rec in template.records]
    ys = np.split(values[order], np.cumsum(q)[:-1]) if q else []
    for y, rec in zip(ys, template.records):
        y[np.isnan(rec.y)] = np.nan
    out = template.with_y(ys)
    if return_latent:
        Z = np.array(states).reshape(T + 1, p, n).transpose(0, 2, 1)
        return out, Z
    return out


def make_layout(
    n_sites: int,
    T: int,
    h_points: Sequence[float],
    domain: tuple[float, float] | None = None,
    unit: str = "km",
    extent: tuple[float, float, float, float] = (0.0, 10.0, 0.0, 10.0),
    covariates: Sequence[str] = ("const",),
    seed: int = 0,
    missing: float = 0.0,
) -> ProfileDataset:
    """Synthetic layout: random sites in ``extent`` = (y0, y1, x0, x1), same h at every profile.

    Covariate ``const`` is an intercept; any other name is drawn N(0, 1)
    independently per observation. ``y`` is filled with zeros (or NaN with
    probability ``missing``, never a whole profile).
    """
    rng = np.random.default_rng(seed)
    h = np.asarray(h_points, dtype=float)
    domain = (float(h.min()), float(h.max())) if domain is None else domain
    ys = rng.uniform(extent[0], extent[1], n_sites)
    xs = rng.uniform(extent[2], extent[3], n_sites)
    sites = [Coordinate(float(a), float(b), unit) for a, b in zip(ys, xs)]
    records = []
    for t in range(1, T + 1):
        for s in sites:
            covs = {
                name: (np.ones(h.size) if name == "const" else rng.standard_normal(h.size))
                for name in covariates
            }
            y = np.zeros(h.size)
            if missing > 0:
                mask = rng.random(h.size) < missing
                if mask.all():
                    mask[rng.integers(h.size)] = False
                y[mask] = np.nan
            records.append(ProfileRecord(s, t, h, y, covs))
    return ProfileDataset(records, domain, list(covariates), T=T, units={"coord": unit})
