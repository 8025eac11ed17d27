"""Dynamic kriging by smoothing augmented state-space sub-models, and validation.

For a block of targets, the conditioning sites are the union of each
target's nearest neighbours. The latent state is extended with one
fully-unobserved site per new target, and the smoother on that system gives
E[z(s*, t) | Y] and its covariance for every t at once.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import basis_matrix
from .errors import DomainError
from .estimation import FittedModel, ModelDesign
from .ingest import Coordinate, ProfileDataset
from .spatial import distance_matrix, full_innovation_covariance
from .statespace import StateSpaceSystem, kalman_smoother


# ---------------------------------------------------------------------------
# Targets and options
# ---------------------------------------------------------------------------

def _arange_inclusive(a: float, b: float, step: float) -> np.ndarray:
    if step <= 0 or b < a:
        raise DomainError(f"bad grid axis {a}:{b}:{step}")
    k = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(k)


@dataclass
class KrigingGrid:
    """Prediction targets; regular grids are flattened row-major (rows follow lat/y)."""

    coords: np.ndarray
    unit: str
    shape: tuple[int, int] | None = None
    cell: tuple[float, float] | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if self.coords.shape[0] < 1:
            raise DomainError("a kriging grid needs at least one target")
        for a, b in self.coords:
            Coordinate(float(a), float(b), self.unit)

    @property
    def m(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def regular(cls, lat0, lat1, dlat, lon0, lon1, dlon, unit: str = "deg") -> "KrigingGrid":
        lats = _arange_inclusive(lat0, lat1, dlat)
        lons = _arange_inclusive(lon0, lon1, dlon)
        LA, LO = np.meshgrid(lats, lons, indexing="ij")
        coords = np.column_stack([LA.ravel(), LO.ravel()])
        return cls(coords, unit, (lats.size, lons.size), (float(dlat), float(dlon)))

    @classmethod
    def from_coordinates(cls, coords: Sequence[Coordinate]) -> "KrigingGrid":
        units = {c.unit for c in coords}
        if len(units) != 1:
            raise DomainError("targets must share one unit")
        return cls(np.array([[c.lat_or_y, c.lon_or_x] for c in coords]), units.pop())


@dataclass
class KrigingOptions:
    nn_size: int | None = None      # None means all sites
    block_size: int | None = None   # None means a single block
    workers: int = 1
    compute_variance: bool = True

    def __post_init__(self):
        if self.nn_size is not None and self.nn_size < 1:
            raise DomainError("nn_size must be >= 1")
        if self.block_size is not None and self.block_size < 1:
            raise DomainError("block_size must be >= 1")
        if self.workers < 1:
            raise DomainError("workers must be >= 1")


@dataclass
class KrigingResult:
    """Predictions for targets x times x h.

    ``z_hat``/``z_var`` hold the latent summaries for every t = 1..T;
    ``f_hat``/``var_f`` are restricted to ``t`` and ``h``.
    """

    coords: np.ndarray
    t: np.ndarray
    h: np.ndarray
    f_hat: np.ndarray                  # (m, len(t), len(h))
    var_f: np.ndarray | None
    z_hat: np.ndarray                  # (m, T, p)
    z_var: np.ndarray | None           # (m, T, p, p)

    @staticmethod
    def concatenate(parts: Sequence["KrigingResult"]) -> "KrigingResult":
        first = parts[0]

        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        return KrigingResult(cat("coords"), first.t, first.h, cat("f_hat"), cat("var_f"),
                             cat("z_hat"), cat("z_var"))

    def rows(self):
        """(lat, lon, t, h, f_hat, var_f) in target, t, h order."""
        for i, (a, b) in enumerate(self.coords):
            for k, t in enumerate(self.t):
                for l, h in enumerate(self.h):
                    v = float("nan") if self.var_f is None else self.var_f[i, k, l]
                    yield a, b, int(t), h, self.f_hat[i, k, l], v


# ---------------------------------------------------------------------------
# Kriging
# ---------------------------------------------------------------------------

def nearest_neighbors(site_coords, target, nn_size: int, unit: str) -> np.ndarray:
    """Indices of the nn_size closest sites, sorted by distance then index."""
    site_coords = np.asarray(site_coords, dtype=float).reshape(-1, 2)
    d = distance_matrix(site_coords, unit, np.asarray(target, dtype=float).reshape(1, 2))[:, 0]
    return _nearest_from_row(d, nn_size)


def _nearest_from_row(d: np.ndarray, nn_size: int) -> np.ndarray:
    order = np.lexsort((np.arange(d.size), d))
    return order[:min(nn_size, d.size)]


def _check_covariates(covariates, m: int, n_t: int, n_h: int, b: int) -> np.ndarray | None:
    if covariates is None:
        return None
    X = np.asarray(covariates, dtype=float)
    if X.shape != (m, n_t, n_h, b):
        raise ValueError(f"covariates must have shape (targets, t, h, b) = {(m, n_t, n_h, b)}, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates at targets must be finite")
    return X


def _latent_block(fitted: FittedModel, design: ModelDesign, targets: np.ndarray, nn: int):
    """Smoothed latent mean (m, T, p) and covariance (m, T, p, p) for a block."""
    params = fitted.params
    ds = fitted.ds
    n, p, T = design.n, design.p, design.T
    site_xy = ds.coords()
    Dts = distance_matrix(targets, ds.unit, site_xy)
    union = np.unique(np.concatenate([_nearest_from_row(row, nn) for row in Dts]))
    local = {int(s): k for k, s in enumerate(union)}

    # position of every target among the augmented sites
    pos = np.empty(len(targets), dtype=int)
    extra: dict[tuple[float, float], int] = {}
    extra_xy = []
    for j, row in enumerate(Dts):
        hit = np.flatnonzero(row == 0.0)
        if hit.size and int(hit[0]) in local:
            pos[j] = local[int(hit[0])]
            continue
        key = (float(targets[j, 0]), float(targets[j, 1]))
        if key not in extra:
            extra[key] = union.size + len(extra_xy)
            extra_xy.append(key)
        pos[j] = extra[key]
    aug_xy = np.vstack([site_xy[union], np.array(extra_xy).reshape(-1, 2)])
    na = aug_xy.shape[0]

    src_cols = (np.arange(p)[:, None] * n + union[None, :]).ravel()
    dst_cols = (np.arange(p)[:, None] * na + np.arange(union.size)[None, :]).ravel()
    in_union = np.zeros(n, dtype=bool)
    in_union[union] = True
    ys, Hs, offs, rs = [], [], [], []
    for t in range(T):
        rows = in_union[design.site[t]]
        H = np.zeros((int(rows.sum()), p * na))
        H[:, dst_cols] = design.H[t][rows][:, src_cols]
        Hs.append(H)
        ys.append(design.y[t][rows])
        offs.append(design.Xt[t][rows] @ params.c_beta)
        rs.append(np.exp(design.Phis[t][rows] @ params.c_eps))
    Q = full_innovation_covariance(distance_matrix(aug_xy, ds.unit), params.spatial)
    sys = StateSpaceSystem(ys, Hs, offs, rs, np.repeat(params.g, na), Q, np.zeros(p * na), Q.copy())

    upos = np.unique(pos)
    cov_index = (upos[:, None] + na * np.arange(p)[None, :]).ravel()
    out = kalman_smoother(sys, cov_index=cov_index)
    slot = {int(u): k for k, u in enumerate(upos)}
    z_hat = np.empty((len(targets), T, p))
    z_var = np.empty((len(targets), T, p, p))
    for j, q in enumerate(pos):
        k = slot[int(q)]
        z_hat[j] = out.z_smooth[1:, q + na * np.arange(p)]
        z_var[j] = out.P_smooth[1:, k * p:(k + 1) * p, k * p:(k + 1) * p]
    return z_hat, z_var


def krige_block(
    fitted: FittedModel,
    targets,
    opts: KrigingOptions | None = None,
    h=None,
    t=None,
    covariates=None,
    design: ModelDesign | None = None,
) -> KrigingResult:
    """Kriging for one block of targets, conditioning on the union of their neighbours."""
    opts = opts or KrigingOptions()
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    design = ModelDesign(fitted.ds, fitted.bases) if design is None else design
    n, T = design.n, design.T
    nn = n if opts.nn_size is None else opts.nn_size
    if nn > n:
        raise DomainError(f"nn_size={nn} exceeds the number of sites n={n}")
    h = np.asarray(fitted.ds.domain if h is None else h, dtype=float).reshape(-1)
    t_sel = np.arange(1, T + 1) if t is None else np.asarray(t, dtype=int).reshape(-1)
    if np.any(t_sel < 1) or np.any(t_sel > T):
        raise DomainError(f"time indices must lie in 1..{T}")
    X = _check_covariates(covariates, len(targets), t_sel.size, h.size, fitted.ds.b)

    z_hat, z_var = _latent_block(fitted, design, targets, nn)
    Phi = basis_matrix(fitted.bases.z, h)
    zt = z_hat[:, t_sel - 1]
    f = zt @ Phi.T
    if X is not None and fitted.ds.b:
        Bh = basis_matrix(fitted.bases.beta, h) @ fitted.params.c_beta.reshape(fitted.ds.b, -1).T
        f = f + np.einsum("mthb,hb->mth", X, Bh)
    var_f = None
    if opts.compute_variance:
        var_f = np.maximum(np.einsum("hp,mtpq,hq->mth", Phi, z_var[:, t_sel - 1], Phi), 0.0)
    return KrigingResult(targets, t_sel, h, f, var_f, z_hat, z_var if opts.compute_variance else None)


def krige(
    fitted: FittedModel,
    grid: KrigingGrid,
    opts: KrigingOptions | None = None,
    h=None,
    t=None,
    covariates=None,
) -> KrigingResult:
    """Split targets into contiguous blocks, krige each, concatenate in block order."""
    opts = opts or KrigingOptions()
    if grid.unit != fitted.ds.unit:
        raise DomainError(f"grid unit {grid.unit!r} differs from data unit {fitted.ds.unit!r}")
    m = grid.m
    bs = m if opts.block_size is None else opts.block_size
    starts = list(range(0, m, bs))
    design = ModelDesign(fitted.ds, fitted.bases)
    X = None if covariates is None else np.asarray(covariates, dtype=float)

    def run(s):
        sl = slice(s, min(s + bs, m))
        return krige_block(fitted, grid.coords[sl], opts, h, t, None if X is None else X[sl], design)

    if opts.workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    return KrigingResult.concatenate(parts)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    t: np.ndarray
    mse_t: np.ndarray
    n_t: np.ndarray
    r2_t: np.ndarray
    site: np.ndarray
    mse_s: np.ndarray
    n_s: np.ndarray
    r2_s: np.ndarray
    bin_edges: np.ndarray
    h_bar: np.ndarray
    mse_h: np.ndarray
    n_h: np.ndarray
    r2_h: np.ndarray
    mse: float
    residuals: dict = field(default_factory=dict)


def _grouped(key: np.ndarray, levels: np.ndarray, y: np.ndarray, err2: np.ndarray):
    """Per level: count, MSE and 1 - MSE / Var(y) (ddof=0); NaN where undefined."""
    idx = np.searchsorted(levels, key)
    k = levels.size
    cnt = np.bincount(idx, minlength=k).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mse = np.bincount(idx, err2, minlength=k) / cnt
        mean = np.bincount(idx, y, minlength=k) / cnt
        var = np.bincount(idx, (y - mean[idx]) ** 2, minlength=k) / cnt
        r2 = np.where(var > 0, 1.0 - mse / np.where(var > 0, var, 1.0), np.nan)
        r2 = np.where((var == 0) & (mse == 0), 1.0, r2)
    return cnt.astype(int), mse, r2


def validation_metrics(y, yhat, t, site, h, T: int, n_sites: int, domain, B: int) -> ValidationReport:
    """MSE and R-squared by time, site and h-bin from matched observations."""
    if B < 1:
        raise DomainError("number of bins must be >= 1")
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    t = np.asarray(t, dtype=int)
    site = np.asarray(site, dtype=int)
    h = np.asarray(h, dtype=float)
    err2 = (y - yhat) ** 2
    times = np.arange(1, T + 1)
    sites = np.arange(n_sites)
    n_t, mse_t, r2_t = _grouped(t, times, y, err2)
    n_s, mse_s, r2_s = _grouped(site, sites, y, err2)
    edges = np.linspace(domain[0], domain[1], B + 1)
    b = np.clip(np.searchsorted(edges, h, side="right") - 1, 0, B - 1)
    n_h, mse_h, r2_h = _grouped(b, np.arange(B), y, err2)
    with np.errstate(invalid="ignore", divide="ignore"):
        h_bar = np.bincount(b, h, minlength=B) / n_h
    mse = float(err2.mean()) if err2.size else float("nan")
    return ValidationReport(times, mse_t, n_t, r2_t, sites, mse_s, n_s, r2_s, edges, h_bar, mse_h, n_h, r2_h, mse,
                            {"y": y, "yhat": yhat, "t": t, "site": site, "h": h})


def validate(fitted: FittedModel, val: ProfileDataset, B: int, opts: KrigingOptions | None = None) -> ValidationReport:
    """Krige the validation sites from the fitted data and score y against f-hat."""
    opts = opts or KrigingOptions()
    if val.T != fitted.ds.T:
        raise DomainError(f"validation data have T={val.T}, fitted model has T={fitted.ds.T}")
    if val.unit != fitted.ds.unit:
        raise DomainError("validation and estimation units differ")
    vdesign = ModelDesign(val, fitted.bases)
    grid = KrigingGrid(val.coords(), val.unit)
    kr = krige(fitted, grid, KrigingOptions(opts.nn_size, opts.block_size, opts.workers, False))
    n_val, p = val.n, fitted.params.p
    ys, yh, ts, ss, hs = [], [], [], [], []
    for k in range(val.T):
        obs = vdesign.observed[k]
        if not obs.any():
            continue
        x = kr.z_hat[:, k, :].T.reshape(p * n_val)     # basis-major
        pred = vdesign.Xt[k] @ fitted.params.c_beta + vdesign.H[k] @ x
        ys.append(vdesign.y[k][obs])
        yh.append(pred[obs])
        ts.append(np.full(int(obs.sum()), k + 1))
        ss.append(vdesign.site[k][obs])
        hs.append(vdesign.h[k][obs])

    def cat(parts, dtype=float):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

    return validation_metrics(cat(ys), cat(yh), cat(ts, int), cat(ss, int), cat(hs), val.T, n_val, val.domain, B)
