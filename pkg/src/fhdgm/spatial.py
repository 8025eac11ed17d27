"""Distances and the spatial covariance of the latent innovations.

For ``deg`` coordinates distances are great-circle central angles in degrees
of arc; for ``km``/``m`` they are planar Euclidean in the coordinate unit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegeneracyError, DomainError, UnitError
from .ingest import Coordinate

EARTH_RADIUS_KM = 6371.0


@dataclass(frozen=True)
class SpatialParams:
    v: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.v, dtype=float)).copy()
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        if v.shape != theta.shape or v.ndim != 1:
            raise DomainError("v and theta must be vectors of equal length")
        if not (np.all(np.isfinite(v)) and np.all(v > 0)):
            raise DomainError(f"variances must be positive and finite, got {v}")
        if not (np.all(np.isfinite(theta)) and np.all(theta > 0)):
            raise DomainError(f"ranges must be positive and finite, got {theta}")
        v.setflags(write=False)
        theta.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.v.size


def _haversine_deg(lat1, lon1, lat2, lon2):
    lat1, lon1, lat2, lon2 = (np.radians(a) for a in (lat1, lon1, lat2, lon2))
    s = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return np.degrees(2.0 * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0))))


def distance(a: Coordinate, b: Coordinate) -> float:
    if a.unit != b.unit:
        raise UnitError(f"cannot measure distance between {a.unit} and {b.unit} coordinates")
    if a.unit == "deg":
        return float(_haversine_deg(a.lat_or_y, a.lon_or_x, b.lat_or_y, b.lon_or_x))
    return float(np.hypot(a.lat_or_y - b.lat_or_y, a.lon_or_x - b.lon_or_x))


def distance_matrix(xy: np.ndarray, unit: str, other: np.ndarray | None = None) -> np.ndarray:
    """Pairwise distances between rows of (lat_or_y, lon_or_x) arrays."""
    a = np.asarray(xy, dtype=float).reshape(-1, 2)
    b = a if other is None else np.asarray(other, dtype=float).reshape(-1, 2)
    if unit == "deg":
        D = _haversine_deg(a[:, None, 0], a[:, None, 1], b[None, :, 0], b[None, :, 1])
    elif unit in ("km", "m"):
        D = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
    else:
        raise UnitError(f"unknown unit {unit!r}")
    if other is None:
        D = 0.5 * (D + D.T)
        np.fill_diagonal(D, 0.0)
    return D


def exp_correlation(d, theta_j: float):
    """rho(d) = exp(-d / theta)."""
    return np.exp(-np.asarray(d, dtype=float) / theta_j)


CORRELATIONS: dict[str, Callable] = {"exponential": exp_correlation}


def correlation_matrix(D: np.ndarray, theta_j: float, family: str = "exponential") -> np.ndarray:
    return CORRELATIONS[family](D, theta_j)


def check_distinct(D: np.ndarray) -> None:
    n = D.shape[0]
    if n > 1:
        off = D[~np.eye(n, dtype=bool)]
        if np.min(off) <= 0.0:
            raise DegeneracyError("two sites are at zero distance; the innovation covariance is singular")


def innovation_covariance(D: np.ndarray, sp: SpatialParams, family: str = "exponential") -> list[np.ndarray]:
    """One n x n covariance v_j * rho(D; theta_j) per basis function."""
    D = np.asarray(D, dtype=float)
    check_distinct(D)
    return [sp.v[j] * correlation_matrix(D, sp.theta[j], family) for j in range(sp.p)]


def full_innovation_covariance(D: np.ndarray, sp: SpatialParams) -> np.ndarray:
    """np x np innovation covariance in basis-major order (index j*n + i)."""
    blocks = innovation_covariance(D, sp)
    n = D.shape[0]
    out = np.zeros((n * sp.p, n * sp.p))
    for j, blk in enumerate(blocks):
        out[j * n:(j + 1) * n, j * n:(j + 1) * n] = blk
    return out


def basis_major_to_site_major(n: int, p: int) -> np.ndarray:
    """Permutation ``perm`` with site-major vector = basis-major vector[perm]."""
    return np.array([j * n + i for i in range(n) for j in range(p)])
