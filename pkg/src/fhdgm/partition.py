"""Size-penalised k-means for geographical partitioning of sites.

The objective is

    sum_j sum_{s in S_j} d(s, c_j) + lambda * sum_j (r_j - n/k)^2

with d the great-circle angle (``deg``) or planar distance. The distance
term uses plain (not squared) distances, so the centroid step moves each
c_j to the geometric median of its cluster.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .ingest import ProfileDataset
from .spatial import distance_matrix

MAX_SWEEPS = 100
# exchange refinement re-solves medians O(n^2) times per pass; small n only
REFINE_LIMIT = 16


@dataclass
class Partitioning:
    k: int
    assignment: np.ndarray
    centroids: np.ndarray
    sizes: np.ndarray
    objective: float
    lam: float = 0.0
    unit: str = "deg"
    trial: int = 0
    sweep_objectives: list[float] = field(default_factory=list)

    def members(self, j: int) -> np.ndarray:
        """Indices of the sites in cluster ``j``, ascending."""
        return np.flatnonzero(self.assignment == j)

    @classmethod
    def single(cls, coords: np.ndarray, unit: str) -> "Partitioning":
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        n = coords.shape[0]
        c = _centroid(coords, unit, None)
        a = np.zeros(n, dtype=int)
        return cls(1, a, c[None, :], np.array([n]), objective(coords, a, c[None, :], 0.0, unit), 0.0, unit)


def _to_xyz(latlon: np.ndarray) -> np.ndarray:
    lat, lon = np.radians(latlon[..., 0]), np.radians(latlon[..., 1])
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def _from_xyz(xyz: np.ndarray) -> np.ndarray:
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    lat = np.degrees(np.arctan2(z, np.hypot(x, y)))
    lon = np.degrees(np.arctan2(y, x))
    return np.stack([lat, lon], axis=-1)


def objective(coords, assignment, centroids, lam: float, unit: str, k: int | None = None) -> float:
    """Distance term plus lambda times the squared size imbalance."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    centroids = np.asarray(centroids, dtype=float).reshape(-1, 2)
    a = np.asarray(assignment, dtype=int)
    k = centroids.shape[0] if k is None else k
    n = coords.shape[0]
    d = 0.0
    for j in range(k):
        pts = coords[a == j]
        if len(pts):
            d += float(np.sum(distance_matrix(pts, unit, centroids[j:j + 1])))
    sizes = np.bincount(a, minlength=k)
    return d + lam * float(np.sum((sizes - n / k) ** 2))


def _cost(points: np.ndarray, c: np.ndarray, unit: str) -> float:
    return float(np.sum(distance_matrix(points, unit, c[None, :])))


def _centroid(points: np.ndarray, unit: str, old: np.ndarray | None, tol: float = 1e-13) -> np.ndarray:
    """Geometric median (Weiszfeld) started from the mean; never worse than ``old``."""
    if len(points) == 1:
        return points[0].copy()
    if unit == "deg":
        xyz = _to_xyz(points)
        m = xyz.mean(axis=0)
        norm = np.linalg.norm(m)
        c = _from_xyz(m / norm) if norm > 1e-12 else points[0].copy()
    else:
        c = points.mean(axis=0)

    def dist(c):
        if unit == "deg":
            return distance_matrix(points, unit, c[None, :])[:, 0]
        return np.hypot(points[:, 0] - c[0], points[:, 1] - c[1])

    d = dist(c)
    best = float(d.sum())
    for _ in range(500):
        w = 1.0 / np.maximum(d, 1e-12)
        if unit == "deg":
            m = w @ xyz
            cand = _from_xyz(m / np.linalg.norm(m))
        else:
            cand = w @ points / w.sum()
        d_cand = dist(cand)
        cost = float(d_cand.sum())
        if cost >= best:
            break
        improvement = best - cost
        c, best, d = cand, cost, d_cand
        if improvement <= tol * max(best, 1e-300):
            break
    # Weiszfeld crawls when the median sits on a data point; test that point directly
    near = points[int(np.argmin(d))]
    cost = float(dist(near).sum())
    if cost < best:
        c, best = near.copy(), cost
    if old is not None and _cost(points, old, unit) < best:
        return old.copy()
    return c


def _centroid_step(coords, assign, C, unit):
    out = C.copy()
    for j in range(C.shape[0]):
        pts = coords[assign == j]
        if len(pts):
            out[j] = _centroid(pts, unit, C[j])
    return out


def _repair_empty(coords, assign, sizes, C, unit):
    for j in np.flatnonzero(sizes == 0):
        L = int(np.argmax(sizes))
        members = np.flatnonzero(assign == L)
        d = distance_matrix(coords[members], unit, C[L:L + 1])[:, 0]
        i = members[int(np.argmax(d))]
        assign[i] = j
        sizes[L] -= 1
        sizes[j] += 1
        C[j] = coords[i]


def _one_trial(
    coords: np.ndarray, k: int, lam: float, seed: int, unit: str, cache: dict | None = None
) -> Partitioning:
    n = coords.shape[0]
    rng = np.random.default_rng(seed)
    C = coords[rng.choice(n, size=k, replace=False)].copy()
    assign = np.argmin(distance_matrix(coords, unit, C), axis=1)
    sizes = np.bincount(assign, minlength=k)
    _repair_empty(coords, assign, sizes, C, unit)
    C = _centroid_step(coords, assign, C, unit)
    obj = objective(coords, assign, C, lam, unit, k)
    trace = [obj]
    target = n / k
    for _ in range(MAX_SWEEPS):
        Dsc = distance_matrix(coords, unit, C)
        previous = assign.copy()
        for i in range(n):
            sizes[assign[i]] -= 1
            dev = sizes - target
            cost = Dsc[i] + lam * (2.0 * dev + 1.0)
            j = int(np.argmin(cost))
            assign[i] = j
            sizes[j] += 1
        _repair_empty(coords, assign, sizes, C, unit)
        C_new = _centroid_step(coords, assign, C, unit)
        new_obj = objective(coords, assign, C_new, lam, unit, k)
        if new_obj > obj + 1e-9 * max(1.0, abs(obj)):
            raise AssertionError(f"k-means objective increased from {obj} to {new_obj}")
        stable = np.array_equal(previous, assign) and np.array_equal(C_new, C)
        C, obj = C_new, new_obj
        trace.append(obj)
        if stable:
            break
    if n <= REFINE_LIMIT:
        assign, C, obj = _local_search(coords, assign, C, lam, unit, k, obj, trace, {} if cache is None else cache)
    sizes = np.bincount(assign, minlength=k)
    return Partitioning(k, assign, C, sizes.copy(), obj, lam, unit, sweep_objectives=trace)


def _local_search(coords, assign, C, lam, unit, k, obj, trace, cache):
    """Single moves and pairwise swaps, scored with re-solved medians.

    The sweep scores moves against fixed centroids, which can leave a
    partition where one exchange would lower the objective once both medians
    are recomputed. This pass accepts any strictly improving exchange.
    """
    n = coords.shape[0]
    target = n / k
    def med(members: np.ndarray) -> tuple[float, np.ndarray]:
        key = tuple(members.tolist())
        if key not in cache:
            c = _centroid(coords[members], unit, None)
            cache[key] = (_cost(coords[members], c, unit), c)
        return cache[key]

    def total(a: np.ndarray) -> float:
        sizes = np.bincount(a, minlength=k)
        if np.any(sizes == 0):
            return np.inf
        d = sum(med(np.flatnonzero(a == j))[0] for j in range(k))
        return d + lam * float(np.sum((sizes - target) ** 2))

    start = assign.copy()
    best = total(assign)
    improved = True
    while improved:
        improved = False
        for i in range(n):
            for j in range(k):
                if j == assign[i]:
                    continue
                cand = assign.copy()
                cand[i] = j
                v = total(cand)
                if v < best - 1e-12 * max(1.0, abs(best)):
                    assign, best, improved = cand, v, True
        for i in range(n):
            for m in range(i + 1, n):
                if assign[i] == assign[m]:
                    continue
                cand = assign.copy()
                cand[i], cand[m] = assign[m], assign[i]
                v = total(cand)
                if v < best - 1e-12 * max(1.0, abs(best)):
                    assign, best, improved = cand, v, True
    C_new = C.copy()
    for j in range(k):
        C_new[j] = med(np.flatnonzero(assign == j))[1]
    new_obj = objective(coords, assign, C_new, lam, unit, k)
    if new_obj < obj:
        trace.append(new_obj)
        return assign, C_new, new_obj
    return start, C, obj


def fit_kmeans(
    coords,
    k: int,
    lam: float,
    trials: int = 1,
    seed: int = 0,
    unit: str = "deg",
    workers: int = 1,
) -> Partitioning:
    """Best of ``trials`` penalised k-means runs; trial i is seeded with seed + i."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    if not 1 <= k <= n:
        raise DomainError(f"k must lie in [1, n={n}], got {k}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if lam < 0:
        raise DomainError("lambda must be >= 0")

    medians: dict[tuple[int, ...], tuple[float, np.ndarray]] = {}   # shared by trials

    def run(trial):
        part = _one_trial(coords, k, float(lam), seed + trial, unit, medians)
        part.trial = trial
        return part

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]
    # lowest trial index wins ties
    return min(results, key=lambda p: (p.objective, p.trial))


def partition_dataset(ds: ProfileDataset, part: Partitioning) -> list[ProfileDataset]:
    """Site-disjoint sub-datasets, one per cluster; sites keep their relative order.

    ``part.members(j)`` maps sites of the j-th sub-dataset back to ``ds``.
    """
    if len(part.assignment) != ds.n:
        raise DomainError(f"partition covers {len(part.assignment)} sites, dataset has {ds.n}")
    return [ds.subset_sites(part.members(j)) for j in range(part.k)]


def sizes_balanced(part: Partitioning, n: int) -> bool:
    return bool(np.all(np.abs(part.sizes - n / part.k) <= 1))


def from_assignment(coords, assignment: Sequence[int], unit: str, lam: float = 0.0) -> Partitioning:
    """Partitioning from a user-given assignment with median centroids."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    a = np.asarray(assignment, dtype=int)
    k = int(a.max()) + 1
    C = np.zeros((k, 2))
    for j in range(k):
        pts = coords[a == j]
        if not len(pts):
            raise DomainError(f"cluster {j} is empty")
        C[j] = _centroid(pts, unit, None)
    return Partitioning(k, a, C, np.bincount(a, minlength=k), objective(coords, a, C, lam, unit, k), lam, unit)
