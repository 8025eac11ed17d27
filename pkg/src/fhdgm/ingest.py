"""Profile data: parsing, validation and the in-memory dataset.

Data arrive in long format, one measurement per CSV row. Rows are grouped
by (site coordinates, time) into profiles; a profile whose measurements are
all missing is dropped.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CovariateMissingError,
    DomainError,
    DuplicationError,
    ParseError,
    SiteLookupError,
    SplitError,
)

UNITS = ("deg", "km", "m")


@dataclass(frozen=True)
class Coordinate:
    lat_or_y: float
    lon_or_x: float
    unit: str = "deg"

    def __post_init__(self):
        if self.unit not in UNITS:
            raise DomainError(f"unknown coordinate unit {self.unit!r}; expected one of {UNITS}")
        if not (math.isfinite(self.lat_or_y) and math.isfinite(self.lon_or_x)):
            raise DomainError("coordinates must be finite")
        if self.unit == "deg":
            if not -90.0 <= self.lat_or_y <= 90.0:
                raise DomainError(f"latitude {self.lat_or_y} outside [-90, 90]")
            if not -180.0 <= self.lon_or_x <= 180.0:
                raise DomainError(f"longitude {self.lon_or_x} outside [-180, 180]")

    @property
    def key(self) -> tuple[float, float]:
        return (self.lat_or_y, self.lon_or_x)

    def _canonical(self) -> tuple[float, float]:
        # distinct keys that name the same point on the sphere
        lat, lon = self.lat_or_y, self.lon_or_x
        if self.unit == "deg":
            if abs(lat) == 90.0:
                lon = 0.0
            elif lon == -180.0:
                lon = 180.0
        return (lat + 0.0, lon + 0.0)


@dataclass(frozen=True, eq=False)
class ProfileRecord:
    """One observed profile y(s, h, t) at a site and time.

    ``y`` uses NaN for missing measurements; covariates may not be missing.
    """

    site: Coordinate
    time_index: int
    h: np.ndarray
    y: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if h.shape != y.shape:
            raise DomainError("h and y must have the same length")
        if int(self.time_index) != self.time_index or self.time_index < 1:
            raise DomainError(f"time index must be an integer >= 1, got {self.time_index}")
        covs = {}
        for name, values in self.covariates.items():
            x = np.asarray(values, dtype=float).reshape(-1)
            if x.shape != h.shape:
                raise DomainError(f"covariate {name!r} has length {x.size}, expected {h.size}")
            if not np.all(np.isfinite(x)):
                raise CovariateMissingError(f"covariate {name!r} contains missing values")
            x.setflags(write=False)
            covs[name] = x
        if len(np.unique(h)) != h.size:
            raise DuplicationError(
                f"duplicate h within profile at site {self.site.key}, t={self.time_index}"
            )
        h.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "time_index", int(self.time_index))

    @property
    def q(self) -> int:
        return self.h.size

    def covariate_matrix(self, names: Sequence[str]) -> np.ndarray:
        """q x b matrix of covariates in the given column order."""
        if not names:
            return np.zeros((self.q, 0))
        return np.column_stack([self.covariates[name] for name in names])

    def equals(self, other: "ProfileRecord") -> bool:
        if self.site != other.site or self.time_index != other.time_index:
            return False
        if not (np.array_equal(self.h, other.h) and np.array_equal(self.y, other.y, equal_nan=True)):
            return False
        if set(self.covariates) != set(other.covariates):
            return False
        return all(np.array_equal(v, other.covariates[k]) for k, v in self.covariates.items())


class ProfileDataset:
    """Immutable collection of profiles over a fixed set of sites.

    Sites are ordered by first appearance among ``records`` unless
    ``site_order`` is given. ``origin`` maps each site to its index in the
    dataset this one was derived from (identity for parsed data).
    """

    def __init__(
        self,
        records: Iterable[ProfileRecord],
        domain: tuple[float, float],
        covariate_names: Sequence[str] = (),
        T: int | None = None,
        units: Mapping[str, str] | None = None,
        site_order: Sequence[Coordinate] | None = None,
        origin: Sequence[int] | None = None,
        n_dropped: int = 0,
    ):
        records = tuple(records)
        h1, h2 = float(domain[0]), float(domain[1])
        if not h1 < h2:
            raise DomainError(f"invalid functional domain [{h1}, {h2}]")
        self.domain = (h1, h2)
        self.covariate_names = tuple(covariate_names)
        self.units = dict(units or {})
        self.n_dropped = n_dropped

        if site_order is None:
            seen: dict[tuple[float, float], Coordinate] = {}
            for rec in records:
                seen.setdefault(rec.site.key, rec.site)
            sites = tuple(seen.values())
        else:
            sites = tuple(site_order)
        self.sites = sites
        self._index = {c.key: i for i, c in enumerate(sites)}
        if len(self._index) != len(sites):
            raise DuplicationError("site_order contains repeated coordinates")
        canon = {c._canonical() for c in sites}
        if len(canon) != len(sites):
            raise DuplicationError("two site coordinates denote the same location")
        if len({c.unit for c in sites}) > 1:
            raise DomainError("all sites must share one coordinate unit")

        seen_groups = set()
        rec_site = np.empty(len(records), dtype=int)
        for k, rec in enumerate(records):
            if set(rec.covariates) != set(self.covariate_names):
                raise CovariateMissingError(
                    f"record at {rec.site.key}, t={rec.time_index} has covariates "
                    f"{sorted(rec.covariates)}, expected {sorted(self.covariate_names)}"
                )
            if np.any(rec.h < h1) or np.any(rec.h > h2):
                raise DomainError(f"h outside domain [{h1}, {h2}] at {rec.site.key}, t={rec.time_index}")
            if rec.q == 0 or np.all(np.isnan(rec.y)):
                raise DomainError(f"record at {rec.site.key}, t={rec.time_index} has no observed values")
            try:
                i = self._index[rec.site.key]
            except KeyError:
                raise SiteLookupError(f"record site {rec.site.key} not in site list") from None
            group = (i, rec.time_index)
            if group in seen_groups:
                raise DuplicationError(f"two profiles for site {rec.site.key} at t={rec.time_index}")
            seen_groups.add(group)
            rec_site[k] = i
        self.records = records
        self.record_site = rec_site
        self.record_site.setflags(write=False)

        t_max = max((r.time_index for r in records), default=0)
        self.T = t_max if T is None else int(T)
        if self.T < t_max:
            raise DomainError(f"T={self.T} smaller than largest time index {t_max}")
        self.origin = tuple(range(len(sites))) if origin is None else tuple(int(o) for o in origin)
        if len(self.origin) != len(sites):
            raise DomainError("origin mapping must have one entry per site")

    # -- basic accessors -------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def unit(self) -> str:
        return self.sites[0].unit if self.sites else "deg"

    @property
    def b(self) -> int:
        return len(self.covariate_names)

    def coords(self) -> np.ndarray:
        """n x 2 array of (lat_or_y, lon_or_x)."""
        return np.array([c.key for c in self.sites], dtype=float).reshape(-1, 2)

    def site_index(self, c: Coordinate) -> int:
        return site_index(self, c)

    def records_at(self, t: int) -> list[tuple[int, ProfileRecord]]:
        """(site index, record) pairs at time ``t`` in record order."""
        return [(int(self.record_site[k]), r) for k, r in enumerate(self.records) if r.time_index == t]

    def by_time(self) -> list[list[tuple[int, ProfileRecord]]]:
        """Records grouped per time; entry ``t-1`` holds time ``t``."""
        out: list[list[tuple[int, ProfileRecord]]] = [[] for _ in range(self.T)]
        for k, r in enumerate(self.records):
            out[r.time_index - 1].append((int(self.record_site[k]), r))
        return out

    def n_observations(self) -> int:
        return int(sum(np.count_nonzero(~np.isnan(r.y)) for r in self.records))

    def subset_sites(self, indices: Sequence[int]) -> "ProfileDataset":
        """Dataset restricted to the given sites, in the given order."""
        indices = [int(i) for i in indices]
        keep = set(indices)
        recs = [r for k, r in enumerate(self.records) if int(self.record_site[k]) in keep]
        return ProfileDataset(
            recs,
            self.domain,
            self.covariate_names,
            T=self.T,
            units=self.units,
            site_order=[self.sites[i] for i in indices],
            origin=[self.origin[i] for i in indices],
        )

    def with_y(self, ys: Sequence[np.ndarray]) -> "ProfileDataset":
        """Copy with each record's y replaced (same order as ``records``)."""
        recs = [
            ProfileRecord(r.site, r.time_index, r.h, y, r.covariates)
            for r, y in zip(self.records, ys, strict=True)
        ]
        return ProfileDataset(
            recs, self.domain, self.covariate_names, T=self.T, units=self.units,
            site_order=self.sites, origin=self.origin,
        )

    def equals(self, other: "ProfileDataset") -> bool:
        return (
            self.domain == other.domain
            and self.covariate_names == other.covariate_names
            and self.T == other.T
            and self.sites == other.sites
            and len(self.records) == len(other.records)
            and all(a.equals(b) for a, b in zip(self.records, other.records))
        )

    def __repr__(self) -> str:
        return (
            f"ProfileDataset(n={self.n}, T={self.T}, records={len(self.records)}, "
            f"domain={self.domain}, covariates={list(self.covariate_names)})"
        )


def site_index(ds: ProfileDataset, c: Coordinate) -> int:
    """0-based index of a site; coordinates must match exactly."""
    i = ds._index.get(c.key)
    if i is None or ds.sites[i].unit != c.unit:
        raise SiteLookupError(f"coordinate {c.key} ({c.unit}) is not a site of this dataset")
    return i


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

@dataclass
class CsvSchema:
    y: str = "y"
    h: str = "h"
    time: str = "time"
    coord_y: str = "coord_y"
    coord_x: str = "coord_x"
    covariate_prefix: str = "x_beta_"
    unit: str = "deg"
    domain: tuple[float, float] | None = None
    T: int | None = None
    units: dict[str, str] = field(default_factory=dict)


def _is_missing(cell: str) -> bool:
    s = cell.strip()
    return s == "" or s.lower() == "nan"


def _number(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"malformed number {cell!r} in column {column!r}", row=line) from None
    if math.isnan(value):
        raise ParseError(f"missing value in column {column!r}", row=line)
    return value


def _time_mapper(cells: list[str]):
    try:
        ints = [int(c) for c in cells]
    except ValueError:
        ints = None
    if ints is not None:
        return ints
    try:
        dates = [_dt.date.fromisoformat(c.strip()[:10]) if len(c.strip()) <= 10
                 else _dt.datetime.fromisoformat(c.strip()) for c in cells]
    except ValueError:
        return None
    order = {d: i + 1 for i, d in enumerate(sorted(set(dates)))}
    return [order[d] for d in dates]


def parse_csv(path: str | Path, schema: CsvSchema | None = None) -> ProfileDataset:
    """Read a long-format CSV into a :class:`ProfileDataset`.

    Groups whose y values are all missing are removed; the number removed is
    reported with a warning and kept in ``dataset.n_dropped``.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise ParseError("empty file: header row required") from None
        rows = [(k + 2, row) for k, row in enumerate(reader) if any(c.strip() for c in row)]

    col = {name: j for j, name in enumerate(header)}
    needed = [schema.coord_y, schema.coord_x, schema.time, schema.h, schema.y]
    missing = [c for c in needed if c not in col]
    if missing:
        raise ParseError(f"header lacks required columns {missing}")
    cov_cols = [c for c in header if c.startswith(schema.covariate_prefix)]
    cov_names = [c[len(schema.covariate_prefix):] for c in cov_cols]

    for line, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=line)

    times = _time_mapper([row[col[schema.time]] for _, row in rows])
    if times is None:
        raise ParseError(f"column {schema.time!r} must hold integers or ISO-8601 dates")

    groups: dict[tuple[float, float, int], dict] = {}
    for (line, row), t in zip(rows, times):
        if t < 1:
            raise ParseError(f"time index {t} must be >= 1", row=line)
        lat = _number(row[col[schema.coord_y]], line, schema.coord_y)
        lon = _number(row[col[schema.coord_x]], line, schema.coord_x)
        h = _number(row[col[schema.h]], line, schema.h)
        ycell = row[col[schema.y]]
        y = math.nan if _is_missing(ycell) else _number(ycell, line, schema.y)
        covs = []
        for c in cov_cols:
            cell = row[col[c]]
            if _is_missing(cell):
                raise CovariateMissingError(f"row {line}: covariate {c!r} is missing")
            covs.append(_number(cell, line, c))
        if schema.domain is not None and not schema.domain[0] <= h <= schema.domain[1]:
            raise DomainError(f"row {line}: h={h} outside domain {tuple(schema.domain)}")
        g = groups.setdefault((lat, lon, t), {"h": [], "y": [], "x": [], "lines": []})
        if h in g["h"]:
            raise DuplicationError(f"row {line}: duplicate (site, time, h) = ({lat}, {lon}, {t}, {h})")
        g["h"].append(h)
        g["y"].append(y)
        g["x"].append(covs)
        g["lines"].append(line)

    if schema.domain is not None:
        domain = (float(schema.domain[0]), float(schema.domain[1]))
    else:
        all_h = [h for g in groups.values() for h in g["h"]]
        if not all_h:
            raise ParseError("no data rows and no declared domain")
        domain = (min(all_h), max(all_h))
        if domain[0] == domain[1]:
            domain = (domain[0], domain[0] + 1.0)

    records = []
    dropped = 0
    for (lat, lon, t), g in groups.items():
        y = np.array(g["y"], dtype=float)
        if np.all(np.isnan(y)):
            dropped += 1
            continue
        site = Coordinate(lat, lon, schema.unit)
        x = np.array(g["x"], dtype=float).reshape(len(g["h"]), len(cov_cols))
        covariates = {name: x[:, j] for j, name in enumerate(cov_names)}
        records.append(ProfileRecord(site, t, np.array(g["h"]), y, covariates))
    if dropped:
        warnings.warn(f"removed {dropped} profile(s) with all values missing", stacklevel=2)
    return ProfileDataset(
        records, domain, cov_names, T=schema.T, units=schema.units, n_dropped=dropped
    )


def _fmt(x: float) -> str:
    return "NaN" if math.isnan(x) else repr(float(x))


def write_csv(ds: ProfileDataset, path: str | Path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema()
    cov_cols = [schema.covariate_prefix + name for name in ds.covariate_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.coord_y, schema.coord_x, schema.time, schema.h, schema.y, *cov_cols])
        for rec in ds.records:
            lat, lon = rec.site.key
            for k in range(rec.q):
                covs = [_fmt(rec.covariates[name][k]) for name in ds.covariate_names]
                w.writerow([_fmt(lat), _fmt(lon), rec.time_index, _fmt(rec.h[k]), _fmt(rec.y[k]), *covs])


def split_validation(ds: ProfileDataset, val_sites: Sequence[int]) -> tuple[ProfileDataset, ProfileDataset]:
    """Split sites into estimation and validation datasets.

    Each output re-bases its site indices from 0; ``origin`` keeps the map
    back to the indices of ``ds``'s own origin.
    """
    val = [int(i) for i in val_sites]
    if not val:
        raise SplitError("val_sites must be nonempty")
    if len(set(val)) != len(val):
        raise SplitError("val_sites contains duplicates")
    if any(i < 0 or i >= ds.n for i in val):
        raise SplitError(f"val_sites must lie in [0, {ds.n})")
    chosen = set(val)
    est = [i for i in range(ds.n) if i not in chosen]
    if not est:
        raise SplitError("validation split leaves no estimation sites")
    return ds.subset_sites(est), ds.subset_sites(sorted(val))
