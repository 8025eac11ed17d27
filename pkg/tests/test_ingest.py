from __future__ import annotations

import warnings

import numpy as np
import pytest

from fhdgm.errors import (
    CovariateMissingError, DomainError, DuplicationError, ParseError, SiteLookupError, SplitError,
)
from fhdgm.ingest import (
    Coordinate, CsvSchema, ProfileDataset, ProfileRecord, parse_csv, site_index, split_validation, write_csv,
)


def _csv(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _grid_dataset(n, T, q=2):
    recs = []
    for t in range(1, T + 1):
        for i in range(n):
            recs.append(ProfileRecord(Coordinate(float(i), 0.5 * i, "km"), t, np.arange(q, dtype=float),
                                      np.full(q, float(i + t)), {"const": np.ones(q)}))
    return ProfileDataset(recs, (0.0, float(q)), ["const"])


def test_two_rows_make_one_profile(tmp_path):
    p = _csv(tmp_path, "coord_y,coord_x,time,h,y\n45,9,1,0,1.0\n45,9,1,12,2.0\n")
    ds = parse_csv(p)
    assert len(ds.records) == 1
    rec = ds.records[0]
    assert rec.q == 2
    np.testing.assert_array_equal(rec.h, [0, 12])
    np.testing.assert_array_equal(rec.y, [1.0, 2.0])


def test_all_missing_group_dropped_with_warning(tmp_path):
    p = _csv(tmp_path, "coord_y,coord_x,time,h,y\n45,9,1,0,NaN\n")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        ds = parse_csv(p, CsvSchema(domain=(0.0, 24.0)))
    assert len(ds.records) == 0
    assert ds.n_dropped == 1
    assert len([x for x in w if "removed 1" in str(x.message)]) == 1


def test_ozone_layout_shape(tmp_path):
    lines = ["coord_y,coord_x,time,h,y"]
    for i in range(12):
        for t in range(1, 1097):
            lines.append(f"{45 + 0.1 * i},{9 + 0.05 * i},{t},0,1")
    ds = parse_csv(_csv(tmp_path, "\n".join(lines) + "\n"), CsvSchema(domain=(0.0, 23.0)))
    assert ds.n == 12 and ds.T == 1096


def test_iso_dates_are_ranked(tmp_path):
    p = _csv(tmp_path, "coord_y,coord_x,time,h,y\n1,1,2020-01-03,0,1\n1,1,2020-01-01,0,2\n")
    ds = parse_csv(p, CsvSchema(domain=(0, 1)))
    assert sorted(r.time_index for r in ds.records) == [1, 2]


def test_covariates_read_by_prefix(tmp_path):
    p = _csv(tmp_path, "coord_y,coord_x,time,h,y,x_beta_const,x_beta_temp\n1,1,1,0,3,1,20\n1,1,1,1,4,1,21\n")
    ds = parse_csv(p)
    assert ds.covariate_names == ("const", "temp")
    np.testing.assert_array_equal(ds.records[0].covariates["temp"], [20, 21])


@pytest.mark.parametrize("text, err", [
    ("coord_y,coord_x,time,h\n1,1,1,0\n", ParseError),
    ("coord_y,coord_x,time,h,y\n1,1,1,abc,1\n", ParseError),
    ("coord_y,coord_x,time,h,y\n1,1,1,0,1\n1,1,1,0,2\n", DuplicationError),
    ("coord_y,coord_x,time,h,y,x_beta_a\n1,1,1,0,1,\n", CovariateMissingError),
    ("coord_y,coord_x,time,h,y\n1,1,0,0,1\n", ParseError),
])
def test_parse_errors(tmp_path, text, err):
    with pytest.raises(err):
        parse_csv(_csv(tmp_path, text))


def test_h_outside_declared_domain(tmp_path):
    with pytest.raises(DomainError):
        parse_csv(_csv(tmp_path, "coord_y,coord_x,time,h,y\n1,1,1,30,1\n"), CsvSchema(domain=(0, 24)))


def test_parse_error_carries_row(tmp_path):
    with pytest.raises(ParseError) as e:
        parse_csv(_csv(tmp_path, "coord_y,coord_x,time,h,y\n1,1,1,0,1\n1,1,1,x,1\n"))
    assert e.value.row == 3


def test_csv_round_trip(tmp_path):
    ds = _grid_dataset(3, 4)
    p = tmp_path / "rt.csv"
    write_csv(ds, p)
    back = parse_csv(p, CsvSchema(unit="km", domain=ds.domain))
    assert back.equals(ds)


def test_site_index_rules():
    ds = _grid_dataset(4, 2)
    assert site_index(ds, ds.sites[0]) == 0
    assert site_index(ds, ds.sites[-1]) == ds.n - 1
    c = ds.sites[1]
    with pytest.raises(SiteLookupError):
        site_index(ds, Coordinate(c.lat_or_y + 1e-12, c.lon_or_x, "km"))


def test_split_ozone_layout():
    ds = _grid_dataset(12, 2)
    est, val = split_validation(ds, [0, 6, 9])
    assert est.n == 9 and val.n == 3
    assert val.origin == (0, 6, 9)
    assert len(est.records) + len(val.records) == len(ds.records)


def test_split_edge_cases():
    ds = _grid_dataset(2, 2)
    est, val = split_validation(ds, [0])
    assert est.n == 1 and val.n == 1
    with pytest.raises(SplitError):
        split_validation(ds, [0, 1])
    with pytest.raises(SplitError):
        split_validation(ds, [])
    with pytest.raises(SplitError):
        split_validation(ds, [5])


def test_record_validation():
    with pytest.raises(DuplicationError):
        ProfileRecord(Coordinate(0, 0), 1, [0, 0], [1, 2])
    with pytest.raises(DomainError):
        ProfileRecord(Coordinate(0, 0), 0, [0], [1])
    with pytest.raises(DomainError):
        Coordinate(95, 0, "deg")


def test_same_point_on_sphere_rejected():
    recs = [ProfileRecord(Coordinate(90, 10), 1, [0], [1]), ProfileRecord(Coordinate(90, -20), 1, [0], [1])]
    with pytest.raises(DuplicationError):
        ProfileDataset(recs, (0, 1))
