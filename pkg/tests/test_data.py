import csv
import itertools
import json
from collections import defaultdict
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tourspend.data import (DIMENSIONS, DataError, ExpenditureCube, QuarterWindow, aggregate, format_cents,
                            format_quarter, parse_attributes, parse_quarter, parse_transactions, quarter_number,
                            read_countries, read_pairs, read_ppp_factors, to_cents, transactions_text,
                            write_transactions)

HEADER = "origin,dest_country,municipality_id,industry,quarter,usd,txn_count\n"


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_single_row(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,Accommodations,2013Q2,100.0,4\n")
    cube = parse_transactions(p)
    assert len(cube) == 1
    assert cube.total_usd == 100.0
    assert cube.total_cents == 10000


def test_duplicates_merged(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,Accommodations,2013Q2,10,1\n"
                                 "USA,COL,BOG,Accommodations,2013Q2,15,2\n")
    cube = parse_transactions(p)
    assert len(cube) == 1
    assert cube.merged_duplicates == 1
    assert cube.total_usd == 25.0
    assert int(cube.frame["txn_count"].iloc[0]) == 3


def test_malformed_row_reports_line(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,Accommodations,2013Q2,10,1\n"
                                 "USA,COL,BOG,Accommodations,2013Q2,abc,1\n")
    with pytest.raises(DataError, match=":3:"):
        parse_transactions(p)


def test_short_row_reports_line(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,2013Q2,10,1\n")
    with pytest.raises(DataError, match=":2:"):
        parse_transactions(p)


def test_domestic_rows_rejected_and_counted(tmp_path):
    p = write(tmp_path, HEADER + "COL,COL,BOG,Accommodations,2013Q2,10,1\n"
                                 "USA,COL,BOG,Accommodations,2013Q2,5,1\n")
    cube = parse_transactions(p)
    assert cube.rejected_domestic == 1
    assert cube.total_usd == 5.0


@pytest.mark.parametrize("bad", ["2013-Q2", "2013Q5", "Q2 2013", "13Q1"])
def test_bad_quarter(tmp_path, bad):
    p = write(tmp_path, HEADER + f"USA,COL,BOG,Accommodations,{bad},10,1\n")
    with pytest.raises(DataError):
        parse_transactions(p)


def test_quarter_outside_window(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,Accommodations,2010Q1,10,1\n")
    with pytest.raises(DataError, match="outside window"):
        parse_transactions(p)
    assert len(parse_transactions(p, window=None)) == 1


def test_negative_amount(tmp_path):
    p = write(tmp_path, HEADER + "USA,COL,BOG,Accommodations,2013Q2,-1,1\n")
    with pytest.raises(DataError):
        parse_transactions(p)


def test_bad_header(tmp_path):
    p = write(tmp_path, "a,b,c\n")
    with pytest.raises(DataError, match="header"):
        parse_transactions(p)


def test_municipality_in_two_countries():
    with pytest.raises(DataError, match="several countries"):
        ExpenditureCube.from_records([
            ("USA", "COL", "M1", "Accommodations", "2013Q2", 1, 1),
            ("USA", "NLD", "M1", "Accommodations", "2013Q2", 1, 1),
        ])


def test_quarter_helpers():
    ordinal = parse_quarter("2012Q1")
    assert format_quarter(ordinal) == "2012Q1"
    assert quarter_number(ordinal) == 1
    assert parse_quarter("2011Q4") + 1 == ordinal
    assert str(QuarterWindow.parse("2011Q4:2014Q3")) == "2011Q4:2014Q3"


def test_cents_round_trip():
    assert to_cents("12.345") == 1235
    assert to_cents("0.1") == 10
    assert format_cents(1235) == "12.35"
    with pytest.raises(DataError):
        to_cents("nan")


def _random_file(path, n_rows, seed):
    rng = np.random.default_rng(seed)
    origins = ["USA", "VEN", "DEU", "FRA", "BRA"]
    dests = {"COL": ["C1", "C2", "C3"], "NLD": ["N1", "N2"]}
    industries = ["Accommodations", "Eating Places", "Toy Stores"]
    quarters = [format_quarter(ordinal) for ordinal in range(parse_quarter("2011Q4"), parse_quarter("2014Q3") + 1)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER.strip().split(","))
        for _ in range(n_rows):
            dest = str(rng.choice(list(dests)))
            w.writerow([str(rng.choice(origins)), dest, str(rng.choice(dests[dest])), str(rng.choice(industries)),
                        str(rng.choice(quarters)), f"{rng.uniform(0, 5000):.2f}", int(rng.integers(0, 50))])


def test_marginals_match_line_by_line_accumulation(tmp_path):
    p = tmp_path / "big.csv"
    _random_file(p, 10_000, seed=3)
    cube = parse_transactions(p)
    oracle = {dim: defaultdict(Decimal) for dim in DIMENSIONS}
    with p.open() as fh:
        for row in csv.DictReader(fh):
            for dim in DIMENSIONS:
                oracle[dim][row[dim]] += Decimal(row["usd"])
    for dim in DIMENSIONS:
        got = aggregate(cube, [dim])
        for key, cents in got.items():
            key = format_quarter(key) if dim == "quarter" else key
            assert Decimal(int(cents)) / 100 == oracle[dim][key]
        assert len(got) == len(oracle[dim])


def test_aggregate_partition_of_sum():
    cube = ExpenditureCube.from_records([
        ("USA", "COL", "M1", "Accommodations", "2013Q2", 1, 1),
        ("USA", "COL", "M2", "Accommodations", "2013Q2", 2, 1),
        ("VEN", "COL", "M1", "Accommodations", "2013Q2", 3, 1),
    ])
    totals = aggregate(cube, ["origin"])
    assert len(totals) == 2
    assert int(totals.sum()) == 600


def test_aggregate_identity_on_all_dimensions(small_synth):
    cube = small_synth.cube
    full = aggregate(cube, list(DIMENSIONS))
    expected = cube.frame.set_index(list(DIMENSIONS))["usd_cents"]
    assert full.sort_index().equals(expected.sort_index())


def test_aggregate_dest_quarter_nested_loop(small_synth):
    cube = small_synth.cube
    oracle = defaultdict(int)
    for rec in cube.frame.itertuples(index=False):
        oracle[(rec.dest_country, rec.quarter)] += rec.usd_cents
    got = aggregate(cube, ["dest_country", "quarter"])
    assert {k: int(v) for k, v in got.items()} == dict(oracle)


def test_aggregate_txn_count_and_errors(small_synth):
    cube = small_synth.cube
    assert int(aggregate(cube, ["origin"], "txn_count").sum()) == int(cube.frame["txn_count"].sum())
    with pytest.raises(ValueError):
        aggregate(cube, [])
    with pytest.raises(ValueError):
        aggregate(cube, ["planet"])
    with pytest.raises(ValueError):
        aggregate(cube, ["origin"], "eur")


def test_aggregate_empty_cube():
    cube = ExpenditureCube.from_records([])
    assert aggregate(cube, ["origin"]).empty


records = st.lists(
    st.tuples(st.sampled_from(["USA", "VEN", "DEU"]), st.sampled_from(["COL", "NLD"]),
              st.integers(0, 3), st.sampled_from(["A", "B", "C"]),
              st.integers(parse_quarter("2011Q4"), parse_quarter("2014Q3")),
              st.integers(0, 10**9), st.integers(0, 100)),
    min_size=1, max_size=40)


def _cube(rows):
    return ExpenditureCube.from_records(
        [(origin, dest, f"{dest}-{muni}", i, ordinal, format_cents(c), n) for origin, dest, muni, i, ordinal, c, n in rows])


@given(records, st.sets(st.sampled_from(DIMENSIONS), min_size=1))
def test_any_subset_sums_to_grand_total(rows, keep):
    cube = _cube(rows)
    assert int(aggregate(cube, sorted(keep)).sum()) == cube.total_cents


@given(records, st.sets(st.sampled_from(DIMENSIONS), min_size=2))
def test_nested_aggregation_consistent(rows, keep):
    cube = _cube(rows)
    keep = [dest for dest in DIMENSIONS if dest in keep]
    inner = keep[:-1]
    coarse = aggregate(cube, keep).groupby(level=inner).sum()
    direct = aggregate(cube, inner)
    assert {k: int(v) for k, v in coarse.items()} == {k: int(v) for k, v in direct.items()}


@given(records)
def test_serialize_round_trip(tmp_path_factory, rows):
    cube = _cube(rows)
    p = tmp_path_factory.mktemp("rt") / "t.csv"
    write_transactions(cube, p)
    again = parse_transactions(p)
    assert again.frame.equals(cube.frame)
    assert transactions_text(again) == p.read_text()


# --- attributes -------------------------------------------------------------------

def test_country_product_rule(tmp_path):
    p = write(tmp_path, "iso3,population,gdp_per_capita\nNLD,16.8e6,5.1e4\n", "c.csv")
    nld = read_countries(p)["NLD"]
    assert nld.gdp_total == pytest.approx(8.568e11, rel=0.01)
    bad = write(tmp_path, "iso3,population,gdp_per_capita,gdp_total\nNLD,16.8e6,5.1e4,9e11\n", "bad.csv")
    with pytest.raises(DataError, match="1%"):
        read_countries(bad)


def test_nonpositive_population(tmp_path):
    p = write(tmp_path, "iso3,population,gdp_per_capita\nNLD,0,5.1e4\n", "c.csv")
    with pytest.raises(DataError):
        read_countries(p)


PAIR_HEADER = "origin,dest,distance_km,common_language,flight_connectivity\n"


def test_pair_symmetry_violation(tmp_path):
    p = write(tmp_path, PAIR_HEADER + "BEL,NLD,170,1,3\nNLD,BEL,180,1,3\n", "p.csv")
    with pytest.raises(DataError, match="asymmetric"):
        read_pairs(p)


def test_negative_distance(tmp_path):
    p = write(tmp_path, PAIR_HEADER + "BEL,NLD,-5,1,3\n", "p.csv")
    with pytest.raises(DataError, match="negative"):
        read_pairs(p)


def _geo(tmp_path, ids):
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"municipality_id": muni, "dest_country": "COL", "name": muni},
         "geometry": None} for muni in ids]}
    p = tmp_path / "g.geojson"
    p.write_text(json.dumps(doc))
    return p


def test_attributes_cross_validation(tmp_path):
    c = write(tmp_path, "iso3,population,gdp_per_capita\nUSA,3e8,5e4\nCOL,4.8e7,7e3\n", "c.csv")
    p = write(tmp_path, PAIR_HEADER + "USA,COL,4000,0,10\n", "p.csv")
    cube = ExpenditureCube.from_records([("USA", "COL", "BOG", "Accommodations", "2013Q2", 1, 1)])
    attrs = parse_attributes(c, p, _geo(tmp_path, ["BOG", "XXX"]), cube)
    assert attrs.unmatched_geo == ["XXX"]
    assert attrs.pair("COL", "USA").distance_km == 4000
    missing = write(tmp_path, PAIR_HEADER + "USA,VEN,2000,0,1\n", "p2.csv")
    with pytest.raises(DataError, match="VEN"):
        parse_attributes(c, missing)


def test_ppp(tmp_path):
    cube = ExpenditureCube.from_records([
        ("USA", "COL", "BOG", "Accommodations", "2013Q2", 100, 1),
        ("USA", "NLD", "AMS", "Accommodations", "2013Q2", 100, 1),
    ])
    p = write(tmp_path, "iso3,factor\nCOL,2.5\n", "ppp.csv")
    adj = cube.ppp_adjusted(read_ppp_factors(p))
    assert adj.total_usd == 350.0
    bad = write(tmp_path, "iso3,factor\nCOL,0\n", "ppp2.csv")
    with pytest.raises(DataError):
        read_ppp_factors(bad)


def test_subset_and_values(small_synth):
    cube = small_synth.cube
    col = cube.subset(dest_country="COL")
    assert col.values("dest_country") == ["COL"]
    two = cube.subset(dest_country=["COL", "NLD"])
    assert set(two.values("dest_country")) == {"COL", "NLD"}
    assert sum(cube.subset(dest_country=dest).total_cents for dest in cube.values("dest_country")) == cube.total_cents


def test_synthetic_files_parse(synth_files):
    cube = parse_transactions(synth_files["transactions"])
    attrs = parse_attributes(synth_files["countries"], synth_files["pairs"], synth_files["geo"], cube)
    assert attrs.unmatched_geo == []
    assert set(cube.values("origin")) <= set(attrs.countries)
    assert all(attrs.pair(origin, dest) for origin, dest in itertools.product(cube.values("origin"), cube.values("dest_country")))
