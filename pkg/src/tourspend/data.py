"""Ingestion and indexing of aggregated foreign card-transaction records.

Amounts are held as integer cents so that every marginal sum over the cube is
exact; numerical modules convert to float USD at their boundary.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

DIMENSIONS = ("origin", "dest_country", "municipality_id", "industry", "quarter")
TRANSACTION_HEADER = (*DIMENSIONS, "usd", "txn_count")
COUNTRY_HEADER = ("iso3", "population", "gdp_per_capita")
PAIR_HEADER = ("origin", "dest", "distance_km", "common_language", "flight_connectivity")

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")
_CENT = Decimal("0.01")


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


def parse_quarter(text: str) -> int:
    """'2013Q2' -> ordinal ``year * 4 + (quarter - 1)``."""
    match = _QUARTER_RE.match(text.strip())
    if match is None:
        raise DataError(f"unknown quarter format {text!r} (expected YYYYQn)")
    return int(match.group(1)) * 4 + int(match.group(2)) - 1


def format_quarter(ordinal: int) -> str:
    return f"{ordinal // 4}Q{ordinal % 4 + 1}"


def quarter_number(ordinal):
    """Calendar quarter 1..4 of an ordinal; works on arrays and Series."""
    return ordinal % 4 + 1


def to_cents(text: str) -> int:
    try:
        value = Decimal(text.strip())
    except InvalidOperation as exc:
        raise DataError(f"invalid decimal {text!r}") from exc
    if not value.is_finite():
        raise DataError(f"invalid decimal {text!r}")
    return int(value.quantize(_CENT, rounding=ROUND_HALF_UP) * 100)


def format_cents(cents: int) -> str:
    sign = "-" if cents < 0 else ""
    whole, frac = divmod(abs(int(cents)), 100)
    return f"{sign}{whole}.{frac:02d}"


def to_usd(values):
    """Convert cent totals (scalar, array or Series) to float USD."""
    return values / 100.0


@dataclass(frozen=True)
class QuarterWindow:
    """Inclusive range of quarter ordinals."""

    first: int
    last: int

    @classmethod
    def parse(cls, text: str) -> "QuarterWindow":
        lo, _, hi = text.partition(":")
        if not hi:
            raise DataError(f"window must look like 2011Q4:2014Q3, got {text!r}")
        window = cls(parse_quarter(lo), parse_quarter(hi))
        if window.first > window.last:
            raise DataError(f"empty window {text!r}")
        return window

    def __contains__(self, ordinal: int) -> bool:
        return self.first <= ordinal <= self.last

    def __str__(self) -> str:
        return f"{format_quarter(self.first)}:{format_quarter(self.last)}"


# Default observation window, 2011Q4 through 2014Q3.
DEFAULT_WINDOW = QuarterWindow(parse_quarter("2011Q4"), parse_quarter("2014Q3"))


@dataclass(frozen=True)
class ExpenditureCube:
    """Validated collection of (origin, destination, municipality, industry,
    quarter) cells.

    ``frame`` holds one row per unique key with integer columns ``usd_cents``
    and ``txn_count``; ``quarter`` is the integer ordinal.  Treat the frame as
    read-only.
    """

    frame: pd.DataFrame
    window: QuarterWindow | None = None
    merged_duplicates: int = 0
    rejected_domestic: int = 0

    def __post_init__(self):
        muni = self.frame.groupby("municipality_id", sort=False)["dest_country"].nunique()
        bad = sorted(muni.index[muni > 1])
        if bad:
            raise DataError(f"municipalities mapped to several countries: {bad}")

    @classmethod
    def from_records(
        cls,
        records: Iterable[Sequence],
        window: QuarterWindow | None = None,
    ) -> "ExpenditureCube":
        """Build from (origin, dest, municipality, industry, quarter, usd, count)
        tuples; ``quarter`` may be an ordinal or ``'YYYYQn'`` and ``usd`` a
        number or decimal string."""
        rows = []
        for rec in records:
            origin, dest, muni, industry, quarter, usd, count = rec
            ordinal = parse_quarter(quarter) if isinstance(quarter, str) else int(quarter)
            rows.append((origin, dest, str(muni), industry, ordinal, to_cents(str(usd)), int(count)))
        return cls._build(rows, window=window)

    @classmethod
    def _build(cls, rows, window=None, rejected=0) -> "ExpenditureCube":
        frame = pd.DataFrame(rows, columns=[*DIMENSIONS, "usd_cents", "txn_count"])
        frame = frame.astype({"quarter": "int64", "usd_cents": "int64", "txn_count": "int64"})
        if (frame["usd_cents"] < 0).any() or (frame["txn_count"] < 0).any():
            raise DataError("negative usd or txn_count")
        if (frame["origin"] == frame["dest_country"]).any():
            raise DataError("domestic record (origin == dest_country)")
        if window is not None and len(frame):
            outside = ~frame["quarter"].between(window.first, window.last)
            if outside.any():
                first = format_quarter(int(frame.loc[outside, "quarter"].iloc[0]))
                raise DataError(f"quarter {first} outside window {window}")
        n_before = len(frame)
        frame = (
            frame.groupby(list(DIMENSIONS), sort=True, as_index=False)[["usd_cents", "txn_count"]]
            .sum()
            .reset_index(drop=True)
        )
        return cls(frame, window, n_before - len(frame), rejected)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def total_cents(self) -> int:
        return int(self.frame["usd_cents"].sum())

    @property
    def total_usd(self) -> float:
        return self.total_cents / 100.0

    def values(self, dimension: str) -> list:
        """Sorted distinct values of one dimension."""
        return sorted(self.frame[dimension].unique().tolist())

    def subset(self, **criteria) -> "ExpenditureCube":
        """Restrict to rows matching ``dimension=value`` or ``dimension=[values]``."""
        mask = np.ones(len(self.frame), dtype=bool)
        for dim, val in criteria.items():
            if dim not in DIMENSIONS:
                raise KeyError(dim)
            col = self.frame[dim]
            if isinstance(val, (list, tuple, set, frozenset)):
                mask &= col.isin(list(val)).to_numpy()
            else:
                mask &= (col == val).to_numpy()
        return ExpenditureCube(self.frame.loc[mask].reset_index(drop=True), self.window)

    def ppp_adjusted(self, factors: dict[str, float]) -> "ExpenditureCube":
        """Scale each record's USD by its destination's PPP factor.

        Countries without a factor are left unscaled.
        """
        frame = self.frame.copy()
        scale = frame["dest_country"].map(factors).fillna(1.0).to_numpy()
        frame["usd_cents"] = np.rint(frame["usd_cents"].to_numpy() * scale).astype("int64")
        return ExpenditureCube(frame, self.window)


def parse_transactions(path, window: QuarterWindow | None = DEFAULT_WINDOW) -> ExpenditureCube:
    """Read a transactions CSV into a cube.

    Rows whose origin equals the destination are rejected and counted; rows
    sharing a key are merged by summation and counted.
    """
    path = Path(path)
    rows = []
    rejected = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRANSACTION_HEADER:
            raise DataError(f"{path}: header must be {','.join(TRANSACTION_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRANSACTION_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(TRANSACTION_HEADER)} fields, got {len(row)}")
            origin, dest, muni, industry, quarter, usd, count = (c.strip() for c in row)
            try:
                ordinal = parse_quarter(quarter)
                cents = to_cents(usd)
                n = int(count)
            except (DataError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if cents < 0 or n < 0:
                raise DataError(f"{path}:{lineno}: negative usd or txn_count")
            if not origin or not dest or not muni or not industry:
                raise DataError(f"{path}:{lineno}: empty key field")
            if window is not None and ordinal not in window:
                raise DataError(f"{path}:{lineno}: quarter {quarter} outside window {window}")
            if origin == dest:
                rejected += 1
                continue
            rows.append((origin, dest, muni, industry, ordinal, cents, n))
    cube = ExpenditureCube._build(rows, window=window, rejected=rejected)
    if cube.merged_duplicates:
        logger.warning("%s: merged %d duplicate keys", path, cube.merged_duplicates)
    if rejected:
        logger.warning("%s: rejected %d domestic rows", path, rejected)
    return cube


def transactions_text(cube: ExpenditureCube) -> str:
    """The cube in the transactions CSV schema (sorted by key)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSACTION_HEADER)
    for rec in cube.frame.itertuples(index=False):
        w.writerow(
            [rec.origin, rec.dest_country, rec.municipality_id, rec.industry,
             format_quarter(rec.quarter), format_cents(rec.usd_cents), rec.txn_count]
        )
    return buf.getvalue()


def write_transactions(cube: ExpenditureCube, path) -> None:
    Path(path).write_text(transactions_text(cube), encoding="utf-8")


def aggregate(cube: ExpenditureCube, keep: Sequence[str], measure: str = "usd") -> pd.Series:
    """Sum ``measure`` over every dimension not in ``keep``.

    Returns an integer Series indexed by the kept dimensions (in
    ``DIMENSIONS`` order); ``usd`` totals are in cents.
    """
    unknown = set(keep) - set(DIMENSIONS)
    if unknown:
        raise ValueError(f"unknown dimensions {sorted(unknown)}")
    keep = [dim for dim in DIMENSIONS if dim in set(keep)]
    if not keep:
        raise ValueError("keep must name at least one dimension")
    columns = {"usd": "usd_cents", "txn_count": "txn_count"}
    if measure not in columns:
        raise ValueError(f"measure must be 'usd' or 'txn_count', got {measure!r}")
    column = columns[measure]
    return cube.frame.groupby(keep, sort=True)[column].sum()


@dataclass(frozen=True)
class CountryAttributes:
    iso3: str
    population: float
    gdp_per_capita: float
    gdp_total: float
    continent: str = ""


@dataclass(frozen=True)
class PairAttributes:
    origin: str
    dest: str
    distance_km: float
    common_language: bool
    flight_connectivity: float


@dataclass(frozen=True)
class MunicipalityGeo:
    municipality_id: str
    dest_country: str
    name: str
    geometry: dict | None


@dataclass
class Attributes:
    """Country, pair and municipality attributes keyed for lookup."""

    countries: dict[str, CountryAttributes] = field(default_factory=dict)
    pairs: dict[tuple[str, str], PairAttributes] = field(default_factory=dict)
    geo: dict[str, MunicipalityGeo] = field(default_factory=dict)
    unmatched_geo: list[str] = field(default_factory=list)

    def pair(self, origin: str, dest: str) -> PairAttributes | None:
        hit = self.pairs.get((origin, dest))
        if hit is None:
            rev = self.pairs.get((dest, origin))
            if rev is not None:
                hit = PairAttributes(origin, dest, rev.distance_km, rev.common_language,
                                     rev.flight_connectivity)
        return hit


def _read_csv_dicts(path: Path, required: Sequence[str]) -> list[tuple[int, dict]]:
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = [f.strip() for f in (reader.fieldnames or [])]
        missing = [c for c in required if c not in fields]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        reader.fieldnames = fields
        return [(i, {k: (v or "").strip() for k, v in row.items()}) for i, row in enumerate(reader, start=2)]


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in {"1", "true", "yes", "y", "lowered"}:
        return True
    if lowered in {"0", "false", "no", "n", "f", ""}:
        return False
    raise DataError(f"invalid boolean {text!r}")


def read_countries(path) -> dict[str, CountryAttributes]:
    path = Path(path)
    out = {}
    for lineno, row in _read_csv_dicts(path, COUNTRY_HEADER):
        try:
            pop = float(row["population"])
            gdppc = float(row["gdp_per_capita"])
            total = float(row["gdp_total"]) if row.get("gdp_total") else pop * gdppc
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not (pop > 0 and gdppc > 0):
            raise DataError(f"{path}:{lineno}: population and gdp_per_capita must be positive")
        if not math.isclose(total, pop * gdppc, rel_tol=0.01):
            raise DataError(f"{path}:{lineno}: gdp_total {total} differs from population x gdp_per_capita by more than 1%")
        iso = row["iso3"]
        out[iso] = CountryAttributes(iso, pop, gdppc, total, row.get("continent", ""))
    return out


def read_pairs(path) -> dict[tuple[str, str], PairAttributes]:
    path = Path(path)
    out: dict[tuple[str, str], PairAttributes] = {}
    for lineno, row in _read_csv_dicts(path, PAIR_HEADER):
        try:
            dist = float(row["distance_km"])
            flights = float(row["flight_connectivity"] or 0.0)
            lang = _parse_bool(row["common_language"])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        origin, dest = row["origin"], row["dest"]
        if dist < 0:
            raise DataError(f"{path}:{lineno}: negative distance {dist}")
        if origin != dest and dist == 0:
            raise DataError(f"{path}:{lineno}: zero distance between distinct countries {origin},{dest}")
        if flights < 0:
            raise DataError(f"{path}:{lineno}: negative flight connectivity")
        out[(origin, dest)] = PairAttributes(origin, dest, dist, lang, flights)
    for (origin, dest), pair in out.items():
        rev = out.get((dest, origin))
        if rev is not None and rev.distance_km != pair.distance_km:
            raise DataError(f"asymmetric distance {origin}->{dest}={pair.distance_km} vs {dest}->{origin}={rev.distance_km}")
    return out


def read_geo(path) -> dict[str, MunicipalityGeo]:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: not a GeoJSON FeatureCollection")
    out = {}
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        try:
            key = str(props["municipality_id"])
            out[key] = MunicipalityGeo(key, props["dest_country"], props.get("name", key), feat.get("geometry"))
        except KeyError as exc:
            raise DataError(f"{path}: feature {i} lacks property {exc}") from exc
    return out


def parse_attributes(country_path, pair_path, geo_path=None, cube: ExpenditureCube | None = None) -> Attributes:
    """Read and cross-validate the three attribute files.

    Every country referenced by the pair file must exist in the country file.
    Geo features whose municipality is absent from ``cube`` (when given) are
    listed in ``unmatched_geo``; they are not an error.
    """
    countries = read_countries(country_path)
    pairs = read_pairs(pair_path)
    missing = sorted({c for key in pairs for c in key} - set(countries))
    if missing:
        raise DataError(f"countries in pair file missing from country file: {', '.join(missing)}")
    geo = read_geo(geo_path) if geo_path is not None else {}
    unmatched: list[str] = []
    if cube is not None and geo:
        known = dict(zip(cube.frame["municipality_id"], cube.frame["dest_country"]))
        for key, g in sorted(geo.items()):
            if known.get(key) != g.dest_country:
                unmatched.append(key)
        if unmatched:
            logger.warning("%d geo features do not match a cube municipality", len(unmatched))
    return Attributes(countries, pairs, geo, unmatched)


def read_ppp_factors(path) -> dict[str, float]:
    """CSV ``iso3,factor``; factors are multiplicative and must be positive."""
    path = Path(path)
    out = {}
    for lineno, row in _read_csv_dicts(path, ("iso3", "factor")):
        f = float(row["factor"])
        if not f > 0:
            raise DataError(f"{path}:{lineno}: PPP factor must be positive")
        out[row["iso3"]] = f
    return out
