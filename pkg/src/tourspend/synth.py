"""Synthetic transaction cubes with planted structure.

Origin totals per destination follow a log-linear gravity law with Gaussian
noise in logs; each destination's municipalities fall into planted clusters
that attract origin groups according to mixing weights; industries come in
three planted classes (tourism co-moves with accommodations, commuting is
independent of it, other sits in between).  The same seed always produces
the same files.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .classify import ANCHOR, ATM
from .data import (DEFAULT_WINDOW, ExpenditureCube, QuarterWindow, format_quarter, quarter_number,
                   transactions_text)
from .io import atomic_write_text

DEFAULT_DESTINATIONS = {"COL": 8, "NLD": 10, "ALB": 3, "GRC": 4, "SVN": 3, "HRV": 4}

DEFAULT_INDUSTRIES = {
    ANCHOR: "tourism",
    "Eating Places": "tourism",
    "Bars/Taverns/Nightclubs": "tourism",
    "Jewelry and Giftware": "tourism",
    "T+E Vehicle Rental": "tourism",
    ATM: "commuting",
    "Real Estate Services": "commuting",
    "Drug Store Chains": "commuting",
    "Public Administration": "commuting",
    "Wholesale Trade": "commuting",
    "T+E Airlines": "other",
    "Automotive Fuel": "other",
    "Department Stores": "other",
    "Toy Stores": "other",
    "Shoe Stores": "other",
}

DEFAULT_GRAVITY = {
    "log_pop": 1.0,
    "log_gdppc": 2.0,
    "log_distance": -2.0,
    "common_language": 0.8,
    "log_flights": 0.1,
}


@dataclass
class SynthConfig:
    seed: int = 0
    n_origins: int = 30
    destinations: dict = field(default_factory=lambda: dict(DEFAULT_DESTINATIONS))
    industries: dict = field(default_factory=lambda: dict(DEFAULT_INDUSTRIES))
    gravity: dict = field(default_factory=lambda: dict(DEFAULT_GRAVITY))
    intercept: float = -4.0
    sigma: float = 0.3
    n_clusters: int = 3
    home_weight: float = 1.0
    muni_noise: float = 0.1
    year_noise: float = 0.2
    industry_noise: float = 0.2
    seasonal_amplitude: float = 0.3
    commuting_share: float = 0.2
    atm_loading: float = 0.6
    window: str = str(DEFAULT_WINDOW)

    def validate(self) -> None:
        if self.n_origins < 1:
            raise ValueError("n_origins must be >= 1")
        if not self.destinations or any(n < 1 for n in self.destinations.values()):
            raise ValueError("every destination needs at least one municipality")
        if not self.industries:
            raise ValueError("industry set is empty")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if not 0 <= self.home_weight <= 1:
            raise ValueError("home_weight must lie in [0, 1]")
        if not 0 <= self.commuting_share < 1:
            raise ValueError("commuting_share must lie in [0, 1)")
        weights = self.mixing_weights()
        if not np.allclose(weights.sum(axis=1), 1.0):
            raise ValueError("mixing weights per cluster must sum to 1")

    def mixing_weights(self) -> np.ndarray:
        """cluster x origin-group attraction weights, rows summing to one."""
        k = self.n_clusters
        if k == 1:
            return np.ones((1, 1))
        off = (1.0 - self.home_weight) / (k - 1)
        return np.full((k, k), off) + np.eye(k) * (self.home_weight - off)

    @classmethod
    def from_dict(cls, table: dict) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(table) - known
        if unknown:
            raise ValueError(f"unknown synth settings: {sorted(unknown)}")
        return cls(**table)


@dataclass
class SynthData:
    cube: ExpenditureCube
    countries: pd.DataFrame
    pairs: pd.DataFrame
    geo: dict
    truth: dict

    def write(self, out_dir) -> dict[str, Path]:
        """Write transactions.csv, countries.csv, pairs.csv, municipalities.geojson
        and ground_truth.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "transactions": out / "transactions.csv",
            "countries": out / "countries.csv",
            "pairs": out / "pairs.csv",
            "geo": out / "municipalities.geojson",
            "truth": out / "ground_truth.json",
        }
        atomic_write_text(paths["transactions"], transactions_text(self.cube))
        atomic_write_text(paths["countries"], self.countries.to_csv(index=False, lineterminator="\n", float_format="%.3f"))
        atomic_write_text(paths["pairs"], self.pairs.to_csv(index=False, lineterminator="\n", float_format="%.3f"))
        atomic_write_text(paths["geo"], json.dumps(self.geo, indent=1, sort_keys=True) + "\n")
        atomic_write_text(paths["truth"], json.dumps(self.truth, indent=1, sort_keys=True) + "\n")
        return paths


def _origin_codes(n: int, exclude) -> list[str]:
    # X-prefixed codes are in ISO 3166's user-assigned range
    letters = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    out = []
    for a, b in itertools.product(letters, letters):
        code = f"X{a}{b}"
        if code not in exclude:
            out.append(code)
        if len(out) == n:
            return out
    raise ValueError("too many origins for the synthetic code space")


def generate(config: SynthConfig) -> SynthData:
    config.validate()
    rng = np.random.default_rng(config.seed)
    window = QuarterWindow.parse(config.window)
    quarters = list(range(window.first, window.last + 1))
    dests = sorted(config.destinations)
    origins = _origin_codes(config.n_origins, set(dests))
    industries = sorted(config.industries)
    if ANCHOR not in industries:
        raise ValueError(f"industry set must contain {ANCHOR!r}")
    continents = ["Africa", "Americas", "Asia", "Europe", "Oceania"]

    # countries and pairs; values are rounded before use so the planted law
    # holds exactly for what is written to disk
    country_rows = []
    for code in origins:
        pop = float(round(math.exp(rng.uniform(math.log(3e5), math.log(3e8)))))
        gdppc = round(math.exp(rng.uniform(math.log(800.0), math.log(9e4))), 2)
        country_rows.append((code, pop, gdppc, continents[int(rng.integers(len(continents)))]))
    for code in dests:
        pop = float(round(math.exp(rng.uniform(math.log(2e6), math.log(5e7)))))
        gdppc = round(math.exp(rng.uniform(math.log(4e3), math.log(5e4))), 2)
        country_rows.append((code, pop, gdppc, "Destination"))
    countries = pd.DataFrame(country_rows, columns=["iso3", "population", "gdp_per_capita", "continent"])
    countries["gdp_total"] = countries["population"] * countries["gdp_per_capita"]
    countries = countries[["iso3", "population", "gdp_per_capita", "gdp_total", "continent"]]
    by_code = countries.set_index("iso3")

    pair_rows = []
    log_dist, lang, flights = {}, {}, {}
    for dest in dests:
        for origin in origins:
            dist = round(math.exp(rng.uniform(math.log(300.0), math.log(19000.0))), 3)
            lang[origin, dest] = bool(rng.uniform() < 0.2)
            flights[origin, dest] = int(rng.poisson(5.0))
            log_dist[origin, dest] = math.log(dist)
            pair_rows.append((origin, dest, dist, int(lang[origin, dest]), flights[origin, dest]))
    pairs = pd.DataFrame(pair_rows, columns=["origin", "dest", "distance_km", "common_language",
                                             "flight_connectivity"])

    # gravity totals
    g = config.gravity
    totals, log_totals = {}, {}
    for dest in dests:
        for origin in origins:
            mean = (config.intercept
                    + g.get("log_pop", 0.0) * math.log(by_code.at[origin, "population"])
                    + g.get("log_gdppc", 0.0) * math.log(by_code.at[origin, "gdp_per_capita"])
                    + g.get("log_distance", 0.0) * log_dist[origin, dest]
                    + g.get("common_language", 0.0) * float(lang[origin, dest])
                    + g.get("log_flights", 0.0) * math.log1p(flights[origin, dest]))
            log_totals[origin, dest] = mean + config.sigma * float(rng.standard_normal())
            totals[origin, dest] = math.exp(log_totals[origin, dest])

    # clusters and origin groups
    mix = config.mixing_weights()
    groups = {origin: i % config.n_clusters for i, origin in enumerate(origins)}
    clusters: dict[str, dict[str, int]] = {}
    muni_size: dict[str, float] = {}
    muni_ids: dict[str, list[str]] = {}
    for dest in dests:
        ids = [f"{dest}-{j:03d}" for j in range(config.destinations[dest])]
        muni_ids[dest] = ids
        clusters[dest] = {muni: j % config.n_clusters + 1 for j, muni in enumerate(ids)}
        for muni in ids:
            muni_size[muni] = math.exp(0.3 * float(rng.standard_normal()))

    # origin x cluster preference (Dirichlet-like) times mixing weight
    pref = {}
    for origin in origins:
        raw = rng.gamma(20.0, 1.0, config.n_clusters) * mix[:, groups[origin]]
        pref[origin] = raw / raw.sum()

    # quarter profile
    qn = np.array([quarter_number(quarter) for quarter in quarters])
    season = 1.0 + config.seasonal_amplitude * (np.where(qn == 3, 1.0, 0.0) - np.where(qn == 1, 1.0, 0.0))
    years = np.array([(quarter + 1) // 4 for quarter in quarters])

    # industry intensities per (dest, municipality, quarter) cell
    classes = config.industries
    n_cells = sum(len(muni_ids[dest]) for dest in dests) * len(quarters)
    tourism_factor = rng.standard_normal(n_cells)
    intensity = {}
    for ind in industries:
        own = rng.standard_normal(n_cells)
        cls = classes[ind]
        if cls == "tourism":
            z = tourism_factor + config.industry_noise * own
        elif ind == ATM:
            # weakly tied to visitors, so ATM sits at the top of the commuting p-values
            z = config.atm_loading * tourism_factor + own
        elif cls == "commuting":
            z = own
        else:
            z = (tourism_factor + own) / math.sqrt(2.0)
        intensity[ind] = np.exp(z + float(rng.normal(0.0, 0.5)))
    cell_index = {}
    c = 0
    for dest in dests:
        for muni in muni_ids[dest]:
            for quarter in quarters:
                cell_index[dest, muni, quarter] = c
                c += 1

    # commuting spend is a resident pool per cell, independent of visitor
    # volume; each origin takes its share of the destination's pool
    commuting = [ind for ind in industries if classes[ind] == "commuting"]
    visiting = [ind for ind in industries if classes[ind] != "commuting"]
    dest_total = {dest: sum(totals[origin, dest] for origin in origins) for dest in dests}
    pool_mass = {dest: sum(float(intensity[ind][cell_index[dest, muni, quarter]])
                        for ind in commuting for muni in muni_ids[dest] for quarter in quarters) for dest in dests}
    pool_scale = 0.0
    if commuting:
        pool_scale = config.commuting_share * min(dest_total[dest] / pool_mass[dest] for dest in dests)

    records = []
    for dest in dests:
        ids = muni_ids[dest]
        for origin in origins:
            origin_share = totals[origin, dest] / dest_total[dest]
            year_shock = {y: math.exp(config.year_noise * float(rng.standard_normal())) for y in sorted(set(years))}
            weights, keys, fixed, fixed_keys = [], [], [], []
            for muni in ids:
                jitter = math.exp(config.muni_noise * float(rng.standard_normal()))
                base = pref[origin][clusters[dest][muni] - 1] * muni_size[muni] * jitter
                for qi, quarter in enumerate(quarters):
                    w_q = base * season[qi] * year_shock[int(years[qi])]
                    ci = cell_index[dest, muni, quarter]
                    for ind in visiting:
                        weights.append(w_q * intensity[ind][ci])
                        keys.append((muni, quarter, ind))
                    for ind in commuting:
                        fixed.append(origin_share * pool_scale * intensity[ind][ci])
                        fixed_keys.append((muni, quarter, ind))
            w = np.array(weights)
            resident = np.array(fixed)
            visitor_usd = totals[origin, dest] - resident.sum()
            w = np.concatenate([w / w.sum() * visitor_usd, resident])
            keys = keys + fixed_keys
            cents = _allocate_cents(totals[origin, dest], w)
            for (muni, quarter, ind), amount in zip(keys, cents):
                if amount <= 0:
                    continue
                count = max(1, int(round(amount / 100.0 / 60.0)))
                records.append((origin, dest, muni, ind, quarter, int(amount), count))

    frame = pd.DataFrame(records, columns=["origin", "dest_country", "municipality_id", "industry",
                                           "quarter", "usd_cents", "txn_count"])
    frame = frame.sort_values(["origin", "dest_country", "municipality_id", "industry", "quarter"]).reset_index(drop=True)
    cube = ExpenditureCube(frame, window)

    geo = {"type": "FeatureCollection", "features": []}
    for di, dest in enumerate(dests):
        for j, muni in enumerate(muni_ids[dest]):
            geo["features"].append({
                "type": "Feature",
                "properties": {"municipality_id": muni, "dest_country": dest, "name": f"Municipality {muni}"},
                "geometry": {"type": "Point", "coordinates": [round(-75.0 + 10 * di + 0.1 * j, 6), round(5.0 + 0.1 * j, 6)]},
            })

    truth = {
        "config": asdict(config),
        "gravity": dict(g),
        "intercept": config.intercept,
        "sigma": config.sigma,
        "clusters": clusters,
        "origin_groups": groups,
        "industry_classes": dict(classes),
        "log_totals": {f"{origin}|{dest}": v for (origin, dest), v in sorted(log_totals.items())},
        "window": str(window),
        "quarters": [format_quarter(quarter) for quarter in quarters],
    }
    return SynthData(cube, countries, pairs, geo, truth)


def _allocate_cents(total_usd: float, weights: np.ndarray) -> np.ndarray:
    """Split ``total_usd`` over ``weights`` in whole cents, preserving the
    rounded total (largest-remainder rounding)."""
    total = int(round(total_usd * 100))
    share = weights / weights.sum() * total
    floor = np.floor(share).astype(np.int64)
    rest = total - int(floor.sum())
    if rest > 0:
        order = np.argsort(-(share - floor), kind="stable")[:rest]
        floor[order] += 1
    return floor


# --- planted panels for estimator checks ------------------------------------

def gravity_sample(n_origins: int, coefs: dict, sigma: float, rng: np.random.Generator,
                   intercept: float = -4.0) -> pd.DataFrame:
    """Origin rows drawn from the log-linear gravity law."""
    log_pop = rng.uniform(math.log(3e5), math.log(3e8), n_origins)
    log_gdppc = rng.uniform(math.log(800.0), math.log(9e4), n_origins)
    log_distance = rng.uniform(math.log(300.0), math.log(19000.0), n_origins)
    lang = (rng.uniform(size=n_origins) < 0.2).astype(float)
    log_flights = np.log1p(rng.poisson(5.0, n_origins).astype(float))
    log_spend = (intercept
             + coefs.get("log_pop", 0.0) * log_pop
             + coefs.get("log_gdppc", 0.0) * log_gdppc
             + coefs.get("log_distance", 0.0) * log_distance
             + coefs.get("common_language", 0.0) * lang
             + coefs.get("log_flights", 0.0) * log_flights
             + sigma * rng.standard_normal(n_origins))
    return pd.DataFrame({
        "origin": [f"X{i:03d}" for i in range(n_origins)],
        "spend": np.exp(log_spend),
        "log_spend": log_spend,
        "log_pop": log_pop,
        "log_gdppc": log_gdppc,
        "log_distance": log_distance,
        "common_language": lang,
        "log_flights": log_flights,
    })


def _fixed_effects(rng, n_origins, n_dests):
    return rng.normal(0.0, 1.0, n_origins), rng.normal(0.0, 1.0, n_dests)


def level_panel(n_origins: int, n_dests: int, slope: float, sigma: float,
                rng: np.random.Generator, intercept: float = 1.0) -> pd.DataFrame:
    """Panel where log(1 + spend) is linear in log(1 + predicted) plus
    origin and destination effects and Gaussian noise."""
    origin_effect, dest_effect = _fixed_effects(rng, n_origins, n_dests)
    rows = []
    for i in range(n_origins):
        for j in range(n_dests):
            lp = rng.uniform(2.0, 12.0)
            le = intercept + slope * lp + origin_effect[i] + dest_effect[j] + sigma * rng.standard_normal()
            rows.append((f"X{i:03d}", f"D{j}", math.expm1(le), math.expm1(lp)))
    frame = pd.DataFrame(rows, columns=["origin", "dest", "spend", "predicted"])
    return frame.set_index(["origin", "dest"])


def growth_panel(n_origins: int, n_dests: int, persistence: float, spillover: float, sigma: float,
                 rng: np.random.Generator, intercept: float = 0.5) -> pd.DataFrame:
    """Panel where next-year log spend is linear in this year's log spend and
    log prediction plus origin and destination effects and Gaussian noise."""
    origin_effect, dest_effect = _fixed_effects(rng, n_origins, n_dests)
    rows = []
    for i in range(n_origins):
        for j in range(n_dests):
            le0 = rng.uniform(4.0, 14.0)
            lp0 = le0 + rng.normal(0.0, 1.5)
            le1 = (intercept + persistence * le0 + spillover * lp0 + origin_effect[i] + dest_effect[j]
                   + sigma * rng.standard_normal())
            rows.append((f"X{i:03d}", f"D{j}", math.expm1(le0), math.expm1(le1), math.expm1(lp0)))
    frame = pd.DataFrame(rows, columns=["origin", "dest", "spend_t", "spend_next", "predicted_t"])
    return frame.set_index(["origin", "dest"])


def planted_industry_series(rng: np.random.Generator, n_cells: int = 60, per_group: int = 9,
                            noise: float = 0.1, anchor: str = ANCHOR, atm: str = ATM):
    """Three planted industry groups around an accommodation anchor.

    Tourism: anchor plus ``noise``-scaled noise.  Other: an even mix of the
    anchor and independent noise.  Commuting: independent noise made exactly
    uncorrelated with the anchor.  The ATM series leans slightly on the
    anchor so that its p-value sits between the other and commuting groups.
    Returns ``(series dict, planted labels)``.
    """
    a = rng.standard_normal(n_cells)
    ac = (a - a.mean()) / np.linalg.norm(a - a.mean())
    series = {anchor: a}
    labels = {anchor: "tourism"}
    for i in range(per_group - 1):
        series[f"Tourism {i:02d}"] = a + noise * rng.standard_normal(n_cells)
        labels[f"Tourism {i:02d}"] = "tourism"
    for i in range(per_group):
        series[f"Other {i:02d}"] = a + rng.standard_normal(n_cells)
        labels[f"Other {i:02d}"] = "other"

    def orthogonal():
        z = rng.standard_normal(n_cells)
        z = z - z.mean()
        return z - (z @ ac) * ac

    for i in range(per_group - 1):
        series[f"Commuting {i:02d}"] = orthogonal()
        labels[f"Commuting {i:02d}"] = "commuting"
    series[atm] = orthogonal() + 0.3 * ac * math.sqrt(n_cells)
    labels[atm] = "commuting"
    return series, labels
