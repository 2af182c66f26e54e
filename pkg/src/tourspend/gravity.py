"""Origin-level gravity regressions for a single destination country."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import pandas as pd

from .data import Attributes, ExpenditureCube, aggregate, to_usd
from .stats import DesignMatrix, FitResult, ols_fit, stars

logger = logging.getLogger(__name__)

REGRESSORS = ("log_pop", "log_gdppc", "log_distance", "common_language", "log_flights")
LABELS = {
    "log_pop": "log(POP)",
    "log_gdppc": "log(GDPPC)",
    "log_distance": "log(D)",
    "common_language": "Common Language",
    "log_flights": "log(F+1)",
    "const": "Constant",
}


@dataclass(frozen=True)
class GravitySpec:
    include_language: bool = False
    include_flights: bool = False

    @classmethod
    def numbered(cls, n: int) -> "GravitySpec":
        """Table layout: specs 1 and 3 are the base model, 2 and 4 add
        language and flights."""
        if n not in (1, 2, 3, 4):
            raise ValueError("spec must be 1..4")
        extended = n in (2, 4)
        return cls(extended, extended)

    @property
    def regressors(self) -> list[str]:
        cols = ["log_pop", "log_gdppc", "log_distance"]
        if self.include_language:
            cols.append("common_language")
        if self.include_flights:
            cols.append("log_flights")
        return cols


@dataclass
class GravityRows:
    dest: str
    frame: pd.DataFrame
    dropped: list

    def __len__(self) -> int:
        return len(self.frame)


def build_gravity_rows(cube: ExpenditureCube, attrs: Attributes, dest: str) -> GravityRows:
    """One row per origin spending in ``dest``, with log expenditure and the
    origin's size and distance regressors.

    Origins lacking country or pair attributes are dropped with a warning.
    Flights enter as log(F + 1) so unconnected pairs stay defined.
    """
    spend = aggregate(cube.subset(dest_country=dest), ["origin"])
    rows, dropped = [], []
    for origin, cents in spend.items():
        if cents <= 0:
            dropped.append(origin)
            continue
        country = attrs.countries.get(origin)
        pair = attrs.pair(origin, dest)
        if country is None or pair is None:
            dropped.append(origin)
            continue
        rows.append({
            "origin": origin,
            "spend": to_usd(float(cents)),
            "log_spend": math.log(to_usd(float(cents))),
            "log_pop": math.log(country.population),
            "log_gdppc": math.log(country.gdp_per_capita),
            "log_distance": math.log(pair.distance_km),
            "common_language": 1.0 if pair.common_language else 0.0,
            "log_flights": math.log1p(pair.flight_connectivity),
        })
    if dropped:
        logger.warning("%s: dropped %d origins lacking attributes or spend: %s",
                       dest, len(dropped), dropped[:10])
    if not rows:
        raise ValueError(f"no origins with attributes spend in {dest}")
    frame = pd.DataFrame(rows).sort_values("origin").reset_index(drop=True)
    return GravityRows(dest, frame, dropped)


def fit_gravity_model(rows: GravityRows | pd.DataFrame, spec: GravitySpec = GravitySpec()) -> FitResult:
    """OLS of log expenditure on the regressors selected by ``spec`` with a constant."""
    frame = rows.frame if isinstance(rows, GravityRows) else rows
    cols = spec.regressors
    if len(frame) < len(cols) + 2:
        raise ValueError(f"need at least {len(cols) + 2} origins, have {len(frame)}")
    design = DesignMatrix(frame["log_spend"].to_numpy(float),
                          {c: frame[c].to_numpy(float) for c in cols},
                          response_name="log(E)")
    return ols_fit(design, intercept=True)


def table_rows(fit: FitResult) -> list[dict]:
    """Flat rows (term, estimate, std_error, p_value, stars) in table order."""
    order = [c for c in REGRESSORS if c in fit.coefficients] + ["const"]
    out = []
    for term in order:
        p = fit.p_values.get(term, math.nan)
        out.append({
            "term": LABELS.get(term, term),
            "estimate": fit.coefficients[term],
            "std_error": fit.std_errors.get(term, math.nan),
            "p_value": p,
            "stars": stars(p),
        })
    return out
