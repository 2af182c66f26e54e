"""Origin Space and Destination Space.

Origins are compared by how their spend spreads over destination countries;
municipalities by the mix of origins spending in them.  The Origin Space
feeds a similarity-weighted expenditure prediction that is tested with
two-way fixed-effects regressions in levels and in growth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data import ExpenditureCube, CountryAttributes, aggregate, to_usd
from .stats import DesignMatrix, FitResult, fe_ols_fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntityVectors:
    """One expenditure vector (USD) per entity over a shared category order."""

    axis: str
    entities: list
    categories: list
    values: np.ndarray

    def vector(self, entity) -> pd.Series:
        return pd.Series(self.values[self.entities.index(entity)], index=self.categories)


def build_entity_vectors(cube: ExpenditureCube, axis: str, dest: str | None = None) -> EntityVectors:
    """Expenditure vectors for origins (over destination countries) or for
    municipalities (over origins, optionally within one ``dest``)."""
    if len(cube) == 0:
        raise ValueError("empty cube")
    if axis == "origin":
        rows, cols = "origin", "dest_country"
    elif axis == "destination":
        if dest is not None:
            cube = cube.subset(dest_country=dest)
            if len(cube) == 0:
                raise ValueError(f"no records for destination {dest}")
        rows, cols = "municipality_id", "origin"
    else:
        raise ValueError(f"axis must be 'origin' or 'destination', got {axis!r}")
    table = aggregate(cube, [rows, cols]).unstack(cols, fill_value=0)
    table = table.sort_index().sort_index(axis=1)
    return EntityVectors(axis, table.index.tolist(), table.columns.tolist(),
                         to_usd(table.to_numpy(dtype=float)))


@dataclass(frozen=True)
class SimMatrix:
    entities: list
    values: np.ndarray
    excluded: tuple = ()

    def get(self, a, b) -> float:
        return float(self.values[self.entities.index(a), self.entities.index(b)])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.entities, columns=self.entities)


def similarity(vectors: EntityVectors, transform: str = "log1p") -> SimMatrix:
    """Pairwise Pearson correlation of the (log1p-transformed) vectors.

    Entities whose transformed vector is constant are dropped with a warning.
    """
    if transform == "log1p":
        logged = np.log1p(vectors.values)
    elif transform == "raw":
        logged = np.array(vectors.values, dtype=float)
    else:
        raise ValueError(f"unknown transform {transform!r}")
    keep = [i for i in range(len(vectors.entities)) if np.ptp(logged[i]) > 0]
    excluded = tuple(vectors.entities[i] for i in range(len(vectors.entities)) if i not in set(keep))
    if excluded:
        logger.warning("excluded %d zero-variance entities: %s", len(excluded), list(excluded)[:10])
    if len(keep) < 2:
        raise ValueError("need at least two entities with non-constant vectors")
    if logged.shape[1] < 3:
        raise ValueError("need at least three categories to correlate")
    kept = logged[keep]
    kept = kept - kept.mean(axis=1, keepdims=True)
    kept /= np.sqrt((kept * kept).sum(axis=1, keepdims=True))
    S = kept @ kept.T
    S = np.clip((S + S.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(S, 1.0)
    return SimMatrix([vectors.entities[i] for i in keep], S, excluded)


@dataclass
class SpaceGraph:
    """Undirected top-k similarity network.

    ``edges`` holds ``(a, b, similarity)`` with ``a < b``, sorted.
    """

    nodes: dict
    edges: list

    def neighbours(self, node) -> list:
        return sorted({b for a, b, _ in self.edges if a == node} | {a for a, b, _ in self.edges if b == node})


def topk_graph(sim: SimMatrix, k: int = 3, node_attrs: Mapping | None = None) -> SpaceGraph:
    """Link every entity to its ``k`` most similar peers, then take the union
    as an undirected edge set.  Ties at the cut go to the smaller key."""
    n = len(sim.entities)
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < {n}")
    order = sorted(range(n), key=lambda i: sim.entities[i])
    edges = {}
    for i in range(n):
        peers = sorted((j for j in order if j != i), key=lambda j: (-sim.values[i, j], sim.entities[j]))
        for j in peers[:k]:
            a, b = sorted((sim.entities[i], sim.entities[j]))
            edges[(a, b)] = float(sim.values[i, j])
    node_attrs = node_attrs or {}
    nodes = {e: dict(node_attrs.get(e, {})) for e in sorted(sim.entities)}
    return SpaceGraph(nodes, [(a, b, w) for (a, b), w in sorted(edges.items())])


def attractiveness(cube: ExpenditureCube, countries: Mapping[str, CountryAttributes]) -> pd.DataFrame:
    """USD spent by each origin in each destination over the origin's GDP,
    normalised to sum to one across origins within each destination.

    Returns an origin x destination frame; origins without GDP are omitted.
    """
    spend = to_usd(aggregate(cube, ["origin", "dest_country"]).unstack(fill_value=0).astype(float))
    known = [origin for origin in spend.index if origin in countries]
    missing = sorted(set(spend.index) - set(known))
    if missing:
        logger.warning("no GDP for %d origins: %s", len(missing), missing[:10])
    spend = spend.loc[known]
    gdp = pd.Series({origin: countries[origin].gdp_total for origin in known})
    ratio = spend.div(gdp, axis=0)
    col_sum = ratio.sum(axis=0)
    return ratio.div(col_sum.where(col_sum > 0), axis=1).fillna(0.0)


def node_attributes(cube: ExpenditureCube, countries: Mapping[str, CountryAttributes]) -> dict:
    attr = attractiveness(cube, countries)
    out = {}
    for origin in attr.index:
        props = {"continent": countries[origin].continent or ""}
        for dest in attr.columns:
            props[f"attractiveness_{dest}"] = float(attr.loc[origin, dest])
        out[origin] = props
    return out


# --- prediction ------------------------------------------------------------

def expenditure_matrix(cube: ExpenditureCube, origins: Sequence | None = None) -> pd.DataFrame:
    """Origin x destination USD totals, zero-filled over ``origins``."""
    spend = to_usd(aggregate(cube, ["origin", "dest_country"]).unstack(fill_value=0).astype(float))
    if origins is not None:
        spend = spend.reindex(list(origins), fill_value=0.0)
    return spend.sort_index().sort_index(axis=1)


@dataclass
class Prediction:
    values: dict
    undefined: list = field(default_factory=list)


def predict_expenditure(sim: SimMatrix, spend: Mapping | pd.Series, dest: str,
                        clamp_negative: bool = True) -> Prediction:
    """Similarity-weighted mean of the other origins' spend in ``dest``.

    ``spend`` maps ``(origin, dest)`` to USD (missing pairs count as zero).
    Negative similarities are set to zero unless ``clamp_negative`` is False.
    Origins whose weight sum is not positive are listed in ``undefined``.
    """
    observed = np.array([float(spend.get((origin, dest), 0.0)) for origin in sim.entities])
    W = np.array(sim.values, dtype=float)
    if clamp_negative:
        W = np.where(W > 0, W, 0.0)
    np.fill_diagonal(W, 0.0)
    den = W.sum(axis=1)
    values, undefined = {}, []
    defined = den > 0 if clamp_negative else den != 0
    for i, origin in enumerate(sim.entities):
        if defined[i]:
            # normalise first so a lone neighbour gets weight exactly 1
            values[origin] = float((W[i] / den[i]) @ observed)
        else:
            undefined.append(origin)
    if undefined:
        logger.warning("prediction undefined for %d origins in %s", len(undefined), dest)
    return Prediction(values, undefined)


def prediction_panel(sim: SimMatrix, spend: pd.DataFrame, clamp_negative: bool = True) -> pd.DataFrame:
    """Long frame (origin, dest, spend, predicted) over every origin in ``sim``
    and every destination column of ``spend``; rows with undefined
    predictions are dropped."""
    lookup = {key: float(v) for key, v in spend.stack().items()}
    rows = []
    for dest in spend.columns:
        pred = predict_expenditure(sim, lookup, dest, clamp_negative)
        for origin in sim.entities:
            if origin in pred.values:
                rows.append((origin, dest, lookup.get((origin, dest), 0.0), pred.values[origin]))
    return pd.DataFrame(rows, columns=["origin", "dest", "spend", "predicted"])


def _aligned(*series: pd.Series) -> list[pd.Series]:
    idx = series[0].index
    for s in series[1:]:
        idx = idx.intersection(s.index)
    idx = idx.sort_values()
    return [s.reindex(idx) for s in series]


def fit_level_model(spend: pd.Series, predicted: pd.Series) -> FitResult:
    """log(1 + spend) on log(1 + predicted) with origin and destination
    fixed effects.

    Both series are indexed by ``(origin, dest)``.
    """
    spend, predicted = _aligned(spend, predicted)
    origins = spend.index.get_level_values(0)
    dests = spend.index.get_level_values(1)
    if origins.nunique() < 2 or dests.nunique() < 2:
        raise ValueError("need at least two origins and two destinations")
    design = DesignMatrix(
        np.log1p(spend.to_numpy(float)),
        {"ln(P+1)": np.log1p(predicted.to_numpy(float))},
        {"origin": np.asarray(origins), "dest": np.asarray(dests)},
        response_name="ln(E+1)",
    )
    return fe_ols_fit(design)


def fit_growth_model(spend_t: pd.Series, spend_next: pd.Series, predicted_t: pd.Series) -> FitResult:
    """Next-year log spend on this year's log spend and log prediction, with
    two-way fixed effects."""
    spend_t, spend_next, predicted_t = _aligned(spend_t, spend_next, predicted_t)
    if len(spend_t) == 0:
        raise ValueError("years share no origin-destination pairs")
    design = DesignMatrix(
        np.log1p(spend_next.to_numpy(float)),
        {"ln(E_t+1)": np.log1p(spend_t.to_numpy(float)), "ln(P_t+1)": np.log1p(predicted_t.to_numpy(float))},
        {"origin": np.asarray(spend_t.index.get_level_values(0)),
         "dest": np.asarray(spend_t.index.get_level_values(1))},
        response_name="ln(E_t+1 + 1)",
    )
    return fe_ols_fit(design)


def data_year(quarter_ordinal):
    """A data year runs from Q4 of the previous calendar year through Q3."""
    return (quarter_ordinal + 1) // 4


def split_years(cube: ExpenditureCube) -> dict[int, ExpenditureCube]:
    years = data_year(cube.frame["quarter"])
    return {int(y): ExpenditureCube(cube.frame.loc[years == y].reset_index(drop=True), cube.window)
            for y in sorted(years.unique())}


def growth_panels(cube: ExpenditureCube, transform: str = "log1p",
                  clamp_negative: bool = True) -> dict[int, pd.DataFrame]:
    """Keyed by the later year of each consecutive pair: frame (origin, dest,
    spend_t, spend_next, predicted_t) where the prediction uses only the
    earlier year's data."""
    years = split_years(cube)
    keys = sorted(years)
    out = {}
    for year, next_year in zip(keys, keys[1:]):
        if next_year != year + 1:
            continue
        now, later = years[year], years[next_year]
        sim = similarity(build_entity_vectors(now, "origin"), transform)
        dests = sorted(set(now.values("dest_country")) & set(later.values("dest_country")))
        spend_t = expenditure_matrix(now, sim.entities).reindex(columns=dests, fill_value=0.0)
        spend_next = expenditure_matrix(later, sim.entities).reindex(columns=dests, fill_value=0.0)
        panel = prediction_panel(sim, spend_t, clamp_negative)
        panel = panel.rename(columns={"spend": "spend_t", "predicted": "predicted_t"})
        panel["spend_next"] = [float(spend_next.loc[origin, dest])
                               for origin, dest in zip(panel["origin"], panel["dest"])]
        out[next_year] = panel[["origin", "dest", "spend_t", "spend_next", "predicted_t"]]
    return out


# --- destination clusters ---------------------------------------------------

@dataclass
class ClusterTable:
    """Origin Relative Expenditure per (cluster, origin) and the analogous
    share per (cluster, industry)."""

    assignment: dict
    origin_shares: pd.DataFrame
    industry_shares: pd.DataFrame

    def top(self, by: str = "origin", n: int = 5, min_usd: float = 0.0) -> pd.DataFrame:
        """Top-``n`` rows per cluster by share, skipping rows below ``min_usd``."""
        table = self.origin_shares if by == "origin" else self.industry_shares
        keep = table[table["usd"] >= min_usd]
        return (keep.sort_values(["cluster", "share", by], ascending=[True, False, True])
                .groupby("cluster", sort=True).head(n).reset_index(drop=True))


def origin_relative_expenditure(cube: ExpenditureCube, partition: Mapping[str, int],
                                dest: str | None = None) -> ClusterTable:
    """Share of each origin's (and each industry's) spend in ``dest`` that
    falls in each cluster of ``partition`` (municipality -> cluster)."""
    if dest is not None:
        cube = cube.subset(dest_country=dest)
    munis = set(cube.values("municipality_id"))
    missing = sorted(munis - set(partition))
    if missing:
        raise ValueError(f"partition does not cover municipalities: {missing[:10]}")
    frame = cube.frame
    cluster = frame["municipality_id"].map(partition)

    def shares(dim: str) -> pd.DataFrame:
        by = frame.groupby([cluster.rename("cluster"), frame[dim]])["usd_cents"].sum()
        total = frame.groupby(dim)["usd_cents"].sum()
        total = total[total > 0]
        by = by[by.index.get_level_values(dim).isin(total.index)]
        out = by.rename("usd_cents").reset_index()
        out["share"] = out["usd_cents"].to_numpy() / out[dim].map(total).to_numpy()
        out["usd"] = to_usd(out["usd_cents"].astype(float))
        return out[["cluster", dim, "usd", "share"]].sort_values(["cluster", dim]).reset_index(drop=True)

    return ClusterTable(dict(partition), shares("origin"), shares("industry"))
