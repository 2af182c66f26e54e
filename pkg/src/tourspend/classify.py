"""Tourism / commuting / other classification of merchant industries.

Each industry's spend series over (destination, municipality, quarter) cells
is correlated with the accommodation series.  The third of industries with
the smallest combined p-value are tourism; industries whose p-value reaches
that of ATMs are commuting; the rest are other.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .data import ExpenditureCube, aggregate, to_usd
from .distributions import chi2_sf_even
from .io import atomic_write_text
from .stats import CorrResult, pearson_corr, spearman_corr

logger = logging.getLogger(__name__)

ANCHOR = "Accommodations"
ATM = "Financial Services (ATMs)"
CLASSES = ("tourism", "commuting", "other")
CSV_HEADER = ("industry", "class", "pearson_r", "pearson_p", "spearman_r", "spearman_p", "combined_p")


@dataclass(frozen=True)
class IndustrySeries:
    """log(1 + USD) per industry over a shared ordering of cells."""

    cells: list
    series: dict[str, np.ndarray]

    @property
    def industries(self) -> list[str]:
        return sorted(self.series)


def build_industry_series(cube: ExpenditureCube, anchor: str = ANCHOR) -> IndustrySeries:
    """Pivot the cube to industries x (dest, municipality, quarter) cells,
    dropping cells with no spend in any industry."""
    if anchor not in set(cube.frame["industry"]):
        raise ValueError(f"anchor industry {anchor!r} not in cube")
    if cube.frame["dest_country"].nunique() < 2:
        logger.warning("industry series built from a single destination country")
    keys = ["dest_country", "municipality_id", "quarter"]
    totals = aggregate(cube, [*keys, "industry"])
    table = totals.unstack("industry", fill_value=0)
    table = table[table.sum(axis=1) > 0].sort_index().sort_index(axis=1)
    values = np.log1p(to_usd(table.to_numpy(dtype=float)))
    return IndustrySeries(list(table.index), {ind: values[:, j] for j, ind in enumerate(table.columns)})


@dataclass
class IndustryClass:
    industry: str
    label: str
    pearson: CorrResult | None
    spearman: CorrResult | None
    combined_p: float


@dataclass
class IndustryClassification:
    entries: dict[str, IndustryClass]

    def label(self, industry: str) -> str:
        return self.entries[industry].label

    def labels(self) -> dict[str, str]:
        return {k: v.label for k, v in sorted(self.entries.items())}

    def members(self, label: str) -> list[str]:
        return sorted(k for k, v in self.entries.items() if v.label == label)


def combine_p(p1: float, p2: float, method: str = "max") -> float:
    if method == "max":
        return max(p1, p2)
    if method == "fisher":
        if p1 <= 0 or p2 <= 0:
            return 0.0
        return chi2_sf_even(-2.0 * (math.log(p1) + math.log(p2)), 4)
    raise ValueError(f"unknown combination {method!r}")


def classify_industries(series: IndustrySeries, anchor: str = ANCHOR, atm: str = ATM,
                        combine: str = "max") -> IndustryClassification:
    """Assign every industry in ``series`` to tourism, commuting or other."""
    for key in (anchor, atm):
        if key not in series.series:
            raise ValueError(f"industry {key!r} missing from series")
    base = series.series[anchor]
    entries: dict[str, IndustryClass] = {}
    scored: list[tuple[float, str]] = []
    for ind in series.industries:
        x = series.series[ind]
        try:
            pr = pearson_corr(base, x)
            sr = spearman_corr(base, x)
        except ValueError:
            logger.warning("industry %r has a constant series; classified other", ind)
            entries[ind] = IndustryClass(ind, "other", None, None, math.nan)
            continue
        p = combine_p(pr.p_value, sr.p_value, combine)
        entries[ind] = IndustryClass(ind, "", pr, sr, p)
        scored.append((p, ind))
    if math.isnan(entries[anchor].combined_p) or math.isnan(entries[atm].combined_p):
        raise ValueError("anchor or ATM series is constant")

    scored.sort()
    n_tourism = math.ceil(len(entries) / 3)
    tourism = {ind for _, ind in scored[:n_tourism]}
    if atm in tourism:
        logger.warning("ATM industry ranks within the tourism third; forced to commuting")
    p_atm = entries[atm].combined_p
    for p, ind in scored:
        if ind == anchor or (ind in tourism and ind != atm):
            label = "tourism"
        elif ind == atm or p >= p_atm:
            label = "commuting"
        else:
            label = "other"
        entries[ind].label = label
    return IndustryClassification(dict(sorted(entries.items())))


def class_shares(cube: ExpenditureCube, classification: IndustryClassification | Mapping[str, str],
                 dest: str | None = None, municipalities: Iterable[str] | None = None) -> dict[str, float]:
    """USD share of each class within a destination and/or municipality set."""
    labels = classification.labels() if isinstance(classification, IndustryClassification) else dict(classification)
    scope = cube
    if dest is not None:
        scope = scope.subset(dest_country=dest)
    if municipalities is not None:
        scope = scope.subset(municipality_id=list(municipalities))
    totals = aggregate(scope, ["industry"]) if len(scope) else pd.Series(dtype="int64")
    grand = int(totals.sum())
    if grand <= 0:
        raise ValueError("empty scope")
    unknown = sorted(set(totals.index) - set(labels))
    if unknown:
        logger.warning("%d industries without a class counted as other: %s", len(unknown), unknown[:10])
    cents = {c: 0 for c in CLASSES}
    for ind, v in totals.items():
        cents[labels.get(ind, "other")] += int(v)
    return {c: cents[c] / grand for c in CLASSES}


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def classification_text(classification: IndustryClassification) -> str:
    """CSV: industry,class,pearson_r,pearson_p,spearman_r,spearman_p,combined_p."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for ind, e in sorted(classification.entries.items()):
        w.writerow([
            ind, e.label,
            _fmt(e.pearson.coefficient if e.pearson else None),
            _fmt(e.pearson.p_value if e.pearson else None),
            _fmt(e.spearman.coefficient if e.spearman else None),
            _fmt(e.spearman.p_value if e.spearman else None),
            _fmt(e.combined_p),
        ])
    return buf.getvalue()


def write_classification(classification: IndustryClassification, path) -> None:
    atomic_write_text(path, classification_text(classification))


def _parse_opt(text: str) -> float:
    return float(text) if text.strip() else math.nan


def read_classification(path) -> IndustryClassification:
    entries = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: header must be {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields")
            ind, label, pr, pp, sr, sp, cp = row
            if label not in CLASSES:
                raise ValueError(f"{path}:{lineno}: unknown class {label!r}")
            pearson = CorrResult(float(pr), float(pp), 0) if pr.strip() else None
            spearman = CorrResult(float(sr), float(sp), 0) if sr.strip() else None
            entries[ind] = IndustryClass(ind, label, pearson, spearman, _parse_opt(cp))
    return IndustryClassification(entries)


def appendix_fixture_path() -> Path:
    """Reference industry classes (labels only) shipped in the classification CSV format."""
    return Path(str(resources.files("tourspend") / "data" / "appendix_classification.csv"))
