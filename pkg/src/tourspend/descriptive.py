"""Rankings, rank distributions, quarterly timelines and seasonal balance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .data import ExpenditureCube, aggregate, format_quarter, quarter_number, to_usd
from .classify import ATM

AXES = {"municipality": "municipality_id", "origin": "origin", "industry": "industry"}
PERCENTILE_METHOD = "linear"


@dataclass
class RankedShares:
    """Shares sorted descending.  For the industry axis the ATM entry is a
    share of total spend and every other entry a share of non-ATM spend."""

    axis: str
    entries: list[tuple[str, float]]
    denominator: str
    usd: dict[str, float] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(i + 1, k, self.usd.get(k, np.nan), s) for i, (k, s) in enumerate(self.entries)],
            columns=["rank", self.axis, "usd", "share"],
        )


def _restrict(cube: ExpenditureCube, dest: str | None) -> ExpenditureCube:
    return cube if dest is None else cube.subset(dest_country=dest)


def share_ranking(cube: ExpenditureCube, axis: str, dest: str | None = None, atm: str = ATM) -> RankedShares:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {sorted(AXES)}")
    scope = _restrict(cube, dest)
    if len(scope) == 0:
        raise ValueError(f"no spend for {dest}")
    totals = aggregate(scope, [AXES[axis]])
    grand = int(totals.sum())
    if grand <= 0:
        raise ValueError(f"no spend for {dest}")
    entries: list[tuple[str, float]]
    if axis == "industry" and atm in totals.index:
        atm_cents = int(totals[atm])
        rest = totals.drop(atm)
        non_atm = grand - atm_cents
        entries = [(atm, atm_cents / grand)]
        entries += [(k, int(v) / non_atm if non_atm else 0.0) for k, v in rest.items()]
        denominator = "ATM: total; others: non-ATM total"
    else:
        entries = [(k, int(v) / grand) for k, v in totals.items()]
        denominator = "total"
    if axis == "industry" and atm in totals.index:
        # ATM is reported first, as its own block
        head, tail = entries[:1], entries[1:]
        tail.sort(key=lambda e: (-e[1], e[0]))
        entries = head + tail
    else:
        entries.sort(key=lambda e: (-e[1], e[0]))
    usd = {k: float(to_usd(int(v))) for k, v in totals.items()}
    return RankedShares(axis, entries, denominator, usd)


@dataclass
class RankDistribution:
    keys: list
    curve: np.ndarray
    p75_p25: float | None
    method: str = PERCENTILE_METHOD


def rank_distribution(cube: ExpenditureCube, axis: str, dest: str | None = None) -> RankDistribution:
    """Descending expenditures divided by the maximum, plus the ratio of the
    75th to the 25th percentile of the expenditure distribution (linear
    interpolation; needs at least four entities)."""
    if axis not in ("municipality", "origin"):
        raise ValueError("axis must be 'municipality' or 'origin'")
    totals = aggregate(_restrict(cube, dest), [AXES[axis]])
    totals = totals[totals > 0]
    if totals.empty:
        raise ValueError("no spend")
    ordered = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    values = np.array([v for _, v in ordered], dtype=float)
    curve = values / values[0]
    ratio = None
    if values.size >= 4:
        p75, p25 = np.percentile(values, [75, 25], method=PERCENTILE_METHOD)
        ratio = float(p75 / p25)
    return RankDistribution([k for k, _ in ordered], curve, ratio)


def quarterly_timeline(cube: ExpenditureCube, dest: str | None = None, measure: str = "usd") -> pd.Series:
    """Total per quarter (no seasonal adjustment), indexed by 'YYYYQn'.

    Quarters inside the cube's window with no records are reported as zero.
    """
    scope = _restrict(cube, dest)
    if len(scope):
        totals = aggregate(scope, ["quarter"], measure)
    else:
        totals = pd.Series(dtype="int64")
    if cube.window is not None:
        totals = totals.reindex(range(cube.window.first, cube.window.last + 1), fill_value=0)
    if measure == "usd":
        totals = to_usd(totals.astype(float))
    totals.index = [format_quarter(int(qnum)) for qnum in totals.index]
    totals.name = measure
    return totals


@dataclass
class SeasonalBalance:
    balance: dict[str, float]
    gray: dict[str, bool]
    threshold: float


def seasonal_balance(cube: ExpenditureCube, dest: str | None = None, threshold: float = 0.1) -> SeasonalBalance:
    """Per municipality (Q3 - Q1) / (Q3 + Q1), pooled over years.

    +1 means all summer spend, -1 all winter.  Municipalities without Q1 or
    Q3 spend are omitted; ``gray`` marks |balance| < ``threshold``.
    """
    if cube.window is not None:
        covered = quarter_number(np.arange(cube.window.first, cube.window.last + 1))
    else:
        covered = quarter_number(cube.frame["quarter"].to_numpy())
    if not ((covered == 1).any() and (covered == 3).any()):
        raise ValueError("window must contain at least one Q1 and one Q3")
    frame = _restrict(cube, dest).frame
    qnum = quarter_number(frame["quarter"])
    summer = frame.loc[qnum == 3].groupby("municipality_id")["usd_cents"].sum()
    winter = frame.loc[qnum == 1].groupby("municipality_id")["usd_cents"].sum()
    munis = sorted(set(summer.index) | set(winter.index))
    balance, gray = {}, {}
    for muni in munis:
        s = int(summer.get(muni, 0))
        w = int(winter.get(muni, 0))
        if s + w == 0:
            continue
        b = (s - w) / (s + w)
        balance[muni] = b
        gray[muni] = abs(b) < threshold
    return SeasonalBalance(balance, gray, threshold)


def sector_totals(cube: ExpenditureCube, industries, dest: str | None = None) -> pd.DataFrame:
    """Municipality x industry USD for the requested industries (sector maps)."""
    scope = _restrict(cube, dest).subset(industry=list(industries))
    if len(scope) == 0:
        return pd.DataFrame()
    table = aggregate(scope, ["municipality_id", "industry"]).unstack("industry", fill_value=0)
    return to_usd(table.astype(float)).sort_index()
