"""Analysis of foreign card spending by origin, destination and industry:
descriptive rankings, gravity models, similarity spaces, map-equation
communities and tourism/commuting industry classes."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("tourspend")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .data import (DataError, ExpenditureCube, QuarterWindow, aggregate, parse_attributes,
                   parse_transactions)
from .stats import DesignMatrix, FitResult, fe_ols_fit, ols_fit, pearson_corr, spearman_corr
from .gravity import GravitySpec, build_gravity_rows, fit_gravity_model
from .spaces import (build_entity_vectors, fit_growth_model, fit_level_model, origin_relative_expenditure,
                     predict_expenditure, similarity, topk_graph)
from .community import FlowGraph, Partition, detect_communities, map_equation_codelength
from .classify import build_industry_series, class_shares, classify_industries
from .descriptive import quarterly_timeline, rank_distribution, seasonal_balance, share_ranking
from .synth import SynthConfig, generate

__all__ = [
    "DataError", "ExpenditureCube", "QuarterWindow", "aggregate", "parse_attributes", "parse_transactions",
    "DesignMatrix", "FitResult", "fe_ols_fit", "ols_fit", "pearson_corr", "spearman_corr",
    "GravitySpec", "build_gravity_rows", "fit_gravity_model",
    "build_entity_vectors", "fit_growth_model", "fit_level_model", "origin_relative_expenditure",
    "predict_expenditure", "similarity", "topk_graph",
    "FlowGraph", "Partition", "detect_communities", "map_equation_codelength",
    "build_industry_series", "class_shares", "classify_industries",
    "quarterly_timeline", "rank_distribution", "seasonal_balance", "share_ranking",
    "SynthConfig", "generate",
]
