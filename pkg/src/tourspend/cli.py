"""Command-line front end.

Every command writes its files under ``--out-dir`` and finishes with
``manifest.json`` listing inputs, parameters and the SHA-256 of each output.
Exit status is 0 on success, 1 on a data error and 2 on bad usage.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .classify import (ANCHOR, ATM, build_industry_series, class_shares, classify_industries,
                       write_classification)
from .community import FlowGraph, detect_communities, map_equation_codelength
from .data import (DEFAULT_WINDOW, DataError, ExpenditureCube, QuarterWindow, parse_attributes,
                   parse_transactions, read_ppp_factors)
from .descriptive import quarterly_timeline, rank_distribution, sector_totals, seasonal_balance, share_ranking
from .gravity import GravitySpec, build_gravity_rows, fit_gravity_model, table_rows
from .io import (atomic_write_text, dot_text, dumps_json, merge_geojson, partition_frame, sha256_file,
                 write_csv, write_graphml)
from .spaces import (build_entity_vectors, expenditure_matrix, fit_growth_model, fit_level_model,
                     growth_panels, node_attributes, origin_relative_expenditure, prediction_panel,
                     similarity, topk_graph)
from .stats import CollinearityError
from .synth import SynthConfig, generate

logger = logging.getLogger("tourspend")

MANIFEST = "manifest.json"
DEFAULTS = {
    "k": 3,
    "edge_threshold": 0.0,
    "seed": 0,
    "gray_threshold": 0.1,
    "min_cluster_usd": 0.0,
    "window": str(DEFAULT_WINDOW),
    "transform": "log1p",
    "combine": "max",
    "specs": [1, 2],
}


class Run:
    """Collects outputs under one directory and writes the manifest last."""

    def __init__(self, out_dir, command: str):
        self.out_dir = Path(out_dir)
        self.command = command
        self.inputs: dict[str, dict] = {}
        self.parameters: dict = {}
        self.outputs: list[str] = []

    def path(self, rel: str) -> Path:
        """Register ``rel`` as an output and return its location."""
        self.outputs.append(rel)
        return self.out_dir / rel

    def text(self, rel: str, text: str) -> None:
        atomic_write_text(self.path(rel), text)

    def csv(self, rel: str, frame: pd.DataFrame, index: bool = False) -> None:
        write_csv(frame, self.path(rel), index=index)

    def json(self, rel: str, obj) -> None:
        self.text(rel, dumps_json(obj))

    def graphml(self, rel: str, graph) -> None:
        write_graphml(graph, self.path(rel))

    def adopt(self, rel: str) -> None:
        """Register a file written by someone else."""
        self.outputs.append(rel)

    def input(self, label: str, path) -> None:
        if path is None:
            return
        path = Path(path)
        try:
            shown = path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            shown = str(path)
        self.inputs[label] = {"path": shown, "sha256": sha256_file(path)}

    def manifest(self) -> dict:
        return {
            "command": self.command,
            "tool_version": __version__,
            "inputs": self.inputs,
            "parameters": self.parameters,
            "outputs": [{"path": rel, "sha256": sha256_file(self.out_dir / rel)}
                        for rel in sorted(set(self.outputs))],
        }

    def finish(self) -> dict:
        doc = self.manifest()
        atomic_write_text(self.out_dir / MANIFEST, dumps_json(doc))
        return doc


# --- loading ------------------------------------------------------------------

def _window(text):
    if text is None or str(text).lower() in ("none", "all", ""):
        return None
    return QuarterWindow.parse(str(text))


def load_cube(opts: dict, run: Run) -> ExpenditureCube:
    run.input("transactions", opts["transactions"])
    cube = parse_transactions(opts["transactions"], _window(opts.get("window")))
    if opts.get("ppp"):
        run.input("ppp", opts["ppp"])
        cube = cube.ppp_adjusted(read_ppp_factors(opts["ppp"]))
    return cube


def load_attributes(opts: dict, run: Run, cube: ExpenditureCube | None):
    if not (opts.get("countries") and opts.get("pairs")):
        return None
    run.input("countries", opts["countries"])
    run.input("pairs", opts["pairs"])
    run.input("geo", opts.get("geo"))
    return parse_attributes(opts["countries"], opts["pairs"], opts.get("geo"), cube)


def _dests(cube: ExpenditureCube, opts: dict) -> list[str]:
    present = cube.values("dest_country")
    wanted = opts.get("dest")
    if not wanted:
        return present
    wanted = [wanted] if isinstance(wanted, str) else list(wanted)
    missing = [dest for dest in wanted if dest not in present]
    if missing:
        raise DataError(f"destination(s) not in transactions: {', '.join(missing)}")
    return wanted


# --- steps ----------------------------------------------------------------------

def step_validate(run: Run, cube: ExpenditureCube, attrs, prefix: str = "") -> dict:
    frame = cube.frame
    report = {
        "rows": len(cube),
        "merged_duplicates": cube.merged_duplicates,
        "rejected_domestic": cube.rejected_domestic,
        "window": str(cube.window) if cube.window else None,
        "total_usd": cube.total_usd,
        "total_txn_count": int(frame["txn_count"].sum()),
        "origins": len(cube.values("origin")),
        "destinations": cube.values("dest_country"),
        "municipalities": len(cube.values("municipality_id")),
        "industries": len(cube.values("industry")),
        "quarters": len(cube.values("quarter")),
    }
    if attrs is not None:
        origins = set(cube.values("origin"))
        report["countries"] = len(attrs.countries)
        report["pairs"] = len(attrs.pairs)
        report["origins_without_attributes"] = sorted(origins - set(attrs.countries))
        report["geo_features"] = len(attrs.geo)
        report["unmatched_geo"] = attrs.unmatched_geo
    run.json(f"{prefix}validation.json", report)
    return report


def step_describe(run: Run, cube: ExpenditureCube, attrs, opts: dict, prefix: str = "") -> dict:
    summary = {}
    for dest in _dests(cube, opts):
        base = f"{prefix}{dest}/"
        block: dict = {}
        for axis in ("municipality", "origin", "industry"):
            ranking = share_ranking(cube, axis, dest)
            run.csv(f"{base}ranking_{axis}.csv", ranking.to_frame())
            block[f"{axis}_share_denominator"] = ranking.denominator
        for axis in ("municipality", "origin"):
            dist = rank_distribution(cube, axis, dest)
            run.csv(f"{base}rank_curve_{axis}.csv", pd.DataFrame(
                {"rank": np.arange(1, len(dist.keys) + 1), axis: dist.keys, "relative": dist.curve}))
            block[f"{axis}_p75_p25"] = dist.p75_p25
            block["percentile_method"] = dist.method
        timeline = pd.DataFrame({"usd": quarterly_timeline(cube, dest, "usd"),
                                 "txn_count": quarterly_timeline(cube, dest, "txn_count")})
        timeline.index.name = "quarter"
        run.csv(f"{base}timeline.csv", timeline, index=True)
        balance = seasonal_balance(cube, dest, opts["gray_threshold"])
        run.csv(f"{base}seasonal_balance.csv", pd.DataFrame(
            [(muni, b, balance.gray[muni]) for muni, b in balance.balance.items()],
            columns=["municipality_id", "balance", "gray"]))
        block["gray_threshold"] = balance.threshold
        block["seasonal_pooling"] = "pooled over years"
        sectors = sector_totals(cube, cube.subset(dest_country=dest).values("industry"), dest)
        sectors.index.name = "municipality_id"
        run.csv(f"{base}sector_totals.csv", sectors, index=True)
        if attrs is not None and attrs.geo:
            props = {}
            for muni in sectors.index:
                p = {"balance": balance.balance.get(muni), "gray": balance.gray.get(muni)}
                p.update({f"usd:{ind}": float(v) for ind, v in sectors.loc[muni].items()})
                props[muni] = p
            run.text(f"{base}municipalities.geojson", dumps_json(merge_geojson(attrs.geo, props, dest)))
        summary[dest] = block
    run.json(f"{prefix}describe.json", summary)
    return summary


def step_gravity(run: Run, cube: ExpenditureCube, attrs, opts: dict, prefix: str = "",
                 strict: bool = True) -> dict:
    """Fit each requested spec per destination.  With ``strict`` off, a
    destination or spec that cannot be estimated is logged and listed in
    ``skipped.json`` instead of aborting."""
    if attrs is None:
        raise DataError("gravity needs --countries and --pairs")
    out, skipped = {}, {}
    specs = opts.get("specs") or [opts.get("spec", 1)]
    for dest in _dests(cube, opts):
        try:
            rows = build_gravity_rows(cube, attrs, dest)
        except ValueError as exc:
            if strict:
                raise
            logger.warning("gravity %s skipped: %s", dest, exc)
            skipped[dest] = str(exc)
            continue
        for n in specs:
            try:
                fit = fit_gravity_model(rows, GravitySpec.numbered(int(n)))
            except (CollinearityError, ValueError) as exc:
                if strict:
                    raise
                logger.warning("gravity %s spec %s skipped: %s", dest, n, exc)
                skipped[f"{dest}_spec{n}"] = str(exc)
                continue
            doc = {"dest": dest, "spec": int(n), "dropped_origins": rows.dropped,
                   "rows": table_rows(fit), **fit.to_dict()}
            run.json(f"{prefix}{dest}_spec{n}.json", doc)
            table = pd.DataFrame(table_rows(fit))
            stats = pd.DataFrame([
                {"term": "Observations", "estimate": fit.n_obs},
                {"term": "R2", "estimate": fit.r_squared},
                {"term": "Adjusted R2", "estimate": fit.adj_r_squared},
                {"term": "Residual Std. Error", "estimate": fit.residual_std_error},
                {"term": "F Statistic", "estimate": fit.f_statistic, "p_value": fit.f_p_value},
            ])
            run.csv(f"{prefix}{dest}_spec{n}.csv", pd.concat([table, stats], ignore_index=True))
            out[f"{dest}_spec{n}"] = fit
    if skipped:
        run.json(f"{prefix}skipped.json", skipped)
    return out


def step_origin_space(run: Run, cube: ExpenditureCube, attrs, opts: dict, prefix: str = "") -> dict:
    sim = similarity(build_entity_vectors(cube, "origin"), opts["transform"])
    run.csv(f"{prefix}similarity.csv", sim.to_frame(), index=True)
    attrs_nodes = node_attributes(cube, attrs.countries) if attrs is not None else {}
    graph = topk_graph(sim, int(opts["k"]), attrs_nodes)
    run.graphml(f"{prefix}origin_space.graphml", graph)
    run.text(f"{prefix}origin_space.dot", dot_text(graph, "origin_space"))

    spend = expenditure_matrix(cube, sim.entities)
    panel = prediction_panel(sim, spend)
    run.csv(f"{prefix}predictions.csv", panel)
    result = {"excluded_entities": sim.excluded, "similarity_transform": opts["transform"],
              "negative_similarity": "clamped to zero"}
    try:
        idx = pd.MultiIndex.from_arrays([panel["origin"], panel["dest"]])
        level = fit_level_model(pd.Series(panel["spend"].to_numpy(), idx),
                                pd.Series(panel["predicted"].to_numpy(), idx))
        result["level_model"] = level.to_dict()
    except (ValueError, CollinearityError) as exc:
        logger.warning("level model skipped: %s", exc)
        result["level_model"] = None
    growth = {}
    for year, frame in growth_panels(cube, opts["transform"]).items():
        idx = pd.MultiIndex.from_arrays([frame["origin"], frame["dest"]])
        try:
            fit = fit_growth_model(pd.Series(frame["spend_t"].to_numpy(), idx),
                                   pd.Series(frame["spend_next"].to_numpy(), idx),
                                   pd.Series(frame["predicted_t"].to_numpy(), idx))
        except (ValueError, CollinearityError) as exc:
            logger.warning("growth model for %d skipped: %s", year, exc)
            continue
        growth[str(year)] = fit.to_dict()
    result["growth_models"] = growth
    result["year_definition"] = "data year = Q4 of the previous calendar year through Q3"
    run.json(f"{prefix}origin_space.json", result)
    return result


def step_dest_space(run: Run, cube: ExpenditureCube, attrs, opts: dict, prefix: str = "") -> dict:
    out = {}
    for dest in _dests(cube, opts):
        vectors = build_entity_vectors(cube, "destination", dest=dest)
        if len(vectors.entities) < 2:
            logger.warning("%s: fewer than two municipalities; no destination space", dest)
            continue
        sim = similarity(vectors, opts["transform"])
        base = f"{prefix}{dest}/"
        run.csv(f"{base}similarity.csv", sim.to_frame(), index=True)
        graph = FlowGraph.from_similarity(sim.entities, sim.values, float(opts["edge_threshold"]))
        partition = detect_communities(graph, seed=int(opts["seed"]))
        run.csv(f"{base}partition.csv", partition_frame(partition))
        table = origin_relative_expenditure(cube, partition.assignment, dest)
        min_usd = float(opts["min_cluster_usd"])
        run.csv(f"{base}ore_origin.csv", table.origin_shares[table.origin_shares["usd"] >= min_usd])
        run.csv(f"{base}ore_industry.csv", table.industry_shares[table.industry_shares["usd"] >= min_usd])
        run.csv(f"{base}top_origin.csv", table.top("origin", 5, min_usd))
        run.csv(f"{base}top_industry.csv", table.top("industry", 5, min_usd))
        one_module = map_equation_codelength(graph, [1] * len(graph))
        doc = {
            "dest": dest, "seed": int(opts["seed"]), "edge_threshold": float(opts["edge_threshold"]),
            "codelength": partition.codelength, "one_module_codelength": one_module,
            "module_count": partition.module_count,
            "modules": {str(muni): v for muni, v in partition.modules().items()},
            "excluded_entities": sim.excluded,
        }
        run.json(f"{base}communities.json", doc)
        if attrs is not None and attrs.geo:
            props = {muni: {"cluster": c} for muni, c in partition.assignment.items()}
            run.text(f"{base}municipalities.geojson", dumps_json(merge_geojson(attrs.geo, props, dest)))
        out[dest] = partition
    return out


def step_classify(run: Run, cube: ExpenditureCube, opts: dict, prefix: str = "", partitions=None) -> dict:
    series = build_industry_series(cube)
    result = classify_industries(series, ANCHOR, ATM, opts["combine"])
    write_classification(result, run.path(f"{prefix}classification.csv"))
    rows = []
    for dest in cube.values("dest_country"):
        rows.append({"dest": dest, "cluster": "", **class_shares(cube, result, dest)})
        for cluster, members in sorted((partitions or {}).get(dest, {}).items()):
            rows.append({"dest": dest, "cluster": str(cluster),
                         **class_shares(cube, result, dest, municipalities=members)})
    run.csv(f"{prefix}class_shares.csv", pd.DataFrame(rows))
    doc = {"anchor": ANCHOR, "atm": ATM, "combine": opts["combine"], "cells": len(series.cells),
           "members": {label: result.members(label) for label in ("tourism", "commuting", "other")}}
    run.json(f"{prefix}classify.json", doc)
    return doc


# --- commands -------------------------------------------------------------------

def _synth_config(table: dict, seed) -> SynthConfig:
    table = dict(table)
    if seed is not None:
        table["seed"] = int(seed)
    return SynthConfig.from_dict(table)


def cmd_synth(opts: dict, run: Run) -> None:
    table = {}
    if opts.get("config"):
        run.input("config", opts["config"])
        table = _read_toml(opts["config"]).get("synth", {})
    config = _synth_config(table, opts.get("seed"))
    paths = generate(config).write(run.out_dir)
    for p in paths.values():
        run.adopt(p.relative_to(run.out_dir).as_posix())
    run.parameters = {"synth": _plain(config)}


def cmd_validate(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    report = step_validate(run, cube, attrs)
    sys.stdout.write(dumps_json(report))


def cmd_describe(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    step_describe(run, cube, attrs, opts)


def cmd_gravity(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    opts = dict(opts, specs=[opts["spec"]])
    step_gravity(run, cube, attrs, opts)


def cmd_origin_space(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    step_origin_space(run, cube, attrs, opts)


def cmd_dest_space(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    step_dest_space(run, cube, attrs, opts)


def cmd_classify(opts: dict, run: Run) -> None:
    cube = load_cube(opts, run)
    step_classify(run, cube, opts)


def cmd_pipeline(opts: dict, run: Run) -> None:
    """Synthesize inputs if the config asks for it, then run every step."""
    if opts.get("synth") is not None and not opts.get("transactions"):
        synth_seed = opts["synth"].get("seed", opts["seed"])
        config = _synth_config(opts["synth"], synth_seed)
        paths = generate(config).write(run.out_dir / "input")
        for p in paths.values():
            run.adopt(p.relative_to(run.out_dir).as_posix())
        opts.update(transactions=paths["transactions"], countries=paths["countries"],
                    pairs=paths["pairs"], geo=paths["geo"])
        run.parameters["synth"] = _plain(config)
    if not opts.get("transactions"):
        raise UsageError("pipeline needs --transactions or a [synth] table in the config")
    cube = load_cube(opts, run)
    attrs = load_attributes(opts, run, cube)
    step_validate(run, cube, attrs, "validate/")
    step_describe(run, cube, attrs, opts, "describe/")
    if attrs is not None:
        step_gravity(run, cube, attrs, opts, "gravity/", strict=False)
    else:
        logger.warning("no country/pair attributes; gravity and node attributes skipped")
    step_origin_space(run, cube, attrs, opts, "origin-space/")
    partitions = step_dest_space(run, cube, attrs, opts, "dest-space/")
    step_classify(run, cube, opts, "classify/", {dest: part.modules() for dest, part in partitions.items()})


COMMANDS = {
    "synth": cmd_synth,
    "validate": cmd_validate,
    "describe": cmd_describe,
    "gravity": cmd_gravity,
    "origin-space": cmd_origin_space,
    "dest-space": cmd_dest_space,
    "classify": cmd_classify,
    "pipeline": cmd_pipeline,
}


class UsageError(Exception):
    pass


def _plain(config: SynthConfig) -> dict:
    return {k: getattr(config, k) for k in config.__dataclass_fields__}


def _read_toml(path) -> dict:
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)


# --- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tourspend", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, transactions=True, attrs=False):
        p.add_argument("--out-dir", default=None, help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if transactions:
            p.add_argument("--transactions", required=True)
            p.add_argument("--window", default=None, help="first:last quarter, e.g. 2011Q4:2014Q3, or 'all'")
            p.add_argument("--ppp", default=None, help="CSV iso3,factor applied to destination USD")
        if attrs:
            p.add_argument("--countries", default=None)
            p.add_argument("--pairs", default=None)
            p.add_argument("--geo", default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    common(p, transactions=False)
    p.add_argument("--config", default=None, help="TOML file with a [synth] table")

    p = sub.add_parser("validate", help="parse and cross-check input files")
    common(p, attrs=True)

    p = sub.add_parser("describe", help="rankings, rank curves, timelines, seasonal balance")
    common(p, attrs=True)
    p.add_argument("--dest", default=None)
    p.add_argument("--gray-threshold", type=float, default=None)

    p = sub.add_parser("gravity", help="gravity regression for one destination")
    common(p, attrs=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--spec", type=int, choices=(1, 2, 3, 4), default=1)

    p = sub.add_parser("origin-space", help="origin similarity graph, predictions, level/growth models")
    common(p, attrs=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--transform", choices=("log1p", "raw"), default=None)

    p = sub.add_parser("dest-space", help="municipality communities and cluster shares")
    common(p, attrs=True)
    p.add_argument("--dest", required=True)
    p.add_argument("--edge-threshold", type=float, default=None)
    p.add_argument("--min-cluster-usd", type=float, default=None)
    p.add_argument("--transform", choices=("log1p", "raw"), default=None)

    p = sub.add_parser("classify", help="tourism / commuting / other industry classes")
    common(p)
    p.add_argument("--combine", choices=("max", "fisher"), default=None)

    p = sub.add_parser("pipeline", help="run every step from a TOML config")
    common(p, transactions=False, attrs=True)
    p.add_argument("--config", required=True)
    p.add_argument("--transactions", default=None)
    p.add_argument("--window", default=None)
    p.add_argument("--ppp", default=None)
    p.add_argument("--dest", action="append", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--edge-threshold", type=float, default=None)
    p.add_argument("--gray-threshold", type=float, default=None)
    p.add_argument("--min-cluster-usd", type=float, default=None)
    p.add_argument("--transform", choices=("log1p", "raw"), default=None)
    p.add_argument("--combine", choices=("max", "fisher"), default=None)
    return parser


def _options(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    opts["out_dir"] = "out"
    if args.command == "pipeline":
        config = _read_toml(args.config)
        base = Path(args.config).parent
        for key, value in config.get("inputs", {}).items():
            opts[key] = str(base / value) if value else value
        opts.update({k.replace("-", "_"): v for k, v in config.get("params", {}).items()})
        if "synth" in config:
            opts["synth"] = dict(config["synth"])
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "verbose"):
            opts[key] = value
    if args.command == "synth":
        opts["seed"] = args.seed
    return opts


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        opts = _options(args)
        run = Run(opts["out_dir"], args.command)
        if args.command == "pipeline":
            run.input("config", args.config)
        run.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](opts, run)
        for key in ("k", "edge_threshold", "seed", "gray_threshold", "min_cluster_usd", "window",
                    "transform", "combine", "dest", "spec", "specs"):
            if key in opts and not (args.command == "synth"):
                run.parameters.setdefault(key, opts[key])
        run.finish()
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tourspend: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CollinearityError, ValueError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"tourspend: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
