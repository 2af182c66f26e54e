"""Output writers.  Every file is written to a temporary sibling and renamed
into place, so readers never see a partial file."""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Mapping

import networkx as nx
import numpy as np
import pandas as pd

from .community import Partition
from .data import MunicipalityGeo
from .spaces import ClusterTable, SpaceGraph


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _jsonable(obj):
    """Replace NaN/inf with None and numpy scalars with Python ones."""
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def write_csv(frame: pd.DataFrame, path, index: bool = False) -> Path:
    return atomic_write_text(path, frame.to_csv(index=index, lineterminator="\n"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


# --- graphs -------------------------------------------------------------------

def to_networkx(graph: SpaceGraph) -> nx.Graph:
    g = nx.Graph()
    for node, attrs in graph.nodes.items():
        g.add_node(node, **attrs)
    for a, b, w in graph.edges:
        g.add_edge(a, b, weight=float(w))
    return g


def write_graphml(graph: SpaceGraph, path) -> Path:
    buf = io.BytesIO()
    nx.write_graphml(to_networkx(graph), buf)
    return atomic_write_bytes(path, buf.getvalue())


def _dot_id(text) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _dot_value(v) -> str:
    if isinstance(v, float):
        return _dot_id(repr(v))
    return _dot_id(v)


def dot_text(graph: SpaceGraph, name: str = "space") -> str:
    lines = [f"graph {_dot_id(name)} {{"]
    for node, attrs in graph.nodes.items():
        items = "".join(f", {_dot_id(k)}={_dot_value(v)}" for k, v in sorted(attrs.items()))
        lines.append(f"  {_dot_id(node)} [label={_dot_id(node)}{items}];")
    for a, b, w in graph.edges:
        lines.append(f"  {_dot_id(a)} -- {_dot_id(b)} [weight={_dot_value(float(w))}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_dot(graph: SpaceGraph, path, name: str = "space") -> Path:
    return atomic_write_text(path, dot_text(graph, name))


# --- partitions, clusters, GeoJSON ---------------------------------------------

def partition_frame(partition: Partition | Mapping) -> pd.DataFrame:
    assignment = partition.assignment if isinstance(partition, Partition) else partition
    rows = sorted(assignment.items())
    return pd.DataFrame(rows, columns=["municipality_id", "cluster"])


def write_partition(partition: Partition | Mapping, path) -> Path:
    return write_csv(partition_frame(partition), path)


def read_partition(path) -> dict[str, int]:
    frame = pd.read_csv(path, dtype={"municipality_id": str})
    if list(frame.columns) != ["municipality_id", "cluster"]:
        raise ValueError(f"{path}: header must be municipality_id,cluster")
    return {str(muni): int(c) for muni, c in zip(frame["municipality_id"], frame["cluster"])}


def write_cluster_table(table: ClusterTable, origin_path, industry_path,
                        n: int | None = None, min_usd: float = 0.0) -> tuple[Path, Path]:
    """Cluster characterization CSVs; ``n`` keeps the top rows per cluster."""
    if n is None:
        origin = table.origin_shares[table.origin_shares["usd"] >= min_usd]
        industry = table.industry_shares[table.industry_shares["usd"] >= min_usd]
    else:
        origin = table.top("origin", n, min_usd)
        industry = table.top("industry", n, min_usd)
    return write_csv(origin, origin_path), write_csv(industry, industry_path)


def merge_geojson(geo: Mapping[str, MunicipalityGeo], properties: Mapping[str, Mapping],
                  dest: str | None = None) -> dict:
    """FeatureCollection of ``geo`` features (optionally one destination) with
    ``properties[municipality_id]`` merged into each feature's properties."""
    features = []
    for key in sorted(geo):
        g = geo[key]
        if dest is not None and g.dest_country != dest:
            continue
        props = {"municipality_id": g.municipality_id, "dest_country": g.dest_country, "name": g.name}
        props.update(properties.get(key, {}))
        features.append({"type": "Feature", "properties": props, "geometry": g.geometry})
    return {"type": "FeatureCollection", "features": features}
