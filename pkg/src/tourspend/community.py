"""Two-level map-equation community detection on undirected weighted graphs.

Flow model: a random walk without teleportation on an undirected graph, so a
node's visit rate is its strength over twice the total edge weight and each
edge carries ``w / 2W`` of flow in each direction.

The search is the usual greedy scheme: repeated sweeps of single-node moves
to neighbouring (or empty) modules, aggregation of modules into super-nodes,
then a fine-tuning pass back at node level; several seeded trials are run and
the shortest description is kept.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

_IMPROVE = 1e-10


def plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


@dataclass(frozen=True)
class FlowGraph:
    """Undirected graph with positive weights and derived flows.

    ``nodes`` is sorted; ``edges`` maps index pairs ``(i, j)`` with ``i < j``
    to summed weight.  ``visit`` are node visit rates (sum 1 over nodes with
    edges) and ``edge_flow`` the one-directional flow ``w / 2W``.
    """

    nodes: tuple
    edges: Mapping[tuple[int, int], float]
    visit: np.ndarray
    edge_flow: Mapping[tuple[int, int], float]

    @classmethod
    def from_edges(cls, edges: Iterable[tuple[Hashable, Hashable, float]],
                   nodes: Iterable[Hashable] = ()) -> "FlowGraph":
        edges = list(edges)
        keys = sorted({*nodes, *(e[0] for e in edges), *(e[1] for e in edges)}, key=_sort_key)
        index = {k: i for i, k in enumerate(keys)}
        weights: dict[tuple[int, int], float] = {}
        for a, b, w in edges:
            w = float(w)
            if not w > 0 or not math.isfinite(w):
                raise ValueError(f"edge ({a}, {b}) has non-positive or non-finite weight {w}")
            i, j = index[a], index[b]
            if i == j:
                continue
            key = (i, j) if i < j else (j, i)
            weights[key] = weights.get(key, 0.0) + w
        total = sum(weights.values())
        strength = np.zeros(len(keys))
        for (i, j), w in weights.items():
            strength[i] += w
            strength[j] += w
        isolated = [keys[i] for i in range(len(keys)) if strength[i] == 0]
        if isolated:
            logger.warning("%d nodes without edges get zero flow: %s", len(isolated), isolated[:10])
        if total > 0:
            visit = strength / (2.0 * total)
            flow = {k: w / (2.0 * total) for k, w in weights.items()}
        else:
            visit = strength
            flow = {k: 0.0 for k in weights}
        return cls(tuple(keys), weights, visit, flow)

    @classmethod
    def from_similarity(cls, entities: Sequence[Hashable], matrix: np.ndarray,
                        threshold: float = 0.0) -> "FlowGraph":
        """Keep pairs whose similarity exceeds ``max(threshold, 0)``."""
        cut = max(threshold, 0.0)
        mat = np.asarray(matrix, dtype=float)
        edges = []
        for i in range(len(entities)):
            for j in range(i + 1, len(entities)):
                if mat[i, j] > cut:
                    edges.append((entities[i], entities[j], mat[i, j]))
        return cls.from_edges(edges, nodes=entities)

    def __len__(self) -> int:
        return len(self.nodes)

    def neighbours(self) -> list[dict[int, float]]:
        adj: list[dict[int, float]] = [dict() for _ in self.nodes]
        for (i, j), f in self.edge_flow.items():
            adj[i][j] = adj[i].get(j, 0.0) + f
            adj[j][i] = adj[j].get(i, 0.0) + f
        return adj

    def components(self) -> list[list[int]]:
        parent = list(range(len(self.nodes)))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        groups: dict[int, list[int]] = {}
        for i in range(len(self.nodes)):
            groups.setdefault(find(i), []).append(i)
        return sorted(groups.values())


def _sort_key(k):
    return (type(k).__name__, k)


@dataclass(frozen=True)
class Partition:
    assignment: dict
    codelength: float

    @property
    def module_count(self) -> int:
        return len(set(self.assignment.values()))

    def modules(self) -> dict[int, list]:
        out: dict[int, list] = {}
        for node, mod in self.assignment.items():
            out.setdefault(mod, []).append(node)
        return {mod: sorted(v, key=_sort_key) for mod, v in sorted(out.items())}


def _codelength_terms(exit_: Iterable[float], flow: Iterable[float]):
    exit_ = list(exit_)
    flow = list(flow)
    total_exit = sum(exit_)
    return (plogp(total_exit)
            - 2.0 * sum(plogp(ex) for ex in exit_)
            + sum(plogp(ex + fl) for ex, fl in zip(exit_, flow)))


def map_equation_codelength(graph: FlowGraph, assignment: Mapping | Sequence[int]) -> float:
    """Two-level map equation codelength in bits for ``assignment``.

    ``assignment`` maps node keys to module labels (or is a sequence aligned
    with ``graph.nodes``).
    """
    labels = _labels_for(graph, assignment)
    exit_: dict = {}
    flow: dict = {}
    for i, mod in enumerate(labels):
        flow[mod] = flow.get(mod, 0.0) + graph.visit[i]
        exit_.setdefault(mod, 0.0)
    for (i, j), f in graph.edge_flow.items():
        if labels[i] != labels[j]:
            exit_[labels[i]] += f
            exit_[labels[j]] += f
    mods = list(flow)
    node_term = sum(plogp(p) for p in graph.visit)
    return _codelength_terms((exit_[mod] for mod in mods), (flow[mod] for mod in mods)) - node_term


def _labels_for(graph: FlowGraph, assignment) -> list:
    if isinstance(assignment, Mapping):
        try:
            return [assignment[k] for k in graph.nodes]
        except KeyError as exc:
            raise ValueError(f"node {exc} has no module") from exc
    labels = list(assignment)
    if len(labels) != len(graph.nodes):
        raise ValueError("assignment length differs from node count")
    return labels


class _Level:
    """Working graph for one aggregation level."""

    def __init__(self, flow: np.ndarray, adj: list[dict[int, float]]):
        self.flow = flow
        self.adj = adj
        self.exit = np.array([sum(a.values()) for a in adj])

    def __len__(self):
        return len(self.flow)


class _Search:
    def __init__(self, graph: FlowGraph):
        self.graph = graph
        self.base = _Level(np.asarray(graph.visit, float), graph.neighbours())

    def codelength(self, labels: Sequence[int]) -> float:
        return map_equation_codelength(self.graph, labels)

    # -- local moves ---------------------------------------------------------
    def local_moves(self, level: _Level, module: list[int], rng) -> bool:
        """Greedy single-node moves; returns True if any node moved."""
        n = len(level)
        mod_exit = np.zeros(n)
        mod_flow = np.zeros(n)
        members = np.zeros(n, dtype=int)
        for v in range(n):
            mod_flow[module[v]] += level.flow[v]
            members[module[v]] += 1
        for v in range(n):
            for nbr, f in level.adj[v].items():
                if module[nbr] != module[v]:
                    mod_exit[module[v]] += f
        sum_exit = float(mod_exit.sum())

        moved_any = False
        while True:
            moved = 0
            for v in rng.permutation(n):
                old = module[v]
                links: dict[int, float] = {}
                for nbr, f in level.adj[v].items():
                    links[module[nbr]] = links.get(module[nbr], 0.0) + f
                out_v = level.exit[v]
                p_v = level.flow[v]
                f_old = links.get(old, 0.0)
                q_old_new = mod_exit[old] - out_v + 2.0 * f_old
                p_old_new = mod_flow[old] - p_v
                candidates = [mod for mod in links if mod != old]
                if members[old] > 1:
                    empty = self._empty_module(members)
                    if empty is not None:
                        candidates.append(empty)
                best_delta, best = 0.0, old
                for mod in sorted(candidates):
                    f_new = links.get(mod, 0.0)
                    q_new = mod_exit[mod] + out_v - 2.0 * f_new
                    p_new = mod_flow[mod] + p_v
                    d_exit = (q_old_new - mod_exit[old]) + (q_new - mod_exit[mod])
                    delta = (
                        plogp(sum_exit + d_exit) - plogp(sum_exit)
                        - 2.0 * (plogp(q_old_new) + plogp(q_new) - plogp(mod_exit[old]) - plogp(mod_exit[mod]))
                        + plogp(q_old_new + p_old_new) + plogp(q_new + p_new)
                        - plogp(mod_exit[old] + mod_flow[old]) - plogp(mod_exit[mod] + mod_flow[mod])
                    )
                    if delta < best_delta - _IMPROVE:
                        best_delta, best = delta, mod
                if best == old:
                    continue
                mod = best
                f_new = links.get(mod, 0.0)
                q_new = mod_exit[mod] + out_v - 2.0 * f_new
                p_new = mod_flow[mod] + p_v
                sum_exit += (q_old_new - mod_exit[old]) + (q_new - mod_exit[mod])
                mod_exit[old], mod_flow[old] = q_old_new, p_old_new
                mod_exit[mod], mod_flow[mod] = q_new, p_new
                members[old] -= 1
                members[mod] += 1
                module[v] = mod
                moved += 1
            if not moved:
                return moved_any
            moved_any = True

    @staticmethod
    def _empty_module(members: np.ndarray) -> int | None:
        idx = np.flatnonzero(members == 0)
        return int(idx[0]) if idx.size else None

    # -- aggregation ---------------------------------------------------------
    @staticmethod
    def aggregate(level: _Level, module: list[int]) -> tuple[_Level, list[int]]:
        """Collapse modules to super-nodes; returns the new level and the
        old-module -> super-node map (dense, ordered by module id)."""
        ids = sorted(set(module))
        remap = {mod: i for i, mod in enumerate(ids)}
        flow = np.zeros(len(ids))
        adj: list[dict[int, float]] = [dict() for _ in ids]
        for v in range(len(level)):
            a = remap[module[v]]
            flow[a] += level.flow[v]
            for nbr, f in level.adj[v].items():
                b = remap[module[nbr]]
                if a != b:
                    adj[a][b] = adj[a].get(b, 0.0) + f
        return _Level(flow, adj), [remap[mod] for mod in module]

    def core(self, level: _Level, rng) -> list[int]:
        """Move-and-aggregate until no merge happens; returns a module per
        node of ``level``."""
        membership = list(range(len(level)))
        current = level
        while True:
            module = list(range(len(current)))
            self.local_moves(current, module, rng)
            if len(set(module)) == len(current):
                return _dense(membership)
            current, remap = self.aggregate(current, module)
            membership = [remap[module[mod]] for mod in membership]

    def run_trial(self, rng) -> tuple[list[int], float]:
        labels = self.core(self.base, rng)
        best = self.codelength(labels)
        while True:
            fine = list(labels)
            self.local_moves(self.base, fine, rng)
            fine = _dense(fine)
            coarse_level, remap = self.aggregate(self.base, fine)
            merged = self.core(coarse_level, rng)
            candidate = _dense([merged[remap_i] for remap_i in remap])
            length = self.codelength(candidate)
            if length < best - _IMPROVE:
                labels, best = candidate, length
            else:
                return labels, best


def _dense(labels: Sequence[int]) -> list[int]:
    seen: dict[int, int] = {}
    return [seen.setdefault(mod, len(seen)) for mod in labels]


def detect_communities(graph: FlowGraph, seed: int = 0, trials: int = 10) -> Partition:
    """Search for the partition minimising the two-level map equation.

    Modules never span connected components (moves only target neighbouring
    or empty modules).  Module ids are 1-based, numbered by first appearance
    in sorted node order.  Identical ``seed`` gives identical output.
    """
    if len(graph) == 0:
        raise ValueError("empty graph")
    search = _Search(graph)
    rng = np.random.default_rng(seed)
    best_labels = [0] * len(graph)
    best_len = search.codelength(best_labels)
    singleton = list(range(len(graph)))
    single_len = search.codelength(singleton)
    if single_len < best_len - _IMPROVE:
        best_labels, best_len = singleton, single_len
    for _ in range(max(trials, 1)):
        labels, length = search.run_trial(rng)
        if length < best_len - _IMPROVE:
            best_labels, best_len = labels, length
    # isolated nodes carry no flow and cost nothing anywhere; keep them alone
    best_labels = list(best_labels)
    fresh = max(best_labels) + 1
    for i, v in enumerate(graph.visit):
        if v == 0:
            best_labels[i] = fresh
            fresh += 1
    labels = _dense(best_labels)
    assignment = {node: mod + 1 for node, mod in zip(graph.nodes, labels)}
    return Partition(assignment, map_equation_codelength(graph, assignment))
