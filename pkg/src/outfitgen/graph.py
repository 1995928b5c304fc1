"""Outfit and item relation graphs, induction, edge removal and statistics."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components


class GraphError(ValueError):
    pass


class OutfitRelationGraph:
    """Outfits as nodes; an edge joins two outfits sharing a garment."""

    def __init__(self, nodes, adjacency):
        self.nodes = tuple(nodes)
        self.adjacency = {n: frozenset(adjacency.get(n, ())) for n in self.nodes}

    @property
    def edges(self):
        return {
            (a, b) if a < b else (b, a)
            for a, nbrs in self.adjacency.items()
            for b in nbrs
        }

    def __len__(self):
        return len(self.nodes)

    def degree(self, node):
        return len(self.adjacency[node])

    def __repr__(self):
        return f"OutfitRelationGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"


class ItemRelationGraph:
    """Garments as nodes; every node is its own neighbour."""

    def __init__(self, nodes, adjacency):
        self.nodes = tuple(nodes)
        self.adjacency = {n: frozenset(adjacency[n]) | {n} for n in self.nodes}
        self._position = None

    def neighbors(self, node):
        try:
            return self.adjacency[node]
        except KeyError:
            raise GraphError(f"node {node!r} not in graph") from None

    def has_edge(self, a, b):
        return b in self.adjacency.get(a, ())

    def __contains__(self, node):
        return node in self.adjacency

    def __len__(self):
        return len(self.nodes)

    @property
    def edges(self):
        """Undirected edges as sorted pairs, self edges excluded."""
        return {
            (a, b) if a < b else (b, a)
            for a, nbrs in self.adjacency.items()
            for b in nbrs
            if a != b
        }

    @property
    def position(self):
        if self._position is None:
            self._position = {n: i for i, n in enumerate(self.nodes)}
        return self._position

    def neighbor_table(self):
        """Padded neighbour index matrix and validity mask, in node order.

        Row ``i`` lists the positions of ``N(nodes[i])`` with the node itself
        first; padding slots point at the node itself and are masked out.
        """
        pos = self.position
        width = max((len(self.adjacency[n]) for n in self.nodes), default=1)
        table = np.zeros((len(self.nodes), width), dtype=np.intp)
        mask = np.zeros((len(self.nodes), width), dtype=bool)
        for i, n in enumerate(self.nodes):
            others = sorted(pos[m] for m in self.adjacency[n] if m != n)
            row = [i] + others
            table[i, : len(row)] = row
            table[i, len(row):] = i
            mask[i, : len(row)] = True
        return table, mask

    def adjacency_matrix(self, self_loops=False):
        pos = self.position
        rows, cols = [], []
        for n in self.nodes:
            i = pos[n]
            for m in self.adjacency[n]:
                if m != n or self_loops:
                    rows.append(i)
                    cols.append(pos[m])
        data = np.ones(len(rows), dtype=np.int64)
        k = len(self.nodes)
        return sparse.csr_matrix((data, (rows, cols)), shape=(k, k))

    def __eq__(self, other):
        if not isinstance(other, ItemRelationGraph):
            return NotImplemented
        return set(self.nodes) == set(other.nodes) and self.adjacency == other.adjacency

    def __repr__(self):
        return f"ItemRelationGraph({len(self.nodes)} nodes, {len(self.edges)} edges)"


def build_org(catalog):
    adjacency = {o: set() for o in catalog.outfits}
    for g in catalog.garment_ids:
        holders = catalog.outfits_of[g]
        if len(holders) < 2:
            continue
        for a, b in combinations(holders, 2):
            adjacency[a].add(b)
            adjacency[b].add(a)
    return OutfitRelationGraph(catalog.outfits.keys(), adjacency)


def _irg_over(garments, catalog):
    """Garments linked iff some catalog outfit holds both."""
    keep = set(garments)
    adjacency = {g: {g} for g in garments}
    seen_outfits = set()
    for g in garments:
        for oid in catalog.outfits_of[g]:
            if oid in seen_outfits:
                continue
            seen_outfits.add(oid)
            members = [m for m in catalog.outfits[oid].members if m in keep]
            for m in members:
                adjacency[m].update(members)
    return ItemRelationGraph(garments, adjacency)


def build_irg(catalog):
    """IRG over every garment that appears in at least one outfit."""
    garments = [g for g in catalog.garment_ids if catalog.outfits_of[g]]
    return _irg_over(garments, catalog)


def induce_irg(org_nodes, catalog):
    """IRG induced by a set of outfits.

    Nodes are the garments of the listed outfits; two of them are linked when
    any outfit of ``catalog`` contains both.
    """
    wanted = set()
    for oid in org_nodes:
        if oid not in catalog.outfits:
            raise GraphError(f"unknown outfit id {oid!r}")
        wanted.update(catalog.outfits[oid].members)
    garments = [g for g in catalog.garment_ids if g in wanted]
    return _irg_over(garments, catalog)


def remove_outfit_edges(irg, outfit):
    """Copy of ``irg`` without any edge joining two distinct members of
    ``outfit``. Self edges survive."""
    members = outfit.members if hasattr(outfit, "members") else tuple(outfit)
    for m in members:
        if m not in irg:
            raise GraphError(f"garment {m!r} is not in the graph")
    drop = set(members)
    adjacency = {}
    for n in irg.nodes:
        nbrs = irg.adjacency[n]
        adjacency[n] = nbrs - (drop - {n}) if n in drop else nbrs
    return ItemRelationGraph(irg.nodes, adjacency)


@dataclass(frozen=True)
class GraphStats:
    node_count: int
    edge_count: int
    avg_degree: float
    median_degree: float
    connected_components: int
    transitivity: float
    avg_clustering_coeff: float

    ROW_NAMES = (
        ("Nodes", "node_count"),
        ("Edges", "edge_count"),
        ("Avg. Degree", "avg_degree"),
        ("Median Degree", "median_degree"),
        ("Conn. Components", "connected_components"),
        ("Transitivity", "transitivity"),
        ("Avg. Cluster Coeff.", "avg_clustering_coeff"),
    )

    def report(self):
        lines = []
        for label, attr in self.ROW_NAMES:
            value = getattr(self, attr)
            text = str(value) if isinstance(value, (int, np.integer)) else f"{value:.6g}"
            lines.append(f"{label}\t{text}")
        return "\n".join(lines) + "\n"


def graph_stats(irg):
    """Degree, component and clustering statistics; self edges ignored."""
    n = len(irg)
    if n == 0:
        return GraphStats(0, 0, 0.0, 0.0, 0, 0.0, 0.0)
    A = irg.adjacency_matrix(self_loops=False).astype(np.float64)
    deg = np.asarray(A.sum(axis=1)).ravel()
    edges = int(deg.sum() // 2)
    n_comp, _ = connected_components(A, directed=False)

    # closed walks of length 3 through each node, i.e. 2 * triangles(node)
    tri2 = np.asarray((A @ A).multiply(A).sum(axis=1)).ravel()
    triangles = tri2 / 2.0
    pairs = deg * (deg - 1) / 2.0
    triples = pairs.sum()
    transitivity = float(triangles.sum() / triples) if triples > 0 else 0.0
    local = np.divide(triangles, pairs, out=np.zeros(n), where=pairs > 0)
    return GraphStats(
        node_count=n,
        edge_count=edges,
        avg_degree=float(deg.mean()),
        median_degree=float(np.median(deg)),
        connected_components=int(n_comp),
        transitivity=transitivity,
        avg_clustering_coeff=float(local.mean()),
    )
