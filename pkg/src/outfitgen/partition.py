"""Balanced min-cut partitioning of the outfit relation graph and
partition lookup for unseen outfits.

The partitioner is multilevel: heavy-edge matching coarsens the graph,
greedy region growing seeds ``k`` parts on the coarsest level, and each
uncoarsening step runs boundary refinement under the size bounds.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class PartitionError(ValueError):
    pass


@dataclass
class PartitionSet:
    partitions: list
    assignment: dict
    size_target: int
    edge_cut: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.partitions)

    def sizes(self):
        return [len(p) for p in self.partitions]

    def size_bounds(self):
        return math.ceil(self.size_target / 2), math.ceil(3 * self.size_target / 2)


def edge_cut(org, assignment):
    return sum(1 for a, b in org.edges if assignment[a] != assignment[b])


# --------------------------------------------------------------------------
# internal weighted graph: list of dicts {neighbour: weight}, node weights
# --------------------------------------------------------------------------

def _coarsen(adj, vw, max_vw, rng):
    n = len(adj)
    match = np.full(n, -1, dtype=np.intp)
    for u in rng.permutation(n):
        if match[u] >= 0:
            continue
        best, best_w = -1, 0
        for v, w in adj[u].items():
            if match[v] < 0 and v != u and vw[u] + vw[v] <= max_vw:
                if w > best_w or (w == best_w and best >= 0 and v < best):
                    best, best_w = v, w
        if best >= 0:
            match[u] = best
            match[best] = u
        else:
            match[u] = u
    cmap = np.full(n, -1, dtype=np.intp)
    nc = 0
    for u in range(n):
        if cmap[u] < 0:
            cmap[u] = nc
            cmap[match[u]] = nc
            nc += 1
    cadj = [dict() for _ in range(nc)]
    cvw = np.zeros(nc, dtype=np.int64)
    for u in range(n):
        cu = cmap[u]
        cvw[cu] += vw[u]
        for v, w in adj[u].items():
            cv = cmap[v]
            if cv != cu:
                cadj[cu][cv] = cadj[cu].get(cv, 0) + w
    return cadj, cvw, cmap


def _grow_regions(adj, vw, k, targets, rng):
    n = len(adj)
    part = np.full(n, -1, dtype=np.intp)
    order = list(rng.permutation(n))
    for p in range(k - 1):
        weight = 0
        conn = {}
        while weight < targets[p]:
            if conn:
                u = max(conn, key=lambda x: (conn[x], -x))
                del conn[u]
                if part[u] >= 0 or weight + vw[u] > targets[p]:
                    continue
            else:
                u = next(
                    (x for x in order if part[x] < 0 and (weight == 0 or weight + vw[x] <= targets[p])),
                    None,
                )
                if u is None:
                    break
            part[u] = p
            weight += vw[u]
            for v, w in adj[u].items():
                if part[v] < 0:
                    conn[v] = conn.get(v, 0) + w
    part[part < 0] = k - 1
    return part


def _refine(adj, vw, part, k, lo, hi, rng, passes=8):
    weights = np.bincount(part, weights=vw, minlength=k).astype(np.int64)
    n = len(adj)
    for _ in range(passes):
        moved = 0
        for u in rng.permutation(n):
            p = part[u]
            if not adj[u]:
                continue
            conn = {}
            for v, w in adj[u].items():
                conn[part[v]] = conn.get(part[v], 0) + w
            internal = conn.get(p, 0)
            best_q, best_gain = -1, 0
            for q, c in conn.items():
                if q == p:
                    continue
                gain = c - internal
                if weights[p] - vw[u] < lo or weights[q] + vw[u] > hi:
                    continue
                if gain > best_gain or (gain == best_gain and gain > 0 and q < best_q):
                    best_q, best_gain = q, gain
            if best_q >= 0:
                part[u] = best_q
                weights[p] -= vw[u]
                weights[best_q] += vw[u]
                moved += 1
        if not moved:
            break
    return part


def _rebalance(adj, part, k, lo, hi):
    """Unit node weights only. Move nodes out of oversized parts and into
    undersized ones, each time choosing the move that loses least cut."""
    n = len(adj)
    sizes = np.bincount(part, minlength=k)

    def move_cost(u, q):
        c_here = sum(w for v, w in adj[u].items() if part[v] == part[u])
        c_there = sum(w for v, w in adj[u].items() if part[v] == q)
        return c_here - c_there

    for _ in range(4 * n):
        over = [p for p in range(k) if sizes[p] > hi]
        under = [p for p in range(k) if sizes[p] < lo]
        if not over and not under:
            break
        if over:
            src = over[0]
            dests = [q for q in range(k) if q != src and sizes[q] < hi] or [int(np.argmin(sizes))]
            candidates = np.flatnonzero(part == src)
        else:
            dst = under[0]
            srcs = [p for p in range(k) if p != dst and sizes[p] > lo]
            if not srcs:
                break
            candidates = np.flatnonzero(np.isin(part, srcs))
            dests = [dst]
        best = None
        for u in candidates:
            for q in dests:
                cost = move_cost(u, q)
                key = (cost, sizes[q], u)
                if best is None or key < best[0]:
                    best = (key, u, q)
        _, u, q = best
        sizes[part[u]] -= 1
        sizes[q] += 1
        part[u] = q
    return part


def partition_org(org, phi, seed=0):
    """Split the ORG into parts of roughly ``phi`` outfits each."""
    phi = int(phi)
    if phi < 2:
        raise PartitionError("phi must be >= 2")
    nodes = list(org.nodes)
    n = len(nodes)
    if n == 0:
        raise PartitionError("cannot partition an empty graph")
    if phi > n:
        warnings.warn(f"phi={phi} exceeds the {n} graph nodes; returning one partition", stacklevel=2)
    k = max(1, int(math.floor(n / phi + 0.5)))
    if k == 1:
        assignment = {o: 0 for o in nodes}
        return PartitionSet([list(nodes)], assignment, phi, 0, {"k": 1})

    rng = np.random.default_rng(seed)
    pos = {o: i for i, o in enumerate(nodes)}
    adj = [{pos[v]: 1 for v in sorted(org.adjacency[o], key=pos.get)} for o in nodes]
    vw = np.ones(n, dtype=np.int64)

    base, extra = divmod(n, k)
    targets = [base + (1 if i < extra else 0) for i in range(k)]
    mean_size = n / k
    lo = max(math.ceil(phi / 2), math.floor(0.9 * mean_size))
    hi = min(math.ceil(3 * phi / 2), math.ceil(1.1 * mean_size))
    lo, hi = min(lo, base), max(hi, base + (1 if extra else 0))

    # coarsen
    levels = []
    cur_adj, cur_vw = adj, vw
    max_vw = max(1, int(mean_size // 4))
    while len(cur_adj) > max(8 * k, 40):
        cadj, cvw, cmap = _coarsen(cur_adj, cur_vw, max_vw, rng)
        if len(cadj) > 0.95 * len(cur_adj):
            break
        levels.append((cur_adj, cur_vw, cmap))
        cur_adj, cur_vw = cadj, cvw

    part = _grow_regions(cur_adj, cur_vw, k, targets, rng)
    slack = int(cur_vw.max())
    part = _refine(cur_adj, cur_vw, part, k, lo - slack, hi + slack, rng)
    for fine_adj, fine_vw, cmap in reversed(levels):
        part = part[cmap]
        slack = int(fine_vw.max())
        part = _refine(fine_adj, fine_vw, part, k, lo - slack, hi + slack, rng)

    part = _rebalance(adj, part, k, lo, hi)
    part = _refine(adj, vw, part, k, lo, hi, rng)

    partitions = [[] for _ in range(k)]
    for i, o in enumerate(nodes):
        partitions[part[i]].append(o)
    # drop parts that ended up empty (only possible on degenerate inputs)
    partitions = [p for p in partitions if p]
    assignment = {o: i for i, p in enumerate(partitions) for o in p}
    cut = edge_cut(org, assignment)
    log.info("partitioned %d outfits into %d parts, edge cut %d", n, len(partitions), cut)
    return PartitionSet(partitions, assignment, phi, cut, {"k": k, "levels": len(levels), "seed": seed})


def random_assignment_cut(org, k, seed):
    """Edge cut of a uniformly random balanced assignment (baseline)."""
    rng = np.random.default_rng(seed)
    nodes = list(org.nodes)
    labels = np.arange(len(nodes)) % k
    rng.shuffle(labels)
    return edge_cut(org, dict(zip(nodes, labels)))


# --------------------------------------------------------------------------
# lookup
# --------------------------------------------------------------------------

class PartitionLocator:
    """Maps a list of garments to the partition holding most of their
    nearest training garments (cosine similarity, one neighbour each).

    Ties between partitions go to the smallest index.
    """

    def __init__(self, partitions, catalog):
        if not partitions.partitions:
            raise PartitionError("empty partition set")
        self.partitions = partitions
        self.catalog = catalog
        train = [g for g in catalog.garment_ids if any(
            o in partitions.assignment for o in catalog.outfits_of[g]
        )]
        if not train:
            raise PartitionError("no training garment belongs to a partition")
        self.train_ids = train
        emb = catalog.embeddings[catalog.rows(train)]
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        self._unit = emb / np.where(norms > 0, norms, 1.0)
        self._parts_of = [
            sorted({partitions.assignment[o] for o in catalog.outfits_of[g] if o in partitions.assignment})
            for g in train
        ]

    def nearest(self, embeddings):
        q = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        q = q / np.where(norms > 0, norms, 1.0)
        return np.argmax(q @ self._unit.T, axis=1)

    def votes(self, embeddings):
        counts = np.zeros(len(self.partitions), dtype=np.int64)
        for j in self.nearest(embeddings):
            for p in self._parts_of[j]:
                counts[p] += 1
        return counts

    def locate(self, garment_ids):
        if not garment_ids:
            raise PartitionError("empty query")
        emb = self.catalog.embeddings[self.catalog.rows(garment_ids)]
        return int(np.argmax(self.votes(emb)))


def partition_for_outfit(query, partitions, catalog, mode="test", outfit_id=None, locator=None):
    """Partition index used as graph context for ``query``.

    ``train`` mode is a lookup of the outfit's own assignment (pass
    ``outfit_id``, or the members of an outfit in ``catalog``); ``test`` mode
    votes with nearest training garments.
    """
    if not query:
        raise PartitionError("empty query")
    if not partitions.partitions:
        raise PartitionError("empty partition set")
    if mode == "train":
        if outfit_id is None:
            members = set(query)
            matches = [
                o.id for o in catalog.outfits.values()
                if set(o.members) == members and o.id in partitions.assignment
            ]
            if not matches:
                raise PartitionError("train-mode query is not a partitioned outfit")
            outfit_id = matches[0]
        if outfit_id not in partitions.assignment:
            raise PartitionError(f"outfit {outfit_id!r} not in any partition")
        return partitions.assignment[outfit_id]
    if mode != "test":
        raise ValueError("mode must be 'train' or 'test'")
    locator = locator or PartitionLocator(partitions, catalog)
    return locator.locate(list(query))


def save_partitions(path, partitions):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# size_target={partitions.size_target} edge_cut={partitions.edge_cut}\n")
        for i, p in enumerate(partitions.partitions):
            for o in p:
                fh.write(f"{o}\t{i}\n")


def load_partitions(path):
    size_target, cut = 0, 0
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "size_target":
                        size_target = int(val)
                    elif key == "edge_cut":
                        cut = int(val)
                continue
            try:
                oid, idx = line.split("\t")
                groups.setdefault(int(idx), []).append(oid)
            except ValueError:
                raise PartitionError(f"{path}:{lineno}: malformed partition row") from None
    parts = [groups[i] for i in sorted(groups)]
    assignment = {o: i for i, p in enumerate(parts) for o in p}
    return PartitionSet(parts, assignment, size_target, cut)
