"""Synthetic catalogs with a planted style/category compatibility oracle."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .catalog import Catalog, Outfit


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    num_styles: int = 4
    num_categories: int = 8
    garments_per_cell: int = 62
    outfit_count: int = 600
    min_size: int = 3
    max_size: int = 8
    size_peak: float = 6.0
    size_spread: float = 1.5
    sigma: float = 0.05
    share_prob: float = 0.3
    raw_dim: int = 128
    seed: int = 42
    looks_per_style: int = 1

    def __post_init__(self):
        if self.num_styles < 2 or self.num_categories < 2:
            raise SynthConfigError("need at least 2 styles and 2 categories")
        if self.sigma < 0:
            raise SynthConfigError("sigma must be >= 0")
        if not 0.0 <= self.share_prob <= 1.0:
            raise SynthConfigError("share_prob must lie in [0, 1]")
        if not 2 <= self.min_size <= self.max_size:
            raise SynthConfigError("need 2 <= min_size <= max_size")
        if self.max_size > self.num_categories:
            raise SynthConfigError("outfit size cannot exceed the number of categories")
        if self.raw_dim < self.num_styles + self.num_categories:
            raise SynthConfigError("raw_dim too small for orthogonal anchors")
        if not 1 <= self.looks_per_style <= self.garments_per_cell:
            raise SynthConfigError("looks_per_style must lie in [1, garments_per_cell]")
        if self.garments_per_cell < 1 or self.outfit_count < 1:
            raise SynthConfigError("garments_per_cell and outfit_count must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class SynthOracle:
    labels: dict
    looks: dict = None

    def style(self, gid):
        return self.labels[gid][0]

    def category(self, gid):
        return self.labels[gid][1]

    def look(self, gid):
        return self.looks[gid] if self.looks else 0


def size_distribution(config):
    sizes = np.arange(config.min_size, config.max_size + 1)
    w = np.exp(-0.5 * ((sizes - config.size_peak) / config.size_spread) ** 2)
    return sizes, w / w.sum()


def anchors(config, rng):
    """Unit-norm, mutually orthogonal style and category anchors."""
    k = config.num_styles + config.num_categories
    q, _ = np.linalg.qr(rng.standard_normal((config.raw_dim, k)))
    basis = q.T
    return basis[: config.num_styles], basis[config.num_styles :]


def generate_synthetic_catalog(config):
    """Return ``(catalog, oracle)``.

    Every outfit takes a single style and one garment from each of a random
    subset of categories. With probability ``share_prob`` a slot reuses a
    garment that already appeared in an earlier outfit of the same style
    and category, which is what links outfits in the relation graphs.
    """
    rng = np.random.default_rng(config.seed)
    S, K, G = config.num_styles, config.num_categories, config.garments_per_cell
    style_anchor, cat_anchor = anchors(config, rng)

    L = config.looks_per_style
    width = len(str(S * K * G - 1))
    ids, cats, labels, looks, rows = [], [], {}, {}, []
    cell = {}
    for s in range(S):
        for c in range(K):
            for j in range(G):
                gid = f"g{len(ids):0{width}d}"
                ids.append(gid)
                cats.append(f"c{c}")
                labels[gid] = (s, c)
                # contiguous, near-equal chunks of the cell form the looks
                looks[gid] = j * L // G
                rows.append(style_anchor[s] + cat_anchor[c])
                cell.setdefault((s, looks[gid], c), []).append(gid)
    emb = np.array(rows) + config.sigma * rng.standard_normal((len(ids), config.raw_dim))

    sizes, probs = size_distribution(config)
    fresh = {key: 0 for key in cell}
    used = {key: [] for key in cell}
    owidth = len(str(config.outfit_count - 1))
    outfits = []
    for i in range(config.outfit_count):
        s = int(rng.integers(S))
        look = int(rng.integers(L))
        n = int(rng.choice(sizes, p=probs))
        chosen_cats = sorted(rng.choice(K, size=n, replace=False).tolist())
        members = []
        for c in chosen_cats:
            key = (s, look, c)
            reuse = used[key] and rng.random() < config.share_prob
            if not reuse and fresh[key] >= len(cell[key]):
                if config.share_prob == 0.0:
                    raise SynthConfigError(
                        f"cell (style {s}, category {c}) ran out of garments with sharing disabled"
                    )
                reuse = True
            if reuse:
                gid = used[key][int(rng.integers(len(used[key])))]
            else:
                gid = cell[key][fresh[key]]
                fresh[key] += 1
                used[key].append(gid)
            members.append(gid)
        outfits.append(Outfit(f"o{i:0{owidth}d}", tuple(members)))

    table = {f"c{c}": f"c{c}" for c in range(K)}
    return Catalog(ids, cats, emb, outfits, table), SynthOracle(labels, looks if L > 1 else None)


def oracle_compatible(outfit, oracle):
    """True iff every garment shares one style and categories are distinct."""
    members = outfit.members if hasattr(outfit, "members") else list(outfit)
    for g in members:
        if g not in oracle.labels:
            raise KeyError(f"garment {g!r} unknown to the oracle")
    styles = {oracle.style(g) for g in members}
    cats = [oracle.category(g) for g in members]
    return len(styles) <= 1 and len(set(cats)) == len(cats)


def nearest_centroid_accuracy(catalog, oracle):
    """Fraction of garments whose (style, category) label is recovered by
    the nearest per-label mean embedding."""
    keys = sorted({oracle.labels[g] for g in catalog.garment_ids})
    lab = np.array([keys.index(oracle.labels[g]) for g in catalog.garment_ids])
    X = catalog.embeddings
    centroids = np.stack([X[lab == k].mean(axis=0) for k in range(len(keys))])
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return float(np.mean(np.argmin(d2, axis=1) == lab))


def split_outfits(catalog, fractions=(0.8, 0.1, 0.1), seed=0, disjoint_garments=False):
    """Outfit-level train/val/test split.

    With ``disjoint_garments`` whole connected groups of garment-sharing
    outfits go to one split, so no garment appears in two splits.
    """
    if not math.isclose(sum(fractions), 1.0):
        raise ValueError("fractions must sum to 1")
    rng = np.random.default_rng(seed)
    oids = list(catalog.outfits)
    if disjoint_garments:
        from .graph import build_org

        org = build_org(catalog)
        seen, groups = set(), []
        for o in oids:
            if o in seen:
                continue
            comp, stack = [], [o]
            seen.add(o)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in sorted(org.adjacency[u]):
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            groups.append(sorted(comp))
    else:
        groups = [[o] for o in oids]
    order = rng.permutation(len(groups))
    total = len(oids)
    bounds = np.cumsum(fractions) * total
    splits = ([], [], [])
    placed = 0
    for gi in order:
        group = groups[gi]
        k = int(np.searchsorted(bounds, placed, side="right"))
        splits[min(k, 2)].extend(group)
        placed += len(group)
    return tuple(sorted(s) for s in splits)


def save_oracle(path, oracle):
    with open(path, "w", encoding="utf-8") as fh:
        for gid in sorted(oracle.labels):
            s, c = oracle.labels[gid]
            fh.write(f"{gid}\t{s}\tc{c}\n")


def load_oracle(path):
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            gid, s, c = line.split("\t")
            labels[gid] = (int(s), int(c.lstrip("c")))
    return SynthOracle(labels)
