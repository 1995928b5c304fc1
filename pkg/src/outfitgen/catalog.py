"""Garments, outfits and the inverted garment -> outfits index."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

import numpy as np

log = logging.getLogger(__name__)


class CatalogError(ValueError):
    """Malformed or inconsistent catalog input."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DuplicateCategoryWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Garment:
    id: str
    category: str
    embedding: np.ndarray


@dataclass(frozen=True)
class Outfit:
    id: str
    members: tuple

    def __len__(self):
        return len(self.members)


class Catalog:
    """Immutable collection of garments and outfits.

    Garment embeddings are stored row-wise in ``embeddings`` following the
    order of ``garment_ids``; ``index_of`` maps an id to its row.
    """

    def __init__(self, garment_ids, categories, embeddings, outfits, category_table=None):
        garment_ids = tuple(str(g) for g in garment_ids)
        embeddings = np.array(embeddings, dtype=np.float64)
        if embeddings.ndim != 2 or embeddings.shape[0] != len(garment_ids):
            raise CatalogError(
                f"embedding matrix shape {embeddings.shape} does not match {len(garment_ids)} garments"
            )
        if not np.all(np.isfinite(embeddings)):
            raise CatalogError("embeddings contain non-finite values")
        index_of = {}
        for i, g in enumerate(garment_ids):
            if g in index_of:
                raise CatalogError(f"duplicate garment id {g!r}")
            index_of[g] = i
        categories = tuple(str(c) for c in categories)
        if len(categories) != len(garment_ids):
            raise CatalogError("one category per garment required")
        if category_table is None:
            category_table = {c: c for c in sorted(set(categories))}
        for g, c in zip(garment_ids, categories):
            if c not in category_table:
                raise CatalogError(f"garment {g!r} has unknown category {c!r}")

        outfit_map = {}
        outfits_of = {g: [] for g in garment_ids}
        for o in outfits:
            if not isinstance(o, Outfit):
                o = Outfit(str(o[0]), tuple(str(m) for m in o[1]))
            _check_outfit(o, index_of)
            if o.id in outfit_map:
                raise CatalogError(f"duplicate outfit id {o.id!r}")
            outfit_map[o.id] = o
            cats = [categories[index_of[m]] for m in o.members]
            if len(set(cats)) != len(cats):
                warnings.warn(
                    f"outfit {o.id!r} holds more than one garment of a category",
                    DuplicateCategoryWarning,
                    stacklevel=2,
                )
            for m in o.members:
                outfits_of[m].append(o.id)

        embeddings.setflags(write=False)
        self._garment_ids = garment_ids
        self._categories = categories
        self._embeddings = embeddings
        self._index_of = MappingProxyType(index_of)
        self._outfits = MappingProxyType(outfit_map)
        self._outfits_of = MappingProxyType({g: frozenset(v) for g, v in outfits_of.items()})
        self._category_table = MappingProxyType(dict(category_table))

    # -- read-only views ---------------------------------------------------
    @property
    def garment_ids(self):
        return self._garment_ids

    @property
    def embeddings(self):
        return self._embeddings

    @property
    def dim(self):
        return self._embeddings.shape[1]

    @property
    def index_of(self):
        return self._index_of

    @property
    def outfits(self):
        return self._outfits

    @property
    def outfits_of(self):
        return self._outfits_of

    @property
    def category_table(self):
        return self._category_table

    @property
    def garments(self):
        return {g: self.garment(g) for g in self._garment_ids}

    def garment(self, gid):
        i = self._index_of[gid]
        return Garment(gid, self._categories[i], self._embeddings[i])

    def category(self, gid):
        return self._categories[self._index_of[gid]]

    def categories_of(self, gids):
        return [self._categories[self._index_of[g]] for g in gids]

    def embedding(self, gid):
        return self._embeddings[self._index_of[gid]]

    def rows(self, gids):
        return np.array([self._index_of[g] for g in gids], dtype=np.intp)

    def __len__(self):
        return len(self._outfits)

    def __repr__(self):
        return (
            f"Catalog({len(self._garment_ids)} garments, {len(self._outfits)} outfits, "
            f"dim={self.dim})"
        )

    # -- derived catalogs --------------------------------------------------
    def with_embeddings(self, embeddings):
        """Same garments and outfits, new embedding matrix (e.g. after PCA)."""
        return Catalog(
            self._garment_ids,
            self._categories,
            embeddings,
            self._outfits.values(),
            self._category_table,
        )

    def subset(self, outfit_ids):
        """Keep every garment but only the listed outfits."""
        return Catalog(
            self._garment_ids,
            self._categories,
            self._embeddings,
            [self._outfits[o] for o in outfit_ids],
            self._category_table,
        )


def _check_outfit(outfit, index_of):
    if len(outfit.members) < 2:
        raise CatalogError(f"outfit {outfit.id!r} has fewer than 2 members")
    if len(set(outfit.members)) != len(outfit.members):
        raise CatalogError(f"outfit {outfit.id!r} lists a garment twice")
    for m in outfit.members:
        if m not in index_of:
            raise CatalogError(f"outfit {outfit.id!r} references unknown garment {m!r}")


# -- file formats ------------------------------------------------------------

def read_embeddings(path):
    """Parse ``garment_id<TAB>category_id<TAB>v1,v2,...`` rows."""
    ids, cats, rows = [], [], []
    first_seen = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CatalogError("expected 3 tab-separated fields", path, lineno)
            gid, cat, values = parts
            try:
                vec = [float(v) for v in values.split(",")]
            except ValueError:
                raise CatalogError("could not parse embedding values", path, lineno) from None
            if width is None:
                width = len(vec)
            elif len(vec) != width:
                raise CatalogError(
                    f"embedding length {len(vec)} differs from {width}", path, lineno
                )
            if gid in first_seen:
                raise CatalogError(
                    f"duplicate garment id {gid!r} (first on line {first_seen[gid]})", path, lineno
                )
            first_seen[gid] = lineno
            ids.append(gid)
            cats.append(cat)
            rows.append(vec)
    if not ids:
        raise CatalogError("no embeddings found", path)
    return ids, cats, np.array(rows, dtype=np.float64)


def read_outfits(path):
    """Parse ``outfit_id<TAB>garment_id,garment_id,...`` rows."""
    out = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[1]:
                raise CatalogError("expected outfit_id<TAB>comma-separated garment ids", path, lineno)
            oid = parts[0]
            if oid in seen:
                raise CatalogError(f"duplicate outfit id {oid!r} (first on line {seen[oid]})", path, lineno)
            seen[oid] = lineno
            out.append((lineno, Outfit(oid, tuple(parts[1].split(",")))))
    return out


def load_catalog(outfits_path, embeddings_path):
    """Read both files and build a validated :class:`Catalog`."""
    ids, cats, emb = read_embeddings(embeddings_path)
    known = set(ids)
    records = read_outfits(outfits_path)
    for lineno, o in records:
        try:
            _check_outfit(o, known)
        except CatalogError as exc:
            raise CatalogError(str(exc), outfits_path, lineno) from None
    catalog = Catalog(ids, cats, emb, [o for _, o in records])
    log.info("loaded %r", catalog)
    return catalog


def _fmt(x):
    return repr(float(x))


def write_embeddings(path, catalog):
    with open(path, "w", encoding="utf-8") as fh:
        for i, g in enumerate(catalog.garment_ids):
            vec = ",".join(_fmt(v) for v in catalog.embeddings[i])
            fh.write(f"{g}\t{catalog.category(g)}\t{vec}\n")


def write_outfits(path, outfits):
    with open(path, "w", encoding="utf-8") as fh:
        for o in outfits:
            fh.write(f"{o.id}\t{','.join(o.members)}\n")


def save_catalog(directory, catalog, prefix=""):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    op = directory / f"{prefix}outfits.tsv"
    ep = directory / f"{prefix}embeddings.tsv"
    write_outfits(op, catalog.outfits.values())
    write_embeddings(ep, catalog)
    return op, ep
