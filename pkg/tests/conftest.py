import numpy as np
import pytest

from outfitgen.catalog import Catalog, Outfit


def make_catalog(outfits, dim=4, seed=0, categories=None):
    """Catalog over every garment named in ``outfits`` (dict id -> members).

    Garment categories default to one per garment so no warnings fire.
    """
    rng = np.random.default_rng(seed)
    ids = sorted({g for m in outfits.values() for g in m})
    cats = [categories[g] if categories else f"c_{g}" for g in ids]
    emb = rng.standard_normal((len(ids), dim))
    return Catalog(ids, cats, emb, [Outfit(k, tuple(v)) for k, v in outfits.items()])


def random_outfits(rng, n_outfits, n_garments, low=2, high=5):
    out = {}
    for i in range(n_outfits):
        k = int(rng.integers(low, high + 1))
        members = rng.choice(n_garments, size=min(k, n_garments), replace=False)
        out[f"o{i:03d}"] = [f"g{j:03d}" for j in sorted(members)]
    return out


@pytest.fixture
def small_catalog():
    return make_catalog({"o1": ["a", "b", "c"], "o2": ["c", "d"]})
