import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outfitgen.catalog import (
    Catalog, CatalogError, DuplicateCategoryWarning, Outfit, load_catalog, save_catalog,
)

from conftest import make_catalog, random_outfits


def write(tmp_path, outfits, embeddings):
    op, ep = tmp_path / "outfits.tsv", tmp_path / "emb.tsv"
    op.write_text(outfits, encoding="utf-8")
    ep.write_text(embeddings, encoding="utf-8")
    return op, ep


EMB = "a\tc0\t1,0\nb\tc1\t0,1\nc\tc2\t1,1\nd\tc0\t0.5,0.5\n"


def test_load_inverts_membership(tmp_path):
    cat = load_catalog(*write(tmp_path, "o1\ta,b,c\no2\tc,d\n", EMB))
    assert cat.outfits_of["c"] == {"o1", "o2"}
    assert cat.outfits_of["a"] == {"o1"}
    assert cat.dim == 2 and len(cat.garment_ids) == 4 and len(cat) == 2


def test_dangling_reference_reports_line(tmp_path):
    with pytest.raises(CatalogError, match=r"outfits.tsv:2:.*zz"):
        load_catalog(*write(tmp_path, "o1\ta,b\no2\tc,zz\n", EMB))


def test_duplicate_garment(tmp_path):
    with pytest.raises(CatalogError, match="duplicate garment"):
        load_catalog(*write(tmp_path, "o1\ta,b\n", EMB + "a\tc0\t0,0\n"))


def test_duplicate_outfit(tmp_path):
    with pytest.raises(CatalogError, match="duplicate outfit"):
        load_catalog(*write(tmp_path, "o1\ta,b\no1\tc,d\n", EMB))


def test_ragged_embeddings(tmp_path):
    with pytest.raises(CatalogError, match=":2:"):
        load_catalog(*write(tmp_path, "o1\ta,b\n", "a\tc0\t1,0\nb\tc1\t0,1,2\n"))


def test_unparsable_float(tmp_path):
    with pytest.raises(CatalogError, match="parse"):
        load_catalog(*write(tmp_path, "o1\ta,b\n", "a\tc0\t1,x\nb\tc1\t0,1\n"))


def test_single_member_outfit():
    with pytest.raises(CatalogError):
        Catalog(["a", "b"], ["x", "y"], np.eye(2), [Outfit("o", ("a",))])


def test_repeated_member():
    with pytest.raises(CatalogError):
        Catalog(["a", "b"], ["x", "y"], np.eye(2), [Outfit("o", ("a", "a"))])


def test_duplicate_category_warns_only():
    with pytest.warns(DuplicateCategoryWarning):
        cat = Catalog(["a", "b"], ["x", "x"], np.eye(2), [Outfit("o", ("a", "b"))])
    assert "o" in cat.outfits


def test_embeddings_read_only():
    cat = make_catalog({"o": ["a", "b"]})
    with pytest.raises(ValueError):
        cat.embeddings[0, 0] = 1.0


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    cat = make_catalog(random_outfits(rng, 10, 20))
    back = load_catalog(*save_catalog(tmp_path, cat))
    assert back.garment_ids == cat.garment_ids
    np.testing.assert_array_equal(back.embeddings, cat.embeddings)
    assert dict(back.outfits) == dict(cat.outfits)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_outfits_of_is_inverse(seed):
    rng = np.random.default_rng(seed)
    cat = make_catalog(random_outfits(rng, 15, 25))
    for g in cat.garment_ids:
        for o in cat.outfits.values():
            assert (g in o.members) == (o.id in cat.outfits_of[g])
