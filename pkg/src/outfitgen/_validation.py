"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .catalog import Catalog, Outfit


def check_catalog(catalog, name="catalog"):
    if not isinstance(catalog, Catalog):
        raise TypeError(f"{name} must be a Catalog, got {type(catalog).__name__}")
    if not catalog.outfits:
        raise ValueError(f"{name} holds no outfits")
    return catalog


def check_outfits(outfits, catalog, min_size=2):
    """Normalise to a list of :class:`Outfit` whose garments are all known.

    Accepts outfits, ``(id, members)`` pairs, bare member sequences (ids are
    assigned as ``q0, q1, ...``) or a mapping of id to either form.
    """
    if isinstance(outfits, dict):
        items = list(outfits.items())
    else:
        items = list(enumerate(outfits))
    out = []
    for key, o in items:
        if isinstance(o, Outfit):
            pass
        elif isinstance(o, tuple) and len(o) == 2 and isinstance(o[0], str) and not isinstance(o[1], str):
            o = Outfit(o[0], tuple(o[1]))
        else:
            oid = key if isinstance(key, str) else f"q{key}"
            o = Outfit(oid, tuple(o))
        if len(o.members) < min_size:
            raise ValueError(f"outfit {o.id!r} has fewer than {min_size} garments")
        if len(set(o.members)) != len(o.members):
            raise ValueError(f"outfit {o.id!r} repeats a garment")
        unknown = [g for g in o.members if g not in catalog.index_of]
        if unknown:
            raise ValueError(f"outfit {o.id!r} references unknown garment {unknown[0]!r}")
        out.append(o)
    if not out:
        raise ValueError("no outfits given")
    return out


def check_seed(seed, catalog):
    if isinstance(seed, str):
        seed = [seed]
    seed = list(seed)
    if not seed:
        raise ValueError("empty garment seed")
    for g in seed:
        if g not in catalog.index_of:
            raise ValueError(f"unknown garment {g!r} in seed")
    if len(set(seed)) != len(seed):
        raise ValueError("seed repeats a garment")
    return seed


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_fraction(value, name, low=0.0, high=1.0, closed=True):
    v = float(value)
    ok = low <= v <= high if closed else low < v < high
    if not ok or not np.isfinite(v):
        raise ValueError(f"{name} must lie in [{low}, {high}], got {value!r}")
    return v
