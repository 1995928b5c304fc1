import math

import numpy as np
import pytest

from outfitgen import autodiff as ad, model
from outfitgen.autodiff import Tensor
from outfitgen.catalog import Catalog, Outfit
from outfitgen.graph import ItemRelationGraph, build_irg
from outfitgen.model import (
    STOP, EncoderOutput, GenerationError, TGNNConfig, candidate_logits, decode_sequence, decode_step,
    encode_graph, generate_outfit, init_params, neighborhood_attention, next_garment, score_candidates,
    transition,
)

TINY = dict(d_e=6, d_m=8, n_heads=2, k_enc=2, k_dec=2, dropout=0.0)


def tiny(**kw):
    return TGNNConfig(**{**TINY, **kw})


def perturb_params(params, rng, scale=0.1):
    """Give biases and norm affines non-trivial values."""
    for k, t in params.items():
        if k.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            t.data[...] = scale * rng.standard_normal(t.shape)
        elif k.endswith(".g"):
            t.data[...] = 1.0 + scale * rng.standard_normal(t.shape)
    return params


def path_graph(n):
    nodes = [f"n{i}" for i in range(n)]
    adj = {v: set() for v in nodes}
    for a, b in zip(nodes, nodes[1:]):
        adj[a].add(b)
        adj[b].add(a)
    return ItemRelationGraph(nodes, adj)


def emb_map(nodes, dim, seed):
    rng = np.random.default_rng(seed)
    return {v: rng.standard_normal(dim) for v in nodes}


# -- transition -------------------------------------------------------------

def test_transition_zero_weights():
    cfg = tiny()
    p = init_params(cfg)
    p["enc_in.W"].data[...] = 0.0
    np.testing.assert_array_equal(transition(np.ones(6), p, cfg).data, np.zeros(8))


def test_transition_identity():
    cfg = tiny(d_e=8)
    p = init_params(cfg)
    p["dec_in.W"].data[...] = np.eye(8)
    x = np.abs(np.random.default_rng(0).standard_normal(8))
    np.testing.assert_array_equal(transition(x, p, cfg, "decoder").data, x)


def test_transition_matches_affine_relu():
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=3), np.random.default_rng(3))
    x = np.random.default_rng(4).standard_normal(6)
    ref = np.maximum(x @ p["enc_in.W"].data + p["enc_in.b"].data, 0.0)
    np.testing.assert_allclose(transition(x, p, cfg).data, ref, atol=1e-12)
    with pytest.raises(ValueError):
        transition(np.ones(5), p, cfg)


# -- neighbourhood attention --------------------------------------------------

def attention_oracle(q_row, kv_rows, p, prefix, H):
    """Per-head loop: softmax(q k / sqrt(dk)) v, concatenate, project."""
    d = q_row.shape[0]
    dk = d // H
    q = q_row @ p[f"{prefix}.Wq"].data + p[f"{prefix}.bq"].data
    k = kv_rows @ p[f"{prefix}.Wk"].data + p[f"{prefix}.bk"].data
    v = kv_rows @ p[f"{prefix}.Wv"].data + p[f"{prefix}.bv"].data
    heads = []
    for h in range(H):
        sl = slice(h * dk, (h + 1) * dk)
        s = np.array([q[sl] @ k[j, sl] for j in range(len(kv_rows))]) / math.sqrt(dk)
        w = np.exp(s - s.max())
        w /= w.sum()
        heads.append(sum(w[j] * v[j, sl] for j in range(len(kv_rows))))
    return np.concatenate(heads) @ p[f"{prefix}.Wo"].data + p[f"{prefix}.bo"].data


def test_neighborhood_attention_matches_oracle():
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=1), np.random.default_rng(1))
    irg = ItemRelationGraph(["a", "b", "c"], {"a": {"b"}, "b": {"a", "c"}, "c": {"b"}})
    X = np.random.default_rng(2).standard_normal((3, 8))
    for i, node in enumerate(irg.nodes):
        nb = sorted(irg.position[m] for m in irg.neighbors(node))
        ref = attention_oracle(X[i], X[nb], p, "enc0.attn", cfg.n_heads)
        got = neighborhood_attention(node, irg, X, p, cfg).data
        np.testing.assert_allclose(got, ref, atol=1e-10)


def test_neighborhood_attention_singleton_is_value_projection():
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=1), np.random.default_rng(5))
    irg = ItemRelationGraph(["a", "b"], {"a": set(), "b": set()})
    X = np.random.default_rng(6).standard_normal((2, 8))
    v = X[0] @ p["enc0.attn.Wv"].data + p["enc0.attn.bv"].data
    ref = v @ p["enc0.attn.Wo"].data + p["enc0.attn.bo"].data
    np.testing.assert_allclose(neighborhood_attention("a", irg, X, p, cfg).data, ref, atol=1e-12)


def test_neighborhood_attention_identical_neighbours():
    cfg = tiny()
    p = init_params(cfg, seed=2)
    row = np.random.default_rng(0).standard_normal(8)
    star = ItemRelationGraph(list("abcde"), {"a": set("bcde"), **{x: {"a"} for x in "bcde"}})
    pair = ItemRelationGraph(list("ab"), {"a": {"b"}, "b": {"a"}})
    out5 = neighborhood_attention("a", star, np.tile(row, (5, 1)), p, cfg).data
    out2 = neighborhood_attention("a", pair, np.tile(row, (2, 1)), p, cfg).data
    np.testing.assert_allclose(out5, out2, atol=1e-12)


def test_neighborhood_attention_missing_node():
    cfg = tiny()
    with pytest.raises(KeyError):
        neighborhood_attention("zz", path_graph(3), np.zeros((3, 8)), init_params(cfg), cfg)


# -- encoder ------------------------------------------------------------------

def test_encoder_without_modules_is_transition():
    cfg = tiny(k_enc=0)
    p = init_params(cfg)
    irg = path_graph(4)
    emb = emb_map(irg.nodes, 6, 0)
    X = np.array([emb[v] for v in irg.nodes])
    np.testing.assert_array_equal(encode_graph(irg, emb, p, cfg).E.data, transition(X, p, cfg).data)


def test_encoder_dense_and_gather_paths_agree(monkeypatch):
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=4), np.random.default_rng(4))
    rng = np.random.default_rng(7)
    nodes = [f"g{i}" for i in range(12)]
    adj = {v: set() for v in nodes}
    for _ in range(15):
        a, b = rng.choice(12, 2, replace=False)
        adj[nodes[a]].add(nodes[b])
        adj[nodes[b]].add(nodes[a])
    irg = ItemRelationGraph(nodes, adj)
    emb = emb_map(nodes, 6, 1)
    dense = encode_graph(irg, emb, p, cfg).E.data
    monkeypatch.setattr(model, "DENSE_ATTENTION_LIMIT", 0)
    gathered = encode_graph(irg, emb, p, cfg).E.data
    np.testing.assert_allclose(dense, gathered, atol=1e-12)


@pytest.mark.parametrize("dense", [True, False])
def test_radius_locality_on_path(monkeypatch, dense):
    if not dense:
        monkeypatch.setattr(model, "DENSE_ATTENTION_LIMIT", 0)
    cfg = tiny(k_enc=2)
    p = perturb_params(init_params(cfg, seed=0), np.random.default_rng(0))
    irg = path_graph(5)
    emb = emb_map(irg.nodes, 6, 3)
    base = encode_graph(irg, emb, p, cfg)
    for far, target, dist in [("n4", "n1", 3), ("n4", "n0", 4), ("n4", "n2", 2), ("n3", "n2", 1)]:
        moved = dict(emb)
        moved[far] = emb[far] + 1.0
        out = encode_graph(irg, moved, p, cfg)
        delta = np.abs(out.row(target) - base.row(target)).max()
        if dist > cfg.k_enc:
            assert delta == 0.0
        else:
            assert delta > 0.0


def test_disconnected_components_are_bitwise_independent():
    cfg = tiny()
    p = init_params(cfg, seed=5)
    irg = ItemRelationGraph(list("abcd"), {"a": {"b"}, "b": {"a"}, "c": {"d"}, "d": {"c"}})
    emb = emb_map(irg.nodes, 6, 4)
    base = encode_graph(irg, emb, p, cfg)
    moved = dict(emb, a=emb["a"] * 3.0, b=-emb["b"])
    out = encode_graph(irg, moved, p, cfg)
    assert np.array_equal(out.row("c"), base.row("c"))
    assert np.array_equal(out.row("d"), base.row("d"))


def test_encoder_permutation_equivariance():
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=6), np.random.default_rng(6))
    irg = path_graph(6)
    emb = emb_map(irg.nodes, 6, 5)
    shuffled = ItemRelationGraph(list(reversed(irg.nodes)), {v: irg.neighbors(v) for v in irg.nodes})
    a, b = encode_graph(irg, emb, p, cfg), encode_graph(shuffled, emb, p, cfg)
    for v in irg.nodes:
        np.testing.assert_allclose(a.row(v), b.row(v), atol=1e-9)


def test_encoder_missing_embedding():
    cfg = tiny()
    with pytest.raises(KeyError):
        encode_graph(path_graph(3), {"n0": np.zeros(6)}, init_params(cfg), cfg)


# -- decoder and scoring ------------------------------------------------------

def _catalog(dim=6, n=8, seed=0, outfits=None):
    rng = np.random.default_rng(seed)
    ids = [f"g{i}" for i in range(n)]
    outfits = outfits or [Outfit("o0", ("g0", "g1")), Outfit("o1", ("g2", "g3"))]
    return Catalog(ids, [f"c{i % 4}" for i in range(n)], rng.standard_normal((n, dim)), outfits)


def test_decoder_is_causal():
    cfg = tiny()
    p = perturb_params(init_params(cfg, seed=7), np.random.default_rng(7))
    cat = _catalog()
    enc = encode_graph(build_irg(cat), cat, p, cfg)
    short = decode_sequence(Tensor(cat.embeddings[:2]), enc, p, cfg).data
    long = decode_sequence(Tensor(cat.embeddings[:4]), enc, p, cfg).data
    np.testing.assert_allclose(long[:2], short, atol=1e-12)
    h = decode_step(["g0", "g1"], enc, cat, p, cfg).data
    np.testing.assert_allclose(h, short[1], atol=1e-12)


def _norm(x, g, b):
    mu = x.mean()
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean() + 1e-10) * g + b


def test_decode_step_matches_explicit_oracle():
    cfg = tiny(k_dec=1)
    p = perturb_params(init_params(cfg, seed=8), np.random.default_rng(8))
    P = {k: v.data for k, v in p.items()}
    cat = _catalog()
    enc = encode_graph(build_irg(cat), cat, p, cfg)
    E = enc.E.data
    prefix = cat.embeddings[:2]
    x = np.maximum(prefix @ P["dec_in.W"] + P["dec_in.b"], 0.0)
    # position 1 attends to positions 0 and 1
    a = attention_oracle(x[1], x[:2], p, "dec0.self", cfg.n_heads)
    y = _norm(x[1] + a, P["dec0.ln1.g"], P["dec0.ln1.b"])
    c = attention_oracle(y, E, p, "dec0.cross", cfg.n_heads)
    y = _norm(y + c, P["dec0.ln2.g"], P["dec0.ln2.b"])
    f = np.maximum(y @ P["dec0.ff.W1"] + P["dec0.ff.b1"], 0.0) @ P["dec0.ff.W2"] + P["dec0.ff.b2"]
    ref = _norm(y + f, P["dec0.ln3.g"], P["dec0.ln3.b"])
    np.testing.assert_allclose(decode_step(["g0", "g1"], enc, cat, p, cfg).data, ref, atol=1e-10)
    with pytest.raises(ValueError):
        decode_step([], enc, cat, p, cfg)


def _dot_catalog():
    ids = ["x2", "x1", "x0", "y"]
    emb = np.zeros((4, 8))
    emb[0, 0], emb[1, 0], emb[3, 0] = 2.0, 1.0, 1.0
    return Catalog(ids, ["a", "a", "a", "b"], emb, [Outfit("o", ("x2", "y"))])


def test_score_candidates_known_softmax():
    cfg = tiny(d_e=8)
    p = init_params(cfg)
    p["dec_in.W"].data[...] = np.eye(8)
    cat = _dot_catalog()
    h = np.eye(8)[0]
    probs = score_candidates(h, ["x2", "x1", "x0"], cat, p, cfg).data
    np.testing.assert_allclose(probs, [0.6652, 0.2447, 0.0900], atol=1e-4)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert score_candidates(h, ["x1"], cat, p, cfg).data.tolist() == [1.0]
    np.testing.assert_allclose(score_candidates(h, ["x1", "y"], cat, p, cfg).data, [0.5, 0.5])
    perm = score_candidates(h, ["x0", "x2", "x1"], cat, p, cfg).data
    np.testing.assert_allclose(perm, probs[[2, 0, 1]], atol=1e-12)
    with pytest.raises(ValueError):
        score_candidates(h, [], cat, p, cfg)
    with pytest.raises(ValueError):
        score_candidates(h, ["x1", "x1"], cat, p, cfg)


def test_next_garment_filters_co_outfit_garments():
    cfg = tiny(d_e=8)
    p = init_params(cfg)
    p["dec_in.W"].data[...] = np.eye(8)
    cat = _dot_catalog()
    h = np.eye(8)[0]
    assert next_garment(h, ["x2", "x1", "x0"], [], cat, p, cfg) == "x2"
    # y shares outfit o with x2, so x2 is blocked
    assert next_garment(h, ["x2", "x1", "x0"], ["y"], cat, p, cfg) == "x1"
    assert next_garment(h, ["x2"], ["y"], cat, p, cfg) is None


def test_next_garment_invariant_to_logit_shift():
    cfg = tiny(d_e=8)
    p = init_params(cfg)
    p["dec_in.W"].data[...] = np.eye(8)
    cat = _dot_catalog()
    h = np.eye(8)[0]
    logits = candidate_logits(h, ["x2", "x1", "x0"], cat, p, cfg).data
    shifted = ad.softmax(Tensor(logits + 17.0)).data
    assert int(np.argmax(shifted)) == 0
    np.testing.assert_allclose(shifted, ad.softmax(Tensor(logits)).data, atol=1e-12)


# -- generation ---------------------------------------------------------------

def _gen_setup(**kw):
    cfg = tiny(**kw)
    cat = _catalog(n=10, outfits=[Outfit("o0", ("g0", "g1", "g2")), Outfit("o1", ("g3", "g4")),
                                   Outfit("o2", ("g5", "g6", "g7"))])
    p = perturb_params(init_params(cfg, seed=9), np.random.default_rng(9))
    return cfg, cat, p, build_irg(cat)


def test_generation_stops_when_stop_dominates():
    cfg = tiny(d_e=8)
    rng = np.random.default_rng(0)
    ids = [f"g{i}" for i in range(5)]
    cat = Catalog(ids, ids, -np.abs(rng.standard_normal((5, 8))), [Outfit("o", ("g0", "g1"))])
    p = init_params(cfg)
    p["dec_in.W"].data[...] = np.eye(8)
    last = f"dec{cfg.k_dec - 1}.ln3"
    p[f"{last}.g"].data[...] = 0.0
    p[f"{last}.b"].data[...] = 1.0
    p["stop"].data[...] = 5.0
    trace = []
    assert generate_outfit(["g2"], build_irg(cat), ids, cat, p, cfg, trace=trace) == []
    assert trace[0]["choice"] == STOP


def test_generation_cap_and_determinism():
    cfg, cat, p, irg = _gen_setup(max_generation_len=1)
    out = generate_outfit(["g0"], irg, list(cat.garment_ids), cat, p, cfg)
    assert len(out) <= 1
    cfg, cat, p, irg = _gen_setup()
    a = generate_outfit(["g0"], irg, list(cat.garment_ids), cat, p, cfg)
    b = generate_outfit(["g0"], irg, list(cat.garment_ids), cat, p, cfg)
    assert a == b
    assert "g0" not in a and len(set(a)) == len(a)
    for i, g in enumerate(a):
        # nothing that shares an outfit with an earlier generated garment
        assert all(g not in model.co_outfit_garments(prev, cat) for prev in a[:i])


def test_generation_rejects_linked_or_empty_seed():
    cfg, cat, p, irg = _gen_setup()
    with pytest.raises(GenerationError):
        generate_outfit(["g0", "g1"], irg, list(cat.garment_ids), cat, p, cfg)
    with pytest.raises(GenerationError):
        generate_outfit([], irg, list(cat.garment_ids), cat, p, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        TGNNConfig(d_m=10, n_heads=3)
    with pytest.raises(ValueError):
        TGNNConfig(dropout=1.0)
    assert TGNNConfig(d_m=64).ff_dim == 256
    assert TGNNConfig.from_dict(TGNNConfig().to_dict()).hash() == TGNNConfig().hash()
