"""Graph-restricted transformer encoder, autoregressive decoder and
candidate scoring for seeded outfit generation.

Parameters live in a flat ``{name: Tensor}`` dict so the optimizer and the
checkpoint code can treat them uniformly. Weight matrices are stored
``(in, out)`` and applied as ``x @ W + b``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

STOP = "<stop>"
_MASKED = -1e9


class GenerationError(ValueError):
    pass


@dataclass
class TGNNConfig:
    d_e: int = 128
    d_m: int = 256
    n_heads: int = 8
    k_enc: int = 4
    k_dec: int = 4
    d_ff: int | None = None
    dropout: float = 0.35
    max_generation_len: int = 19

    def __post_init__(self):
        self.validate()

    @property
    def ff_dim(self):
        """Hidden width of the feed-forward sublayers (4 * d_m unless set)."""
        return 4 * self.d_m if self.d_ff is None else self.d_ff

    def validate(self):
        for name in ("d_e", "d_m", "n_heads", "ff_dim", "max_generation_len"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.k_enc < 0 or self.k_dec < 1:
            raise ValueError("k_enc must be >= 0 and k_dec >= 1")
        if self.d_m % self.n_heads:
            raise ValueError("d_m must be divisible by n_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.d_m // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _attention_params(prefix, d, rng, out):
    for p in ("q", "k", "v", "o"):
        out[f"{prefix}.W{p}"] = _glorot(rng, d, d)
        out[f"{prefix}.b{p}"] = np.zeros(d)


def _norm_params(prefix, d, out):
    out[f"{prefix}.g"] = np.ones(d)
    out[f"{prefix}.b"] = np.zeros(d)


def _ffn_params(prefix, d, d_ff, rng, out):
    out[f"{prefix}.W1"] = _glorot(rng, d, d_ff)
    out[f"{prefix}.b1"] = np.zeros(d_ff)
    out[f"{prefix}.W2"] = _glorot(rng, d_ff, d)
    out[f"{prefix}.b2"] = np.zeros(d)


def init_params(config, seed=0, zero_output=False):
    """Fresh parameter dict for ``config``.

    With ``zero_output`` the affine of the last decoder norm starts at zero,
    so ``h`` is the zero vector and every candidate set is scored uniformly
    until training moves it.
    """
    rng = np.random.default_rng(seed)
    c = config
    raw = {}
    raw["enc_in.W"] = _glorot(rng, c.d_e, c.d_m)
    raw["enc_in.b"] = np.zeros(c.d_m)
    raw["dec_in.W"] = _glorot(rng, c.d_e, c.d_m)
    raw["dec_in.b"] = np.zeros(c.d_m)
    for i in range(c.k_enc):
        _attention_params(f"enc{i}.attn", c.d_m, rng, raw)
        _norm_params(f"enc{i}.ln1", c.d_m, raw)
        _ffn_params(f"enc{i}.ff", c.d_m, c.ff_dim, rng, raw)
        _norm_params(f"enc{i}.ln2", c.d_m, raw)
    for i in range(c.k_dec):
        _attention_params(f"dec{i}.self", c.d_m, rng, raw)
        _norm_params(f"dec{i}.ln1", c.d_m, raw)
        _attention_params(f"dec{i}.cross", c.d_m, rng, raw)
        _norm_params(f"dec{i}.ln2", c.d_m, raw)
        _ffn_params(f"dec{i}.ff", c.d_m, c.ff_dim, rng, raw)
        _norm_params(f"dec{i}.ln3", c.d_m, raw)
    raw["stop"] = rng.normal(0.0, 1.0 / math.sqrt(c.d_e), size=c.d_e)
    if zero_output:
        raw[f"dec{c.k_dec - 1}.ln3.g"][:] = 0.0
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}


def check_params(params, config):
    expected = init_params(config, seed=0)
    missing = set(expected) - set(params)
    if missing:
        raise ValueError(f"missing parameters: {sorted(missing)[:5]}")
    for k, t in expected.items():
        if params[k].shape != t.shape:
            raise ValueError(f"parameter {k} has shape {params[k].shape}, expected {t.shape}")


class Mode:
    """Train/eval switch plus the RNG feeding dropout."""

    __slots__ = ("training", "rng")

    def __init__(self, training=False, rng=None):
        self.training = training
        self.rng = rng if rng is not None else np.random.default_rng(0)


EVAL = Mode(False)


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def _linear(x, params, w, b):
    return x @ params[w] + params[b]


def _norm(x, params, prefix):
    return ad.layer_norm(x, axis=-1) * params[f"{prefix}.g"] + params[f"{prefix}.b"]


def _drop(x, config, mode):
    return ad.dropout(x, config.dropout, mode.rng, training=mode.training)


def _ffn(x, params, prefix, config, mode):
    hidden = ad.relu(_linear(x, params, f"{prefix}.W1", f"{prefix}.b1"))
    hidden = _drop(hidden, config, mode)
    return _linear(hidden, params, f"{prefix}.W2", f"{prefix}.b2")


def transition(x, params, config, layer="encoder", mode=EVAL):
    """ReLU(x W + b) with the encoder or decoder transition weights."""
    tag = {"encoder": "enc_in", "decoder": "dec_in"}[layer]
    x = ad.as_tensor(x)
    if x.shape[-1] != config.d_e:
        raise ValueError(f"transition expects last dimension {config.d_e}, got {x.shape[-1]}")
    if x.ndim == 1:
        return transition(x.reshape(1, -1), params, config, layer, mode).reshape(config.d_m)
    out = ad.relu(_linear(x, params, f"{tag}.W", f"{tag}.b"))
    return _drop(out, config, mode)


def _split_heads(x, n_heads):
    # (..., L, d) -> (..., H, L, d/H)
    *lead, length, d = x.shape
    x = x.reshape(*lead, length, n_heads, d // n_heads)
    nd = len(lead)
    axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    return x.transpose(axes)


def _merge_heads(x):
    # (..., H, L, dk) -> (..., L, H*dk)
    *lead, h, length, dk = x.shape
    nd = len(lead)
    axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    return x.transpose(axes).reshape(*lead, length, h * dk)


def attention(query, keys, values, params, prefix, config, mode=EVAL, bias=None):
    """Multi-head scaled dot-product attention.

    ``query`` is ``(..., Lq, d)``, ``keys``/``values`` ``(..., Lk, d)``.
    ``bias`` is an additive array broadcastable to ``(..., H, Lq, Lk)``.
    """
    H = config.n_heads
    q = _split_heads(_linear(query, params, f"{prefix}.Wq", f"{prefix}.bq"), H)
    k = _split_heads(_linear(keys, params, f"{prefix}.Wk", f"{prefix}.bk"), H)
    v = _split_heads(_linear(values, params, f"{prefix}.Wv", f"{prefix}.bv"), H)
    nd = k.ndim
    kt = k.transpose(tuple(range(nd - 2)) + (nd - 1, nd - 2))
    scores = ad.scale(q @ kt, 1.0 / math.sqrt(config.head_dim))
    if bias is not None:
        scores = scores + bias
    weights = ad.softmax(scores, axis=-1)
    out = _merge_heads(weights @ v)
    out = _linear(out, params, f"{prefix}.Wo", f"{prefix}.bo")
    return _drop(out, config, mode)


# Graphs up to this many nodes use a dense (n x n) masked score matrix, which
# runs on BLAS; larger graphs gather padded neighbour lists instead. Both give
# identical results because masked weights underflow to exactly zero.
DENSE_ATTENTION_LIMIT = 1024


def _neighborhood_attention_all(x, table, mask, params, prefix, config, mode):
    """Neighbourhood attention for every node at once.

    ``table``/``mask`` come from :meth:`ItemRelationGraph.neighbor_table`.
    Keys and values of node ``i`` are the rows of its neighbourhood; padding
    slots get a -1e9 bias so their weight underflows to exactly zero.
    """
    n, width = table.shape
    H, dk, d = config.n_heads, config.head_dim, config.d_m
    q = _linear(x, params, f"{prefix}.Wq", f"{prefix}.bq")            # n, d
    k = _linear(x, params, f"{prefix}.Wk", f"{prefix}.bk")
    v = _linear(x, params, f"{prefix}.Wv", f"{prefix}.bv")
    q = q.reshape(n, H, 1, dk)
    kg = ad.index_select(k, table, axis=0).reshape(n, width, H, dk).transpose(0, 2, 3, 1)
    vg = ad.index_select(v, table, axis=0).reshape(n, width, H, dk).transpose(0, 2, 1, 3)
    scores = ad.scale(q @ kg, 1.0 / math.sqrt(dk))                    # n, H, 1, width
    bias = np.where(mask, 0.0, _MASKED)[:, None, None, :]
    weights = ad.softmax(scores + bias, axis=-1)
    out = (weights @ vg).reshape(n, d)
    out = _linear(out, params, f"{prefix}.Wo", f"{prefix}.bo")
    return _drop(out, config, mode)


def neighborhood_attention(node, irg, node_reprs, params, config, module=0, mode=EVAL):
    """Attention output (length ``d_m``) for one node of ``irg``.

    ``node_reprs`` holds one row per node of ``irg`` in ``irg.nodes`` order.
    """
    if node not in irg:
        raise KeyError(f"node {node!r} not in graph")
    table, mask = irg.neighbor_table()
    i = irg.position[node]
    x = ad.as_tensor(node_reprs)
    # only the query row changes; neighbours are gathered from the full matrix
    row_table, row_mask = table[i : i + 1], mask[i : i + 1]
    H, dk, d = config.n_heads, config.head_dim, config.d_m
    prefix = f"enc{module}.attn"
    q = _linear(ad.index_select(x, [i]), params, f"{prefix}.Wq", f"{prefix}.bq").reshape(1, H, 1, dk)
    k = _linear(x, params, f"{prefix}.Wk", f"{prefix}.bk")
    v = _linear(x, params, f"{prefix}.Wv", f"{prefix}.bv")
    width = row_table.shape[1]
    kg = ad.index_select(k, row_table, axis=0).reshape(1, width, H, dk).transpose(0, 2, 3, 1)
    vg = ad.index_select(v, row_table, axis=0).reshape(1, width, H, dk).transpose(0, 2, 1, 3)
    scores = ad.scale(q @ kg, 1.0 / math.sqrt(dk))
    bias = np.where(row_mask, 0.0, _MASKED)[:, None, None, :]
    weights = ad.softmax(scores + bias, axis=-1)
    out = _linear((weights @ vg).reshape(1, d), params, f"{prefix}.Wo", f"{prefix}.bo")
    return _drop(out, config, mode).reshape(d)


@dataclass
class EncoderOutput:
    node_ids: tuple
    E: Tensor

    def row(self, node):
        return self.E.data[self.node_ids.index(node)]


def node_embedding_matrix(irg, embeddings):
    """Rows of ``embeddings`` (a Catalog or an id->vector mapping) in
    ``irg.nodes`` order."""
    if hasattr(embeddings, "rows"):
        missing = [g for g in irg.nodes if g not in embeddings.index_of]
        if missing:
            raise KeyError(f"no embedding for garment {missing[0]!r}")
        return embeddings.embeddings[embeddings.rows(irg.nodes)]
    try:
        return np.array([embeddings[g] for g in irg.nodes], dtype=np.float64)
    except KeyError as exc:
        raise KeyError(f"no embedding for garment {exc.args[0]!r}") from None


def encode_graph(irg, embeddings, params, config, mode=EVAL, node_inputs=None):
    """Contextualised node representations after ``k_enc`` encoder modules.

    ``node_inputs`` overrides the embedding lookup with an explicit
    ``(|V|, d_e)`` array or Tensor (used by gradient checks).
    """
    if node_inputs is None:
        node_inputs = node_embedding_matrix(irg, embeddings)
    x = transition(node_inputs, params, config, "encoder", mode)
    if len(irg) <= DENSE_ATTENTION_LIMIT:
        adj = irg.adjacency_matrix(self_loops=True).toarray() > 0
        bias = np.where(adj, 0.0, _MASKED)[None, :, :]

        def attend(h, prefix):
            return attention(h, h, h, params, prefix, config, mode, bias)
    else:
        table, mask = irg.neighbor_table()

        def attend(h, prefix):
            return _neighborhood_attention_all(h, table, mask, params, prefix, config, mode)

    for i in range(config.k_enc):
        a = attend(x, f"enc{i}.attn")
        x = _norm(x + a, params, f"enc{i}.ln1")
        x = _norm(x + _ffn(x, params, f"enc{i}.ff", config, mode), params, f"enc{i}.ln2")
    return EncoderOutput(tuple(irg.nodes), x)


def _causal_bias(length):
    return np.triu(np.full((length, length), _MASKED), k=1)


def decode_sequence(prefix_inputs, encoder_out, params, config, mode=EVAL):
    """Decoder outputs for every prefix position, ``(L, d_m)``.

    Row ``t`` only depends on inputs ``0..t`` (causal self-attention), so a
    single pass yields the teacher-forced output for every step.
    """
    x = transition(prefix_inputs, params, config, "decoder", mode)
    length = x.shape[0]
    causal = _causal_bias(length)
    memory = encoder_out.E
    for i in range(config.k_dec):
        a = attention(x, x, x, params, f"dec{i}.self", config, mode, bias=causal)
        x = _norm(x + a, params, f"dec{i}.ln1")
        if memory.shape[0]:
            c = attention(x, memory, memory, params, f"dec{i}.cross", config, mode)
            x = x + c
        x = _norm(x, params, f"dec{i}.ln2")
        x = _norm(x + _ffn(x, params, f"dec{i}.ff", config, mode), params, f"dec{i}.ln3")
    return x


def garment_inputs(ids, embeddings, params):
    """Stack input embeddings for ``ids``; :data:`STOP` maps to the learned
    stop-token vector."""
    ids = list(ids)
    if STOP not in ids:
        return Tensor(embeddings.embeddings[embeddings.rows(ids)])
    real = [g for g in ids if g != STOP]
    table = ad.concat(
        [Tensor(embeddings.embeddings[embeddings.rows(real)]), params["stop"].reshape(1, -1)], axis=0
    )
    idx, j = [], 0
    for g in ids:
        if g == STOP:
            idx.append(len(real))
        else:
            idx.append(j)
            j += 1
    return ad.index_select(table, idx, axis=0)


def decode_step(prefix, encoder_out, embeddings, params, config, mode=EVAL):
    """``h`` for the next step: decoder output at the last prefix position."""
    if not prefix:
        raise ValueError("decode_step needs a non-empty prefix")
    if STOP in prefix:
        raise ValueError("the stop token never appears in a prefix")
    inputs = garment_inputs(prefix, embeddings, params)
    out = decode_sequence(inputs, encoder_out, params, config, mode)
    return ad.index_select(out, [len(prefix) - 1], axis=0).reshape(config.d_m)


def candidate_logits(h, candidates, embeddings, params, config, mode=EVAL):
    """``h . tau(g)`` for each candidate, each fed through the decoder
    transition independently."""
    if not len(candidates):
        raise ValueError("empty candidate set")
    tau = transition(garment_inputs(candidates, embeddings, params), params, config, "decoder", mode)
    return (tau @ ad.as_tensor(h).reshape(-1, 1)).reshape(len(candidates))


def score_candidates(h, candidates, embeddings, params, config, mode=EVAL):
    """Softmax over candidate logits (max-shifted)."""
    candidates = list(candidates)
    if len(set(candidates)) != len(candidates):
        raise ValueError("candidates must be distinct")
    return ad.softmax(candidate_logits(h, candidates, embeddings, params, config, mode), axis=-1)


def teacher_forced_logits(irg, sequence, steps, embeddings, params, config, mode=EVAL, encoder_out=None):
    """Logits for several decoding steps of one sequence in a single pass.

    ``steps`` is a list of ``(position, candidates)``: the step predicting
    what follows ``sequence[:position + 1]`` scores ``candidates``. Returns a
    ``(len(steps), width)`` Tensor padded with -1e9 where a candidate list is
    shorter than ``width``.
    """
    if encoder_out is None:
        encoder_out = encode_graph(irg, embeddings, params, config, mode)
    inputs = garment_inputs(sequence, embeddings, params)
    out = decode_sequence(inputs, encoder_out, params, config, mode)
    positions = [p for p, _ in steps]
    h = ad.index_select(out, positions, axis=0)                          # S, d_m
    width = max(len(c) for _, c in steps)
    flat, bias = [], np.zeros((len(steps), width))
    for s, (_, cands) in enumerate(steps):
        if not len(cands):
            raise ValueError("empty candidate set")
        flat.extend(cands)
        flat.extend([cands[0]] * (width - len(cands)))
        bias[s, len(cands):] = _MASKED
    tau = transition(garment_inputs(flat, embeddings, params), params, config, "decoder", mode)
    tau = tau.reshape(len(steps), width, config.d_m)
    logits = (tau @ h.reshape(len(steps), config.d_m, 1)).reshape(len(steps), width)
    return logits + bias


def co_outfit_garments(garment, catalog):
    """Every garment sharing at least one outfit with ``garment`` (itself
    included)."""
    out = {garment}
    for oid in catalog.outfits_of.get(garment, ()):
        out.update(catalog.outfits[oid].members)
    return out


def filter_pool(candidate_pool, already_chosen, catalog):
    blocked = set()
    for g in already_chosen:
        blocked |= co_outfit_garments(g, catalog)
    return [g for g in candidate_pool if g not in blocked]


def next_garment(h, candidate_pool, already_chosen, catalog, params, config, embeddings=None):
    """Arg-max candidate after dropping garments that share an outfit with
    anything already chosen. Returns ``None`` when nothing survives."""
    embeddings = embeddings if embeddings is not None else catalog
    pool = filter_pool(candidate_pool, already_chosen, catalog)
    if not pool:
        return None
    with ad.no_grad():
        probs = score_candidates(h, pool, embeddings, params, config).data
    return pool[int(np.argmax(probs))]


def generate_outfit(seed, irg, candidate_pool, catalog, params, config, embeddings=None, trace=None):
    """Grow ``seed`` one garment at a time until the stop token wins.

    ``catalog`` supplies outfit membership for the co-occurrence filter;
    ``embeddings`` (defaults to ``catalog``) supplies garment vectors. When
    ``trace`` is a list, one dict per step is appended with the candidate
    ids and their probabilities.
    """
    seed = list(seed)
    embeddings = embeddings if embeddings is not None else catalog
    if not seed:
        raise GenerationError("empty seed")
    for i, a in enumerate(seed):
        for b in seed[i + 1 :]:
            if a == b or irg.has_edge(a, b):
                raise GenerationError(f"seed garments {a!r} and {b!r} are linked")
    excluded = set(seed)
    base_pool = [g for g in candidate_pool if g != STOP and g not in excluded]

    generated = []
    with ad.no_grad():
        enc = encode_graph(irg, embeddings, params, config)
        while len(generated) < config.max_generation_len:
            h = decode_step(seed + generated, enc, embeddings, params, config)
            pool = filter_pool([g for g in base_pool if g not in generated], generated, catalog)
            if not pool:
                log.info("candidate pool exhausted after %d garments", len(generated))
                if trace is not None:
                    trace.append({"step": len(generated) + 1, "candidates": [], "probs": [], "choice": None})
                break
            cands = pool + [STOP]
            probs = score_candidates(h, cands, embeddings, params, config).data
            choice = cands[int(np.argmax(probs))]
            if trace is not None:
                trace.append({
                    "step": len(generated) + 1,
                    "candidates": cands,
                    "probs": probs.tolist(),
                    "choice": choice,
                })
            if choice == STOP:
                break
            generated.append(choice)
    return generated
