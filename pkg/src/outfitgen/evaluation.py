"""Seeded Item Prediction, Fill-In-The-Blank and Compatibility Prediction."""

from __future__ import annotations

import json
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .catalog import Outfit
from .graph import remove_outfit_edges
from .model import STOP, EVAL, encode_graph, teacher_forced_logits
from .partition import PartitionLocator
from .training import CandidateShortfallWarning, PartitionGraphs, build_sample


class EvalError(ValueError):
    pass


# --------------------------------------------------------------------------
# scorers
# --------------------------------------------------------------------------

class TGNNScorer:
    """Softmax over each step's candidates under trained parameters."""

    def __init__(self, params, config, embeddings):
        self.params = params
        self.config = config
        self.embeddings = embeddings

    def __call__(self, irg, sequence, steps):
        with ad.no_grad():
            enc = encode_graph(irg, self.embeddings, self.params, self.config, EVAL)
            logits = teacher_forced_logits(
                irg, list(sequence), steps, self.embeddings, self.params, self.config, EVAL, enc
            )
            probs = ad.softmax(logits, axis=-1).data
        return [probs[s, : len(c)].copy() for s, (_, c) in enumerate(steps)]


class UniformScorer:
    """Equal probability for every candidate; its argmax is always the first
    candidate, so accuracy measures where the ground truth happened to land."""

    def __call__(self, irg, sequence, steps):
        return [np.full(len(c), 1.0 / len(c)) for _, c in steps]


class RandomScorer:
    """Softmax of i.i.d. Gaussian logits, seeded."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def __call__(self, irg, sequence, steps):
        out = []
        for _, c in steps:
            z = self.rng.standard_normal(len(c))
            e = np.exp(z - z.max())
            out.append(e / e.sum())
        return out


class OracleScorer:
    """Test double that puts all mass on the true continuation of the
    sequence it is asked about."""

    def __call__(self, irg, sequence, steps):
        seq = list(sequence) + [STOP]
        out = []
        for pos, c in steps:
            p = np.zeros(len(c))
            if seq[pos + 1] in c:
                p[list(c).index(seq[pos + 1])] = 1.0
            else:
                p[:] = 1.0 / len(c)
            out.append(p)
        return out


class LabelScorer:
    """Uses planted labels: a candidate is plausible when it shares the
    prefix's style and brings a category the prefix lacks.

    ``stop_weight`` is the unnormalised mass of the stop token relative to a
    plausible garment; implausible garments get ``eps``. This estimates how
    well any scorer can do on a synthetic catalog.
    """

    def __init__(self, oracle, stop_weight=0.5, eps=1e-6):
        self.oracle = oracle
        self.stop_weight = stop_weight
        self.eps = eps

    def __call__(self, irg, sequence, steps):
        out = []
        for pos, c in steps:
            prefix = sequence[: pos + 1]
            styles = {(self.oracle.style(g), self.oracle.look(g)) for g in prefix}
            cats = {self.oracle.category(g) for g in prefix}
            w = np.empty(len(c))
            for i, g in enumerate(c):
                if g == STOP:
                    w[i] = self.stop_weight
                elif (self.oracle.style(g), self.oracle.look(g)) in styles and self.oracle.category(g) not in cats:
                    w[i] = 1.0
                else:
                    w[i] = self.eps
            out.append(w / w.sum())
        return out


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass
class EvalEpisode:
    task: str
    outfit_id: str
    partition: int
    candidate_sets: list
    targets: list
    probabilities: list
    correct: list
    score: float | None = None
    label: int | None = None

    def decisions(self):
        return [int(np.argmax(p)) for p in self.probabilities]

    def to_dict(self):
        return {
            "task": self.task,
            "outfit_id": self.outfit_id,
            "partition": self.partition,
            "candidate_sets": [list(c) for c in self.candidate_sets],
            "targets": list(self.targets),
            "probabilities": [[float(x) for x in p] for p in self.probabilities],
            "correct": [bool(x) for x in self.correct],
            "score": self.score,
            "label": self.label,
        }


@dataclass
class MetricReport:
    task: str
    episode_count: int
    seed: int
    accuracy: float | None = None
    auroc: float | None = None
    step_count: int = 0
    outfit_accuracy: float | None = None
    per_category: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)

    @property
    def value(self):
        return self.auroc if self.task == "cp" else self.accuracy

    def to_dict(self, include_episodes=False):
        d = asdict(self)
        d.pop("episodes")
        if include_episodes:
            d["episodes"] = [e.to_dict() for e in self.episodes]
        return d


def write_report(path, reports, include_episodes=False, extra=None):
    """JSON with sorted keys, so identical inputs give identical bytes."""
    reports = reports if isinstance(reports, (list, tuple)) else [reports]
    payload = {"reports": [r.to_dict(include_episodes) for r in reports]}
    if extra:
        payload.update(extra)
    text = json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return text


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def auroc(positive_scores, negative_scores):
    """Probability that a random positive outscores a random negative,
    ties counted as one half (the Mann-Whitney statistic)."""
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise EvalError("auroc needs at least one positive and one negative score")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise EvalError("scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    u = ranks[: pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _argmax(p):
    return int(np.argmax(p))


# --------------------------------------------------------------------------
# shared setup
# --------------------------------------------------------------------------

class _Context:
    def __init__(self, partitions, catalog):
        self.catalog = catalog
        self.locator = PartitionLocator(partitions, catalog)
        self.graphs = PartitionGraphs(partitions, catalog)

    def graph_for(self, query, members):
        p = self.locator.locate(list(query))
        g = self.graphs[p]
        present = [m for m in members if m in g]
        if len(present) > 1:
            g = remove_outfit_edges(g, present)
        return p, g


def _episode_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def _check_outfits(outfits, minimum=2):
    outfits = list(outfits.values()) if isinstance(outfits, dict) else list(outfits)
    if not outfits:
        raise EvalError("empty test set")
    for o in outfits:
        if len(o.members) < minimum:
            raise EvalError(f"outfit {o.id!r} has fewer than {minimum} garments")
    return outfits


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------

def eval_sip(test_outfits, partitions, catalog, scorer, n_c=3, n_r=5, seed=0, seed_len=1,
             include_stop=True, candidate_sets=None, keep_episodes=True):
    """Seeded Item Prediction with teacher forcing.

    Garments are taken in stored order. The first ``seed_len`` form the
    seed; every later garment, and the stop token when ``include_stop``, is
    one step whose candidates are built as in training. ``candidate_sets``
    optionally maps an outfit id to explicit per-step candidate lists.
    ``catalog`` holds the training outfits (and the embeddings of every
    garment referenced).
    """
    outfits = _check_outfits(test_outfits)
    ctx = _Context(partitions, catalog)
    episodes = []
    per_cat = defaultdict(lambda: [0, 0])
    hits = steps_total = outfit_hits = 0
    for idx, o in enumerate(outfits):
        seq = list(o.members)
        k = seed_len if seed_len > 0 else len(seq) + seed_len
        if not 1 <= k < len(seq) + (1 if include_stop else 0):
            raise EvalError(f"outfit {o.id!r}: seed length {k} leaves nothing to predict")
        rng = _episode_rng(seed, idx)
        p, graph = ctx.graph_for(seq[:k], seq)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CandidateShortfallWarning)
            sample = build_sample(o, graph, catalog, n_c, n_r, rng, permute=False, partition=p, order=seq)
        # the sample's graph already has the outfit's edges removed
        positions = list(range(k - 1, len(seq) - (0 if include_stop else 1)))
        truths = [sample.ground_truths[t] for t in positions]
        if candidate_sets is not None and o.id in candidate_sets:
            cands = [list(c) for c in candidate_sets[o.id]]
            if len(cands) != len(positions):
                raise EvalError(f"outfit {o.id!r}: expected {len(positions)} candidate sets")
            for c, t in zip(cands, truths):
                if t not in c:
                    raise EvalError(f"outfit {o.id!r}: candidate set lacks the ground truth")
        else:
            cands = [sample.candidate_sets[t] for t in positions]
        steps = list(zip(positions, cands))
        probs = scorer(sample.irg_partition, seq, steps)
        targets = [c.index(t) for c, t in zip(cands, truths)]
        correct = [_argmax(pr) == t for pr, t in zip(probs, targets)]
        for t, ok in zip(truths, correct):
            key = STOP if t == STOP else catalog.category(t)
            per_cat[key][0] += int(ok)
            per_cat[key][1] += 1
        hits += sum(correct)
        steps_total += len(correct)
        outfit_hits += all(correct)
        if keep_episodes:
            episodes.append(EvalEpisode("sip", o.id, p, cands, targets, probs, correct))
    return MetricReport(
        task="sip",
        episode_count=len(outfits),
        seed=seed,
        accuracy=hits / steps_total,
        step_count=steps_total,
        outfit_accuracy=outfit_hits / len(outfits),
        per_category={k: v[0] / v[1] for k, v in sorted(per_cat.items())},
        config={"n_c": n_c, "n_r": n_r, "seed_len": seed_len, "include_stop": include_stop},
        episodes=episodes,
    )


@dataclass(frozen=True)
class FitbQuery:
    outfit_id: str
    incomplete: tuple
    answers: tuple
    correct: int

    def __post_init__(self):
        if len(self.answers) != 4:
            raise EvalError(f"query {self.outfit_id!r}: FITB needs exactly 4 answers")
        if not 0 <= self.correct < 4:
            raise EvalError(f"query {self.outfit_id!r}: correct index out of range")
        if len(set(self.answers)) != 4 or STOP in self.answers:
            raise EvalError(f"query {self.outfit_id!r}: answers must be 4 distinct garments")
        if not self.incomplete:
            raise EvalError(f"query {self.outfit_id!r}: empty incomplete outfit")
        if set(self.incomplete) & set(self.answers):
            raise EvalError(f"query {self.outfit_id!r}: an answer is already in the outfit")

    @property
    def answer(self):
        return self.answers[self.correct]


def make_fitb_queries(test_outfits, partitions, catalog, seed=0):
    """Blank the last stored garment; three wrong answers come from the
    located partition, of the blank's category when enough exist."""
    outfits = _check_outfits(test_outfits)
    ctx = _Context(partitions, catalog)
    queries = []
    for idx, o in enumerate(outfits):
        rng = _episode_rng(seed, idx)
        seq = list(o.members)
        _, graph = ctx.graph_for(seq[:-1], seq)
        pool = [g for g in graph.nodes if g not in set(seq)]
        if len(pool) < 3:
            pool = [g for g in catalog.garment_ids if g not in set(seq)]
        cat = catalog.category(seq[-1])
        same = [g for g in pool if catalog.category(g) == cat]
        picks = [same[i] for i in rng.choice(len(same), size=min(3, len(same)), replace=False)]
        if len(picks) < 3:
            rest = [g for g in pool if g not in set(picks)]
            picks += [rest[i] for i in rng.choice(len(rest), size=3 - len(picks), replace=False)]
        answers = picks + [seq[-1]]
        order = rng.permutation(4)
        answers = [answers[i] for i in order]
        queries.append(FitbQuery(o.id, tuple(seq[:-1]), tuple(answers), answers.index(seq[-1])))
    return queries


def eval_fitb(queries, partitions, catalog, scorer, seed=0, keep_episodes=True):
    """One decoding step from the incomplete outfit over its 4 answers."""
    if not queries:
        raise EvalError("empty test set")
    ctx = _Context(partitions, catalog)
    episodes, hits = [], 0
    per_cat = defaultdict(lambda: [0, 0])
    for q in queries:
        if not isinstance(q, FitbQuery):
            q = FitbQuery(*q)
        seq = list(q.incomplete) + [q.answer]
        p, graph = ctx.graph_for(q.incomplete, seq)
        steps = [(len(q.incomplete) - 1, list(q.answers))]
        probs = scorer(graph, seq, steps)
        ok = _argmax(probs[0]) == q.correct
        hits += ok
        cat = catalog.category(q.answer)
        per_cat[cat][0] += int(ok)
        per_cat[cat][1] += 1
        if keep_episodes:
            episodes.append(EvalEpisode("fitb", q.outfit_id, p, [list(q.answers)], [q.correct], probs, [ok]))
    return MetricReport(
        task="fitb",
        episode_count=len(queries),
        seed=seed,
        accuracy=hits / len(queries),
        step_count=len(queries),
        per_category={k: v[0] / v[1] for k, v in sorted(per_cat.items())},
        episodes=episodes,
    )


def make_cp_negatives(positives, catalog, seed=0, pool=None):
    """One random outfit per positive, of the same size, one garment per
    distinct category where possible."""
    positives = _check_outfits(positives)
    rng = np.random.default_rng(seed)
    pool = list(pool) if pool is not None else sorted({g for o in positives for g in o.members})
    by_cat = defaultdict(list)
    for g in pool:
        by_cat[catalog.category(g)].append(g)
    cats = sorted(by_cat)
    negatives = []
    for o in positives:
        n = len(o.members)
        if n <= len(cats):
            chosen = [cats[i] for i in rng.choice(len(cats), size=n, replace=False)]
            members = [by_cat[c][int(rng.integers(len(by_cat[c])))] for c in chosen]
        else:
            members = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
        negatives.append(Outfit(f"neg-{o.id}", tuple(members)))
    return negatives


def score_outfit(outfit, ctx, scorer, rng, n_neg=3):
    """Mean probability of the true next garment over a seeded permutation
    decoded from a one-garment seed."""
    members = list(outfit.members)
    if len(members) < 2:
        raise EvalError(f"outfit {outfit.id!r} is too short to score")
    seq = [members[i] for i in rng.permutation(len(members))]
    p, graph = ctx.graph_for(members, members)
    pool = [g for g in graph.nodes if g not in set(members)]
    if len(pool) < n_neg:
        pool = [g for g in ctx.catalog.garment_ids if g not in set(members)]
    steps, targets = [], []
    for t in range(len(seq) - 1):
        others = [pool[i] for i in rng.choice(len(pool), size=n_neg, replace=False)]
        cands = others + [seq[t + 1]]
        order = rng.permutation(len(cands))
        cands = [cands[i] for i in order]
        steps.append((t, cands))
        targets.append(cands.index(seq[t + 1]))
    probs = scorer(graph, seq, steps)
    score = float(np.mean([pr[t] for pr, t in zip(probs, targets)]))
    return p, [c for _, c in steps], targets, probs, score


def eval_cp(positives, negatives, partitions, catalog, scorer, seed=0, n_neg=3, keep_episodes=True):
    """AUROC separating real outfits from random garment combinations."""
    positives = _check_outfits(positives)
    negatives = _check_outfits(negatives)
    ctx = _Context(partitions, catalog)
    episodes, scores = [], {1: [], 0: []}
    for label, group in ((1, positives), (0, negatives)):
        for idx, o in enumerate(group):
            rng = _episode_rng(seed, 2 * idx + (1 - label))
            p, cands, targets, probs, score = score_outfit(o, ctx, scorer, rng, n_neg)
            scores[label].append(score)
            if keep_episodes:
                correct = [_argmax(pr) == t for pr, t in zip(probs, targets)]
                episodes.append(EvalEpisode("cp", o.id, p, cands, targets, probs, correct, score, label))
    return MetricReport(
        task="cp",
        episode_count=len(positives) + len(negatives),
        seed=seed,
        auroc=auroc(scores[1], scores[0]),
        step_count=sum(len(e.targets) for e in episodes),
        config={"n_neg": n_neg},
        episodes=episodes,
    )
