"""Training triplets, the teacher-forced sequence loss and the fitting loop."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .graph import induce_irg, remove_outfit_edges
from .model import STOP, Mode, init_params, teacher_forced_logits
from .optim import Adam, EarlyStopping, NonFiniteGradientError, PlateauScheduler
from .partition import PartitionLocator

log = logging.getLogger(__name__)


class SampleError(ValueError):
    pass


class CandidateShortfallWarning(UserWarning):
    pass


@dataclass
class TrainerConfig:
    n_c: int = 3
    n_r: int = 5
    lr: float = 5e-4
    weight_decay: float = 5e-5
    plateau_factor: float = 0.1
    lr_patience: int = 4
    patience: int = 10
    max_epochs: int = 1000
    dropout: float = 0.35
    seed: int = 0
    accumulate: int = 1
    time_budget: float | None = None
    improvement_threshold: float = 1e-4

    def __post_init__(self):
        if self.n_c < 0 or self.n_r < 0 or self.n_c + self.n_r < 1:
            raise ValueError("need n_c, n_r >= 0 and n_c + n_r >= 1")
        if self.accumulate < 1:
            raise ValueError("accumulate must be >= 1")

    @property
    def candidate_set_size(self):
        return self.n_c + self.n_r + 1

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class TrainingSample:
    outfit_id: str
    outfit_permuted: list
    irg_partition: object
    candidate_sets: list
    ground_truths: list
    target_index: list
    partition: int = -1

    def steps(self):
        """``(position, candidates)`` pairs in teacher-forced order."""
        return list(enumerate(self.candidate_sets))


# --------------------------------------------------------------------------
# candidate sets
# --------------------------------------------------------------------------

def draw_candidates(target, pool, catalog, n_c, n_r, rng, exclude=()):
    """One shuffled candidate list holding ``target``, ``n_c`` negatives of
    its category and ``n_r`` distractors, all drawn from ``pool``.

    Returns ``(candidates, target_index, shortfall)`` where ``shortfall``
    counts same-category slots that had to be filled with distractors.
    """
    exclude = set(exclude) | {target}
    avail = [g for g in pool if g not in exclude]
    chosen = []
    shortfall = 0
    if target != STOP and n_c:
        cat = catalog.category(target)
        same = [g for g in avail if catalog.category(g) == cat]
        take = min(n_c, len(same))
        shortfall = n_c - take
        if take:
            chosen.extend(same[i] for i in rng.choice(len(same), size=take, replace=False))
    else:
        shortfall = n_c
    picked = set(chosen)
    rest = [g for g in avail if g not in picked]
    take = min(n_r + shortfall, len(rest))
    if take:
        chosen.extend(rest[i] for i in rng.choice(len(rest), size=take, replace=False))
    cands = chosen + [target]
    order = rng.permutation(len(cands))
    cands = [cands[i] for i in order]
    return cands, cands.index(target), shortfall if target != STOP else 0


def build_sample(outfit, irg, catalog, n_c, n_r, rng, permute=True, partition=-1, order=None):
    """Triplet for one outfit on an already chosen partition graph.

    Edges among the outfit's garments that are present in ``irg`` are
    removed; candidates come from the graph's nodes outside the outfit.
    """
    members = list(outfit.members)
    if len(members) < 2:
        raise SampleError(f"outfit {outfit.id!r} is shorter than 2")
    if order is not None:
        seq = list(order)
    elif permute:
        seq = [members[i] for i in rng.permutation(len(members))]
    else:
        seq = members
    present = [g for g in members if g in irg]
    graph = remove_outfit_edges(irg, present) if len(present) > 1 else irg
    pool = [g for g in graph.nodes if g not in set(members)]

    truths = seq[1:] + [STOP]
    cand_sets, targets = [], []
    short = 0
    for t in truths:
        cands, idx, s = draw_candidates(t, pool, catalog, n_c, n_r, rng, exclude=members)
        cand_sets.append(cands)
        targets.append(idx)
        short += s
    if short:
        warnings.warn(
            f"outfit {outfit.id!r}: {short} same-category negatives replaced by distractors",
            CandidateShortfallWarning,
            stacklevel=2,
        )
    return TrainingSample(outfit.id, seq, graph, cand_sets, truths, targets, partition)


class PartitionGraphs:
    """Lazily induced IRG per partition of the training ORG."""

    def __init__(self, partitions, catalog):
        self.partitions = partitions
        self.catalog = catalog
        self._cache = {}

    def __getitem__(self, p):
        if p not in self._cache:
            self._cache[p] = induce_irg(self.partitions.partitions[p], self.catalog)
        return self._cache[p]


def build_training_sample(outfit, partitions, catalog, config, rng, graphs=None):
    """Fresh random permutation, the outfit's own partition graph with its
    edges removed, and one candidate set per step."""
    if outfit.id not in partitions.assignment:
        raise SampleError(f"outfit {outfit.id!r} is not in any partition")
    p = partitions.assignment[outfit.id]
    graphs = graphs or PartitionGraphs(partitions, catalog)
    return build_sample(outfit, graphs[p], catalog, config.n_c, config.n_r, rng, permute=True, partition=p)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def sequence_loss(sample, params, config, embeddings, mode=None):
    """Mean negative log-probability of each step's ground truth.

    Prefixes are the ground-truth garments ``sample.outfit_permuted[:t]``;
    model predictions never feed back.
    """
    mode = mode or Mode(False)
    logits = teacher_forced_logits(
        sample.irg_partition, sample.outfit_permuted, sample.steps(), embeddings, params, config, mode
    )
    n, width = logits.shape
    logp = ad.log_softmax(logits, axis=-1).reshape(n * width)
    picked = ad.index_select(logp, [s * width + t for s, t in enumerate(sample.target_index)])
    return ad.scale(ad.sum_(picked), -1.0 / len(sample.outfit_permuted))


def step_probabilities(sample, params, config, embeddings):
    with ad.no_grad():
        logits = teacher_forced_logits(
            sample.irg_partition, sample.outfit_permuted, sample.steps(), embeddings, params, config
        )
        probs = ad.softmax(logits, axis=-1).data
    return [probs[s, : len(c)] for s, c in enumerate(sample.candidate_sets)]


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------

@dataclass
class FitResult:
    params: dict
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped: str = ""


def snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def restore(params, snap):
    for k, v in snap.items():
        params[k].data[...] = v


def validation_samples(catalog_val, partitions, catalog_train, trainer_config, seed=0):
    """Fixed (non-augmented) samples for held-out outfits.

    Each outfit's partition is located by nearest training garments.
    """
    rng = np.random.default_rng(seed)
    locator = PartitionLocator(partitions, catalog_train)
    graphs = PartitionGraphs(partitions, catalog_train)
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CandidateShortfallWarning)
        for o in catalog_val.outfits.values():
            p = locator.locate(list(o.members))
            out.append(build_sample(
                o, graphs[p], catalog_train, trainer_config.n_c, trainer_config.n_r, rng,
                permute=False, partition=p,
            ))
    return out


def mean_loss(samples, params, config, embeddings):
    if not samples:
        return math.nan
    with ad.no_grad():
        return float(np.mean([sequence_loss(s, params, config, embeddings).item() for s in samples]))


def fit(catalog_train, catalog_val, partitions, trainer_config=None, model_config=None,
        params=None, callback=None):
    """Optimise the model on the training outfits.

    Validation loss (dropout off, fixed samples) drives the plateau LR rule
    and early stopping; the best-validation parameters are restored at the
    end. Returns a :class:`FitResult`.
    """
    from .model import TGNNConfig

    tc = trainer_config or TrainerConfig()
    mc = model_config or TGNNConfig()
    if mc.dropout != tc.dropout:
        mc = _with_dropout(mc, tc.dropout)
    overlap = set(catalog_train.outfits) & set(catalog_val.outfits)
    if overlap:
        raise ValueError(f"train and validation outfits overlap ({len(overlap)} shared)")
    if catalog_train.dim != mc.d_e:
        raise ValueError(f"catalog embeddings have dimension {catalog_train.dim}, model expects {mc.d_e}")

    rng = np.random.default_rng(tc.seed)
    if params is None:
        params = init_params(mc, seed=tc.seed)
    opt = Adam(params, lr=tc.lr, weight_decay=tc.weight_decay)
    sched = PlateauScheduler(opt, factor=tc.plateau_factor, patience=tc.lr_patience,
                             threshold=tc.improvement_threshold)
    stopper = EarlyStopping(patience=tc.patience, threshold=tc.improvement_threshold)
    graphs = PartitionGraphs(partitions, catalog_train)
    val = validation_samples(catalog_val, partitions, catalog_train, tc, seed=tc.seed + 1)
    train_ids = [o for o in catalog_train.outfits if o in partitions.assignment]
    mode = Mode(True, rng)

    result = FitResult(params)
    best = snapshot(params)
    start = time.perf_counter()
    for epoch in range(1, tc.max_epochs + 1):
        losses = []
        order = rng.permutation(len(train_ids))
        opt.zero_grad()
        pending = 0
        aborted = False
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", CandidateShortfallWarning)
            for i in order:
                outfit = catalog_train.outfits[train_ids[i]]
                sample = build_training_sample(outfit, partitions, catalog_train, tc, rng, graphs)
                loss = sequence_loss(sample, params, mc, catalog_train, mode)
                if not math.isfinite(loss.item()):
                    aborted = True
                    break
                if tc.accumulate > 1:
                    loss = ad.scale(loss, 1.0 / tc.accumulate)
                loss.backward()
                losses.append(loss.item() * tc.accumulate)
                pending += 1
                if pending == tc.accumulate:
                    try:
                        opt.step()
                    except NonFiniteGradientError as exc:
                        log.error("epoch %d: %s", epoch, exc)
                        aborted = True
                        break
                    opt.zero_grad()
                    pending = 0
            if pending and not aborted:
                opt.step()
                opt.zero_grad()
        if aborted:
            restore(params, best)
            result.stopped = "non-finite"
            log.error("non-finite loss or gradient at epoch %d; restored last good parameters", epoch)
            break

        val_loss = mean_loss(val, params, mc, catalog_train) if val else float(np.mean(losses))
        lr_used = opt.lr
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)) if losses else math.nan,
            "val_loss": val_loss,
            "lr": lr_used,
        }
        result.history.append(record)
        log.info("epoch %(epoch)d train %(train_loss).4f val %(val_loss).4f lr %(lr).2e", record)
        if callback is not None:
            callback(record, params)

        stop = stopper.step(val_loss, epoch)
        if stopper.best_epoch == epoch:
            best = snapshot(params)
            result.best_epoch = epoch
            result.best_val_loss = val_loss
        if stop:
            result.stopped = "early-stopping"
            break
        sched.step(val_loss)
        if tc.time_budget is not None and time.perf_counter() - start > tc.time_budget:
            result.stopped = "time-budget"
            break
    else:
        result.stopped = "max-epochs"

    restore(params, best)
    return result


def _with_dropout(cfg, rate):
    d = cfg.to_dict()
    d["dropout"] = rate
    return type(cfg).from_dict(d)
