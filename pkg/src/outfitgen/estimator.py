"""Scikit-learn style wrapper around partitioning, training and generation."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .catalog import Catalog
from ._validation import check_catalog, check_fraction, check_outfits, check_positive_int, check_seed
from .evaluation import TGNNScorer, eval_sip
from .graph import build_org
from .model import TGNNConfig, generate_outfit
from .partition import PartitionLocator, partition_org
from .training import PartitionGraphs, TrainerConfig, fit


class OutfitGenerator(BaseEstimator):
    """Learns to complete outfits from a catalog and generates new ones.

    ``fit`` takes a :class:`Catalog`; a seeded ``validation_fraction`` of its
    outfits drives early stopping unless ``validation`` outfits are given.
    ``predict`` maps garment seeds to generated outfits and ``score`` is
    Seeded Item Prediction accuracy.
    """

    def __init__(self, d_m=256, n_heads=8, k_enc=4, k_dec=4, dropout=0.35, lr=5e-4,
                 weight_decay=5e-5, phi=50, n_c=3, n_r=5, max_epochs=1000, patience=10,
                 lr_patience=4, validation_fraction=0.1, time_budget=None, random_state=0):
        self.d_m = d_m
        self.n_heads = n_heads
        self.k_enc = k_enc
        self.k_dec = k_dec
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.phi = phi
        self.n_c = n_c
        self.n_r = n_r
        self.max_epochs = max_epochs
        self.patience = patience
        self.lr_patience = lr_patience
        self.validation_fraction = validation_fraction
        self.time_budget = time_budget
        self.random_state = random_state

    def _configs(self, d_e):
        mc = TGNNConfig(d_e=d_e, d_m=self.d_m, n_heads=self.n_heads, k_enc=self.k_enc,
                        k_dec=self.k_dec, dropout=self.dropout)
        tc = TrainerConfig(
            n_c=self.n_c, n_r=self.n_r, lr=self.lr, weight_decay=self.weight_decay,
            lr_patience=self.lr_patience, patience=self.patience, max_epochs=self.max_epochs,
            dropout=self.dropout, seed=self.random_state, time_budget=self.time_budget,
        )
        return mc, tc

    def fit(self, X, y=None, validation=None):
        catalog = check_catalog(X)
        check_positive_int(self.phi, "phi", minimum=2)
        ids = list(catalog.outfits)
        if validation is None:
            frac = check_fraction(self.validation_fraction, "validation_fraction", 0.0, 1.0, closed=False)
            rng = np.random.default_rng(self.random_state)
            n_val = max(1, int(round(frac * len(ids))))
            if n_val >= len(ids):
                raise ValueError("not enough outfits to hold out a validation set")
            picked = set(rng.choice(len(ids), size=n_val, replace=False).tolist())
            val_ids = [o for i, o in enumerate(ids) if i in picked]
            train_ids = [o for i, o in enumerate(ids) if i not in picked]
            val_catalog = catalog.subset(val_ids)
        else:
            val = check_outfits(validation, catalog)
            clash = {o.id for o in val} & set(ids)
            if clash:
                raise ValueError(f"validation outfit ids collide with training ids: {sorted(clash)[:3]}")
            train_ids = ids
            val_catalog = Catalog(catalog.garment_ids, [catalog.category(g) for g in catalog.garment_ids],
                                  catalog.embeddings, val, catalog.category_table)
        train_catalog = catalog.subset(train_ids)
        mc, tc = self._configs(catalog.dim)
        self.partitions_ = partition_org(build_org(train_catalog), self.phi, seed=self.random_state)
        result = fit(train_catalog, val_catalog, self.partitions_, tc, mc)
        self.params_ = result.params
        self.config_ = mc
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.stopped_ = result.stopped
        self.catalog_ = train_catalog
        self._locator = PartitionLocator(self.partitions_, train_catalog)
        self._graphs = PartitionGraphs(self.partitions_, train_catalog)
        return self

    def predict(self, X):
        """Generated garments (seed excluded) for each seed in ``X``."""
        check_is_fitted(self, "params_")
        out = []
        for seed in X:
            seed = check_seed(seed, self.catalog_)
            p = self._locator.locate(seed)
            irg = self._graphs[p]
            pool = [g for g in irg.nodes if g not in set(seed)]
            out.append(generate_outfit(seed, irg, pool, self.catalog_, self.params_, self.config_))
        return out

    def score(self, X, y=None):
        """Seeded Item Prediction accuracy on outfits ``X``."""
        check_is_fitted(self, "params_")
        outfits = check_outfits(X, self.catalog_)
        scorer = TGNNScorer(self.params_, self.config_, self.catalog_)
        report = eval_sip(outfits, self.partitions_, self.catalog_, scorer, self.n_c, self.n_r,
                          seed=self.random_state, keep_episodes=False)
        return report.accuracy
