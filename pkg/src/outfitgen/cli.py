"""Command line entry point: one subcommand per pipeline stage.

Every run writes its outputs plus ``<subcommand>.manifest.json`` into
``--out-dir``. Logs go to stderr. Failures exit with status 1 and a single
stderr line ``error: <ErrorClass>: <message>``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .catalog import Catalog, CatalogError, load_catalog, read_outfits, save_catalog, write_outfits
from .config import ConfigError, dump_config, load_config

log = logging.getLogger("outfitgen")


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    duration_s: float = 0.0
    argv: list = field(default_factory=list)
    version: str = __version__

    def to_dict(self):
        return {
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": sorted(self.outputs),
            "duration_s": round(self.duration_s, 3),
            "argv": self.argv,
            "version": self.version,
        }


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

class _Run:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = load_config(args.config, args.set or [])
        self.manifest = RunManifest(args.command, self.config.hash(), None, argv=sys.argv[1:])
        if args.config:
            self.input(args.config)

    def input(self, path):
        self.manifest.inputs[str(path)] = file_digest(path)
        return path

    def output(self, name):
        p = self.out / name
        self.manifest.outputs.append(str(p))
        return p

    def seed(self, default):
        s = self.args.seed if self.args.seed is not None else default
        self.manifest.seed = int(s)
        return int(s)


def _need(args, *names):
    for n in names:
        if getattr(args, n, None) is None:
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _catalog(run, outfits, embeddings):
    return load_catalog(run.input(outfits), run.input(embeddings))


def _outfits_for(run, path, catalog):
    from ._validation import check_outfits

    records = read_outfits(run.input(path))
    try:
        return check_outfits([o for _, o in records], catalog)
    except ValueError as exc:
        raise CatalogError(f"{path}: {exc}") from None


def _partitions(run, catalog):
    from .graph import build_org
    from .partition import load_partitions, partition_org

    if run.args.partitions:
        ps = load_partitions(run.input(run.args.partitions))
        missing = [o for o in ps.assignment if o not in catalog.outfits]
        if missing:
            raise UsageError(f"partition file lists unknown outfit {missing[0]!r}")
        return ps
    phi = run.args.phi if getattr(run.args, "phi", None) else run.config.partition.phi
    return partition_org(build_org(catalog), phi, seed=run.seed(run.config.train.seed))


def _scorer(run, catalog):
    from .checkpoint import load_checkpoint
    from .evaluation import TGNNScorer, UniformScorer

    if run.args.uniform:
        return UniformScorer(), None
    _need(run.args, "checkpoint")
    params, mc, _ = load_checkpoint(run.input(run.args.checkpoint))
    if catalog.dim != mc.d_e:
        raise UsageError(f"embeddings have dimension {catalog.dim}, checkpoint expects {mc.d_e}")
    return TGNNScorer(params, mc, catalog), mc


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(run):
    from dataclasses import replace

    from .synth import generate_synthetic_catalog, save_oracle, split_outfits

    cfg = run.config.synth
    cfg = replace(cfg, seed=run.seed(cfg.seed))
    catalog, oracle = generate_synthetic_catalog(cfg)
    save_catalog(run.out, catalog)
    run.manifest.outputs += [str(run.out / "outfits.tsv"), str(run.out / "embeddings.tsv")]
    save_oracle(run.output("oracle.tsv"), oracle)
    splits = split_outfits(catalog, seed=cfg.seed, disjoint_garments=run.args.disjoint)
    for name, ids in zip(("train", "val", "test"), splits):
        write_outfits(run.output(f"{name}_outfits.tsv"), [catalog.outfits[o] for o in ids])
    log.info("synthetic catalog: %d garments, %d outfits (%d/%d/%d)", len(catalog.garment_ids),
             len(catalog.outfits), *map(len, splits))


def cmd_ingest(run):
    _need(run.args, "outfits", "embeddings")
    catalog = _catalog(run, run.args.outfits, run.args.embeddings)
    save_catalog(run.out, catalog)
    run.manifest.outputs += [str(run.out / "outfits.tsv"), str(run.out / "embeddings.tsv")]
    sizes = [len(o.members) for o in catalog.outfits.values()]
    summary = {
        "garments": len(catalog.garment_ids),
        "outfits": len(catalog.outfits),
        "categories": len(catalog.category_table),
        "embedding_dim": catalog.dim,
        "mean_outfit_size": float(np.mean(sizes)),
    }
    run.output("catalog_summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def cmd_pca(run):
    from .catalog import read_embeddings, write_embeddings
    from .pca import pca_fit, pca_transform, save_pca

    _need(run.args, "embeddings")
    ids, cats, raw = read_embeddings(run.input(run.args.embeddings))
    d_e = run.args.d_e or run.config.model.d_e
    model = pca_fit(raw, d_e)
    save_pca(run.output("pca.json"), model)
    projected = Catalog(ids, cats, pca_transform(model, raw), [])
    write_embeddings(run.output("embeddings_pca.tsv"), projected)
    log.info("kept %.4f of the variance in %d components", float(model.explained_variance_ratio.sum()), d_e)


def cmd_graph_stats(run):
    from .graph import build_irg, graph_stats

    _need(run.args, "outfits")
    if run.args.embeddings:
        catalog = _catalog(run, run.args.outfits, run.args.embeddings)
    else:
        outfits = [o for _, o in read_outfits(run.input(run.args.outfits))]
        ids = sorted({g for o in outfits for g in o.members})
        # categories are unknown without an embeddings file; one per garment
        catalog = Catalog(ids, ids, np.zeros((len(ids), 1)), outfits)
    report = graph_stats(build_irg(catalog)).report()
    run.output("graph_stats.tsv").write_text(report)
    if run.args.print:
        sys.stdout.write(report)


def cmd_partition(run):
    from .partition import save_partitions

    _need(run.args, "outfits", "embeddings")
    catalog = _catalog(run, run.args.outfits, run.args.embeddings)
    ps = _partitions(run, catalog)
    save_partitions(run.output("partitions.tsv"), ps)
    log.info("%d partitions, sizes %s, edge cut %d", len(ps.partitions), ps.sizes(), ps.edge_cut)


def cmd_train(run):
    from dataclasses import replace

    from .checkpoint import save_checkpoint
    from .partition import save_partitions
    from .training import fit

    _need(run.args, "train_outfits", "val_outfits", "embeddings")
    train = _catalog(run, run.args.train_outfits, run.args.embeddings)
    val_outfits = _outfits_for(run, run.args.val_outfits, train)
    val = Catalog(train.garment_ids, [train.category(g) for g in train.garment_ids],
                  train.embeddings, val_outfits, train.category_table)
    tc = replace(run.config.train, seed=run.seed(run.config.train.seed))
    mc = replace(run.config.model, dropout=tc.dropout)
    if train.dim != mc.d_e:
        raise UsageError(f"embeddings have dimension {train.dim} but model.d_e is {mc.d_e}; run pca first")
    ps = _partitions(run, train)
    save_partitions(run.output("partitions.tsv"), ps)
    log_path = run.output("train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        def record(rec, params):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()

        result = fit(train, val, ps, tc, mc, callback=record)
    save_checkpoint(run.output("checkpoint.npz"), result.params, mc,
                    extra={"best_epoch": result.best_epoch, "stopped": result.stopped})
    log.info("training stopped (%s); best epoch %d", result.stopped or "max-epochs", result.best_epoch)


def cmd_eval(run):
    from .evaluation import eval_cp, eval_fitb, eval_sip, make_cp_negatives, make_fitb_queries, write_report

    _need(run.args, "train_outfits", "test_outfits", "embeddings")
    train = _catalog(run, run.args.train_outfits, run.args.embeddings)
    test = _outfits_for(run, run.args.test_outfits, train)
    ps = _partitions(run, train)
    scorer, mc = _scorer(run, train)
    seed = run.seed(0)
    ec = run.config.eval
    task = run.args.task
    if task == "sip":
        report = eval_sip(test, ps, train, scorer, ec.n_c, ec.n_r, seed=seed, seed_len=ec.seed_len,
                          include_stop=ec.include_stop)
    elif task == "fitb":
        queries = make_fitb_queries(test, ps, train, seed=seed)
        report = eval_fitb(queries, ps, train, scorer, seed=seed)
    else:
        pool = sorted({g for o in test for g in o.members})
        negatives = make_cp_negatives(test, train, seed=seed, pool=pool)
        report = eval_cp(test, negatives, ps, train, scorer, seed=seed, n_neg=ec.cp_negatives)
    extra = {"config": run.config.to_dict(), "config_hash": run.config.hash(),
             "model_config_hash": mc.hash() if mc else None, "seed": seed}
    write_report(run.output(f"metrics_{task}.json"), report, run.args.episodes, extra)
    log.info("%s: %s = %.4f over %d episodes", task, "auroc" if task == "cp" else "accuracy",
             report.value, report.episode_count)


def cmd_generate(run):
    from .checkpoint import load_checkpoint
    from .model import generate_outfit
    from .partition import PartitionLocator
    from .training import PartitionGraphs
    from ._validation import check_seed

    _need(run.args, "seed_ids", "checkpoint", "train_outfits", "embeddings")
    train = _catalog(run, run.args.train_outfits, run.args.embeddings)
    seed = check_seed([s for s in run.args.seed_ids.split(",") if s], train)
    params, mc, _ = load_checkpoint(run.input(run.args.checkpoint))
    ps = _partitions(run, train)
    p = PartitionLocator(ps, train).locate(seed)
    irg = PartitionGraphs(ps, train)[p]
    pool = [g for g in irg.nodes if g not in set(seed)]
    trace = []
    generated = generate_outfit(seed, irg, pool, train, params, mc, trace=trace)
    run.output("generated.txt").write_text("".join(f"{g}\n" for g in seed + generated))
    report = {"seed": seed, "generated": generated, "partition": p, "steps": trace}
    run.output("generation_report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "pca": cmd_pca,
    "graph-stats": cmd_graph_stats,
    "partition": cmd_partition,
    "train": cmd_train,
    "eval": cmd_eval,
    "generate": cmd_generate,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="rng seed for this run")
    common.add_argument("--config", default=None, help="INI file of section.key settings")
    common.add_argument("--out-dir", default=".", help="directory for outputs and the manifest")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="outfitgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic catalog and splits")
    p.add_argument("--disjoint", action="store_true", help="no garment shared across splits")

    p = sub.add_parser("ingest", parents=[common], help="validate and normalise a catalog")
    p.add_argument("--outfits")
    p.add_argument("--embeddings")

    p = sub.add_parser("pca", parents=[common], help="fit PCA and project embeddings")
    p.add_argument("--embeddings")
    p.add_argument("--d-e", type=int, default=None)

    p = sub.add_parser("graph-stats", parents=[common], help="item relation graph statistics")
    p.add_argument("--outfits")
    p.add_argument("--embeddings")
    p.add_argument("--print", action="store_true", help="also write the report to stdout")

    p = sub.add_parser("partition", parents=[common], help="partition the outfit relation graph")
    p.add_argument("--outfits")
    p.add_argument("--embeddings")
    p.add_argument("--phi", type=int, default=None)
    p.set_defaults(partitions=None)

    p = sub.add_parser("train", parents=[common], help="fit model parameters")
    p.add_argument("--train-outfits")
    p.add_argument("--val-outfits")
    p.add_argument("--embeddings")
    p.add_argument("--partitions", default=None)
    p.add_argument("--phi", type=int, default=None)

    p = sub.add_parser("eval", parents=[common], help="SIP, FITB or CP evaluation")
    p.add_argument("--task", choices=("sip", "fitb", "cp"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--uniform", action="store_true", help="score with the uniform baseline")
    p.add_argument("--train-outfits")
    p.add_argument("--test-outfits")
    p.add_argument("--embeddings")
    p.add_argument("--partitions", default=None)
    p.add_argument("--phi", type=int, default=None)
    p.add_argument("--episodes", action="store_true", help="include the per-episode log")

    p = sub.add_parser("generate", parents=[common], help="complete an outfit from seed garments")
    p.add_argument("--seed-ids", help="comma-separated garment ids")
    p.add_argument("--checkpoint")
    p.add_argument("--train-outfits")
    p.add_argument("--embeddings")
    p.add_argument("--partitions", default=None)
    p.add_argument("--phi", type=int, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    start = time.perf_counter()
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        limit = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
        with limit:
            run = _Run(args)
            COMMANDS[args.command](run)
            run.output(f"{args.command}.config.ini").write_text(dump_config(run.config))
        run.manifest.duration_s = time.perf_counter() - start
        path = run.out / f"{args.command}.manifest.json"
        path.write_text(json.dumps(run.manifest.to_dict(), sort_keys=True, indent=2) + "\n")
    except (CatalogError, ConfigError, UsageError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else repr(exc)
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
