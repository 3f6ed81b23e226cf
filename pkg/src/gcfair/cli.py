"""Command-line entry point: ``gcfair <verb> [options]``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import replace

from . import augment, fair, metrics
from .config import ExperimentConfig, load_config
from .errors import ConfigError, GraphFormatError
from .experiment import (CLI_VARIANTS, Session, dataset_stats, run_experiment, save_params,
                         synthetic_dataset, synthetic_params, variant_config)
from .graph import save_graph

log = logging.getLogger("gcfair")

AUG_FILE = "augmenter.ckpt"
MODEL_FILE = "model.ckpt"

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Bad command-line input; maps to the validation exit code."""


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--profile", choices=("paper", "desk"), help="preset hyperparameters")
    common.add_argument("--seed", type=int, help="seed (master seed for run, data seed for generate)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. train.lambda=1.0 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gcfair", description="Counterfactually fair node classification on graphs.")
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset and print its statistics")
    sub.add_parser("pretrain-aug", parents=[common], help="train the counterfactual augmenter")
    for name, helptext in (("train", "train one model"), ("evaluate", "evaluate a trained model")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--variant", choices=CLI_VARIANTS, default="full")
    sp = sub.add_parser("run", parents=[common], help="repeated train/evaluate with aggregate CSV")
    sp.add_argument("--variant", choices=CLI_VARIANTS, action="append",
                    help="variant to run (repeatable; default full)")
    sp = sub.add_parser("compare", help="markdown table from aggregate CSVs")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--names", help="comma-separated row names")
    sp.add_argument("--out", help="also write the table to this file")
    return p


def _config(args, seed_key: str = "run.seed") -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides[seed_key] = str(args.seed)
    if args.out is not None:
        overrides["run.out"] = args.out
    return load_config(args.config, args.profile, overrides)


def _run_seed(cfg: ExperimentConfig) -> int:
    return cfg.run.seed


def cmd_generate(args) -> None:
    cfg = _config(args, seed_key="data.seed")
    if cfg.data.dir is not None:
        raise UsageError("generate writes a synthetic dataset; data.dir must not be set")
    ds = synthetic_dataset(synthetic_params(cfg))
    out = cfg.run.out
    save_graph(ds.graph, out)
    save_params(ds.params, out)
    st = dataset_stats(ds.graph)
    print(f"{'Nodes':<20}{st['nodes']}")
    print(f"{'Edges':<20}{st['edges']}")
    print(f"{'Feature dimension':<20}{st['feature_dim']}")
    print(f"{'Average degree':<20}{st['avg_degree']:.3f}")
    print(f"{'Intra-group edges':<20}{st['intra_edges']}")
    print(f"{'Inter-group edges':<20}{st['inter_edges']}")
    print(f"{'Sensitive ratio':<20}{st['sensitive_ratio']:.3f}")
    print(f"wrote dataset to {out}")


def cmd_pretrain_aug(args) -> None:
    cfg = _config(args)
    session = Session(cfg)
    os.makedirs(cfg.run.out, exist_ok=True)
    t = time.time()
    aug = session.augmenter(_run_seed(cfg), cfg.train.k)
    path = os.path.join(cfg.run.out, AUG_FILE)
    augment.save_augmenter(aug, path)
    last = aug.history[-1] if aug.history else {}
    print(f"augmenter trained in {time.time() - t:.1f}s; final L_r={last.get('L_r', float('nan')):.4f} "
          f"disc_ce={last.get('disc_ce', float('nan')):.4f}; saved {path}")


def cmd_train(args) -> None:
    cfg = _config(args)
    session = Session(cfg)
    seed = _run_seed(cfg)
    tcfg = variant_config(cfg.train, args.variant)
    aug = None
    aug_path = os.path.join(cfg.run.out, AUG_FILE)
    if tcfg.uses_augmenter and os.path.isfile(aug_path):
        aug = augment.load_augmenter(aug_path)
        if aug.cfg != replace(cfg.aug, seed=seed):
            log.warning("stored augmenter was trained with a different config; using it anyway")
    os.makedirs(cfg.run.out, exist_ok=True)
    model = session.train(tcfg, seed, aug)
    path = os.path.join(cfg.run.out, MODEL_FILE)
    fair.save_model(model, path)
    best = model.history[model.best_epoch] if model.best_epoch is not None else {}
    print(f"best epoch {model.best_epoch}, validation accuracy {best.get('val_acc', float('nan')):.4f}; saved {path}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    path = os.path.join(cfg.run.out, MODEL_FILE)
    if not os.path.isfile(path):
        raise UsageError(f"no trained model at {path}; run 'train' first")
    model = fair.load_model(path)
    session = Session(cfg)
    seed = _run_seed(cfg)
    result = session.evaluate(model, seed)
    report = metrics.MetricReport.from_runs([result], {"variant": args.variant, "seed": seed})
    report.write(os.path.join(cfg.run.out, "metrics.csv"))
    test = session.split(seed).test
    probs, labels = fair.predict_batch(model, session.subgraphs(session.data.graph, model.cfg.k), test)
    fair.write_predictions(os.path.join(cfg.run.out, "predictions.csv"), test, probs, labels)
    for name in metrics.METRIC_ORDER:
        val = result.get(name)
        print(f"{metrics.METRIC_TITLES[name]:<10}{'n/a' if val is None else f'{val:.4f}'}")


def cmd_run(args) -> None:
    cfg = _config(args)
    variants = args.variant or ["full"]
    session = Session(cfg, cache_dir=os.path.join(cfg.run.out, "cache") if cfg.run.cache else None)
    reports = []
    for v in variants:
        t = time.time()
        rep = run_experiment(session, v, cfg.run.out)
        reports.append(rep)
        log.info("%s finished in %.1fs", v, time.time() - t)
    print(metrics.compare_table(reports, variants), end="")


def cmd_compare(args) -> None:
    try:
        reports = [metrics.MetricReport.read(p) for p in args.reports]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    names = args.names.split(",") if args.names else None
    if names is not None and len(names) != len(reports):
        raise UsageError("--names must list one name per report")
    try:
        table = metrics.compare_table(reports, names)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    print(table, end="")


COMMANDS = {"generate": cmd_generate, "pretrain-aug": cmd_pretrain_aug, "train": cmd_train,
            "evaluate": cmd_evaluate, "run": cmd_run, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.verb](args)
    except (ConfigError, GraphFormatError, UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        if getattr(args, "verbose", False):
            raise
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
