"""Repeated-seed experiment driver: dataset loading, caching, training, evaluation, aggregation."""
from __future__ import annotations

import json
import logging
import os
import traceback
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import augment, fair, metrics
from .config import ExperimentConfig
from .graph import Graph, Split, load_graph_dir, split_nodes
from .ppr import ImportanceMatrix, SubgraphBatch, build_subgraphs, cached_ppr_scores, ppr_scores
from .synth import (SyntheticParams, calibrated, cf_graph, fit_causal_model, generate_synthetic,
                    true_counterfactual)

log = logging.getLogger(__name__)

CLI_VARIANTS = ("full", "ns", "nn", "np", "nc", "baseline-gcn", "baseline-sage")
PARAMS_FILE = "params.json"


def repeat_seeds(master: int, repeats: int) -> list:
    """Per-repeat seeds derived from (master, i); stable across platforms."""
    return [int(np.random.SeedSequence([master, i]).generate_state(1)[0] & 0x7FFFFFFF) for i in range(repeats)]


def variant_config(train: fair.TrainConfig, variant: str) -> fair.TrainConfig:
    """Translate a CLI variant name into the training config it implies."""
    if variant not in CLI_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {CLI_VARIANTS}")
    if variant.startswith("baseline-"):
        return replace(train, variant="baseline", lam=0.0, encoder=variant.split("-", 1)[1])
    return replace(train, variant=variant)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    graph: Graph
    cf_source: Callable[[np.ndarray], Graph]
    params: Optional[SyntheticParams] = None
    kind: str = "synthetic"


def synthetic_params(cfg: ExperimentConfig) -> SyntheticParams:
    d = cfg.data
    return calibrated(SyntheticParams.sample(n=d.n, p=d.p, d_z=d.d_z, d=d.d, a=d.a, w_s=d.w_s,
                                             target_avg_degree=d.target_avg_degree, seed=d.seed))


def synthetic_dataset(params: SyntheticParams) -> Dataset:
    graph, z = generate_synthetic(params)
    return Dataset(graph, lambda assign: true_counterfactual(params, z, assign), params, "synthetic")


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    """Synthetic data from config, or a directory (with true counterfactuals if it carries params)."""
    if cfg.data.dir is None:
        return synthetic_dataset(synthetic_params(cfg))
    pfile = os.path.join(cfg.data.dir, PARAMS_FILE)
    if os.path.isfile(pfile):
        with open(pfile) as fh:
            params = SyntheticParams.from_dict(json.load(fh))
        ds = synthetic_dataset(params)
        on_disk = load_graph_dir(cfg.data.dir, cfg.data.sensitive_col, cfg.data.label_col)
        if not on_disk.equals(ds.graph):
            raise ValueError(f"{cfg.data.dir}: files do not match the stored generator parameters")
        return ds
    graph = load_graph_dir(cfg.data.dir, cfg.data.sensitive_col, cfg.data.label_col)
    fit = fit_causal_model(graph)
    log.info("fitted causal model: gamma=%.4f bias=%.4f", fit.gamma, fit.bias)
    return Dataset(graph, lambda assign: cf_graph(graph, assign, fit), None, "fitted")


def save_params(params: SyntheticParams, directory: str) -> None:
    with open(os.path.join(directory, PARAMS_FILE), "w") as fh:
        json.dump(params.to_dict(), fh, indent=1)


def dataset_stats(graph: Graph) -> dict:
    s = graph.sensitive
    e = graph.edges
    intra = int((s[e[:, 0]] == s[e[:, 1]]).sum()) if len(e) else 0
    return {"nodes": graph.n, "edges": graph.num_pairs, "feature_dim": graph.d,
            "avg_degree": graph.avg_degree, "intra_edges": intra, "inter_edges": graph.num_pairs - intra,
            "sensitive_ratio": float(s.mean())}


# ---------------------------------------------------------------------------
# session with caches shared across variants and repeats


class Session:
    """Holds a dataset plus memoized importance scores, subgraphs and augmenters."""

    def __init__(self, cfg: ExperimentConfig, dataset: Optional[Dataset] = None, cache_dir: Optional[str] = None):
        self.cfg = cfg
        self.data = dataset if dataset is not None else load_dataset(cfg)
        self.cache_dir = cache_dir
        self._subgraphs: dict = {}
        self._importance: dict = {}
        self._augmenters: dict = {}

    def importance(self, graph: Graph) -> ImportanceMatrix:
        key = graph.fingerprint()
        if key not in self._importance:
            p = self.cfg.ppr
            if self.cache_dir is not None and p.max_hops is None:
                self._importance[key] = cached_ppr_scores(graph, self.cache_dir, p.alpha, p.tol)
            else:
                self._importance[key] = ppr_scores(graph, p.alpha, p.tol, p.max_hops)
        return self._importance[key]

    def subgraphs(self, graph: Graph, k: int) -> SubgraphBatch:
        key = (graph.fingerprint(), k)
        if key not in self._subgraphs:
            self._subgraphs[key] = build_subgraphs(graph, self.importance(graph), k)
        return self._subgraphs[key]

    def augmenter(self, seed: int, k: int) -> augment.Augmenter:
        acfg = replace(self.cfg.aug, seed=seed)
        key = (seed, k, acfg)
        if key not in self._augmenters:
            self._augmenters[key] = augment.train_augmenter(self.subgraphs(self.data.graph, k), acfg)
        return self._augmenters[key]

    def split(self, seed: int) -> Split:
        return split_nodes(self.data.graph, self.cfg.run.split, seed)

    def train(self, tcfg: fair.TrainConfig, seed: int, augmenter=None) -> fair.FairModel:
        tcfg = replace(tcfg, seed=seed)
        graph = self.data.graph
        sub = self.subgraphs(graph, tcfg.k)
        if tcfg.uses_augmenter and augmenter is None:
            augmenter = self.augmenter(seed, tcfg.k)
        return fair.train_fair(graph, self.split(seed), self.importance(graph), augmenter, tcfg, subgraphs=sub)

    def evaluate(self, model: fair.FairModel, seed: int, nodes=None) -> dict:
        """All seven metrics on ``nodes`` (default: the test split of ``seed``)."""
        graph = self.data.graph
        nodes = self.split(seed).test if nodes is None else np.asarray(nodes)
        k = model.cfg.k
        probs, labels = fair.predict_batch(model, self.subgraphs(graph, k))
        y, s = graph.labels[nodes], graph.sensitive[nodes]
        out = metrics.classification_metrics(probs[nodes], y)
        out["delta_dp"] = metrics.delta_dp(labels[nodes], s)
        out["delta_eo"] = metrics.delta_eo(labels[nodes], y, s)
        mode = self.cfg.run.cf_mode
        col = 0 if mode == "prob" else 1

        def predict_cf(g: Graph):
            return fair.predict_batch(model, self.subgraphs(g, k))[col]

        out["delta_cf"] = metrics.estimate_delta_cf(predict_cf, self.data.cf_source, graph.n, seed, nodes, mode)
        out["r2"] = metrics.r2_neighbor(probs[nodes], graph.sensitive, graph, nodes)
        return out


# ---------------------------------------------------------------------------
# repeated runs


def run_repeat(session: Session, variant: str, seed: int, train_cfg: Optional[fair.TrainConfig] = None) -> dict:
    tcfg = variant_config(train_cfg or session.cfg.train, variant)
    model = session.train(tcfg, seed)
    out = session.evaluate(model, seed)
    out["best_epoch"] = model.best_epoch
    return out


def run_experiment(session: Session, variant: str, out_dir: Optional[str] = None,
                   train_cfg: Optional[fair.TrainConfig] = None, label: Optional[str] = None) -> metrics.MetricReport:
    """Run every repeat, log each, and aggregate over the successful ones."""
    cfg = session.cfg
    seeds = repeat_seeds(cfg.run.seed, cfg.run.repeats)
    label = label or variant
    runs, failures = [], []
    logs = []
    for i, seed in enumerate(seeds):
        try:
            res = run_repeat(session, variant, seed, train_cfg)
            runs.append({m: res.get(m) for m in metrics.METRIC_ORDER})
            logs.append({"repeat": i, "seed": seed, "status": "ok", **res})
        except Exception as exc:  # recorded per repeat; aggregation continues
            log.error("repeat %d (seed %d) failed: %s", i, seed, exc)
            failures.append(i)
            logs.append({"repeat": i, "seed": seed, "status": "failed", "error": repr(exc),
                         "trace": traceback.format_exc()})
    if not runs:
        raise RuntimeError(f"all {len(seeds)} repeats of {label} failed")
    if len(runs) < cfg.run.repeats / 2:
        log.warning("only %d of %d repeats of %s succeeded", len(runs), cfg.run.repeats, label)
    tcfg = variant_config(train_cfg or cfg.train, variant)
    meta = {"variant": label, "master_seed": cfg.run.seed, "repeats": cfg.run.repeats,
            "succeeded": len(runs), "lambda": tcfg.lam, "encoder": tcfg.encoder, "repr_dim": tcfg.repr_dim,
            "epochs": tcfg.epochs}
    report = metrics.MetricReport.from_runs(runs, meta)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{label}.runs.jsonl"), "w") as fh:
            for entry in logs:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        report.write(os.path.join(out_dir, f"{label}.csv"))
    return report
