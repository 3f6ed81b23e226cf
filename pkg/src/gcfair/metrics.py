"""Prediction and fairness metrics, the counterfactual-flip estimate, and report I/O."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from scipy.stats import rankdata

from .graph import Graph

METRIC_ORDER = ("accuracy", "f1", "auroc", "delta_eo", "delta_dp", "delta_cf", "r2")
METRIC_TITLES = {
    "accuracy": "Accuracy", "f1": "F1", "auroc": "AUROC", "delta_eo": "ΔEO",
    "delta_dp": "ΔDP", "delta_cf": "δCF", "r2": "R²",
}
HIGHER_IS_BETTER = {"accuracy": True, "f1": True, "auroc": True,
                    "delta_eo": False, "delta_dp": False, "delta_cf": False, "r2": False}


def auroc(probs, labels) -> Optional[float]:
    """Mann-Whitney statistic; tied scores count 1/2. None when only one class is present."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(probs)  # average ranks handle ties
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def classification_metrics(probs, labels) -> dict:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if len(probs) == 0:
        raise ValueError("empty prediction vector")
    pred = (probs > 0.5).astype(np.int64)
    tp = int(((pred == 1) & (labels == 1)).sum())
    fp = int(((pred == 1) & (labels == 0)).sum())
    fn = int(((pred == 0) & (labels == 1)).sum())
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    return {"accuracy": float((pred == labels).mean()), "f1": float(f1), "auroc": auroc(probs, labels)}


def delta_dp(pred_labels, sensitive) -> float:
    pred = np.asarray(pred_labels, dtype=np.float64)
    s = np.asarray(sensitive)
    if not (s == 0).any() or not (s == 1).any():
        raise ValueError("both sensitive groups must be non-empty")
    return float(abs(pred[s == 0].mean() - pred[s == 1].mean()))


def delta_eo(pred_labels, labels, sensitive) -> Optional[float]:
    pred = np.asarray(pred_labels, dtype=np.float64)
    y, s = np.asarray(labels), np.asarray(sensitive)
    g0, g1 = (y == 1) & (s == 0), (y == 1) & (s == 1)
    if not g0.any() or not g1.any():
        return None
    return float(abs(pred[g0].mean() - pred[g1].mean()))


def neighbor_sensitive_mean(graph: Graph, sensitive=None) -> np.ndarray:
    """Mean sensitive value over each node's closed one-hop neighbourhood."""
    s = graph.sensitive if sensitive is None else np.asarray(sensitive)
    adj = graph.adjacency
    return (adj @ s + s) / (np.asarray(adj.sum(axis=1)).ravel() + 1)


def r2_score_clipped(y, x) -> float:
    y, x = np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if len(np.unique(x)) < 2:
        return 0.0
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 0.0
    design = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    ss_res = float(((y - design @ coef) ** 2).sum())
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))


def r2_neighbor(probs, sensitive, graph: Graph, nodes=None) -> float:
    """R² of predicted probabilities regressed on the closed-neighbourhood sensitive mean."""
    summary = neighbor_sensitive_mean(graph, sensitive)
    probs = np.asarray(probs, dtype=np.float64)
    if nodes is not None:
        summary = summary[np.asarray(nodes)]
    return r2_score_clipped(probs, summary)


def cf_assignments(n: int, seed: int) -> list:
    """All-zero, a random half set to one, and all-one sensitive vectors."""
    rng = np.random.default_rng(seed)
    half = np.zeros(n, dtype=np.int64)
    half[rng.choice(n, size=n // 2, replace=False)] = 1
    return [np.zeros(n, dtype=np.int64), half, np.ones(n, dtype=np.int64)]


def estimate_delta_cf(model_predict: Callable[[Graph], np.ndarray], cf_source: Callable[[np.ndarray], Graph],
                      n: int, seed: int = 0, nodes=None, mode: str = "label") -> float:
    """Mean over the three assignment pairs of the fraction of nodes whose prediction changes.

    ``model_predict`` maps a (counterfactual) graph to per-node hard labels, or
    to probabilities with ``mode="prob"``, which then averages |p' - p''|.
    """
    if mode not in ("label", "prob"):
        raise ValueError("mode must be 'label' or 'prob'")
    outs = []
    for assign in cf_assignments(n, seed):
        out = np.asarray(model_predict(cf_source(assign)))
        outs.append(out if nodes is None else out[np.asarray(nodes)])
    diffs = []
    for a, b in combinations(outs, 2):
        diffs.append(np.mean(a != b) if mode == "label" else np.mean(np.abs(a - b)))
    return float(np.mean(diffs))


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    metrics: dict  # name -> (mean, std)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_runs(cls, runs: list, metadata: Optional[dict] = None) -> "MetricReport":
        out = {}
        names = [m for m in METRIC_ORDER if any(m in r for r in runs)]
        names += sorted({k for r in runs for k in r} - set(names))
        for name in names:
            vals = [r[name] for r in runs if r.get(name) is not None and math.isfinite(r[name])]
            if vals:
                out[name] = (float(np.mean(vals)), float(np.std(vals)))
        return cls(out, dict(metadata or {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = ";".join(f"{k}={v}" for k, v in self.metadata.items())
        buf.write(f"# {meta}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "mean", "std"])
        for name, (mean, std) in self.metrics.items():
            w.writerow([name, f"{mean:.10g}", f"{std:.10g}"])
        return buf.getvalue()

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @classmethod
    def parse(cls, text: str) -> "MetricReport":
        meta, rows = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                for part in line[1:].strip().split(";"):
                    if "=" in part:
                        k, v = part.split("=", 1)
                        meta[k.strip()] = v.strip()
            elif line.strip():
                rows.append(line)
        reader = csv.reader(rows)
        header = next(reader, None)
        if header != ["metric", "mean", "std"]:
            raise ValueError(f"unexpected report header {header}")
        return cls({r[0]: (float(r[1]), float(r[2])) for r in reader}, meta)

    @classmethod
    def read(cls, path: str) -> "MetricReport":
        with open(path) as fh:
            return cls.parse(fh.read())


def compare_table(reports: list, names: Optional[list] = None) -> str:
    """Markdown table, one row per report; the best mean per column is bolded (ties all bolded)."""
    if not reports:
        raise ValueError("need at least one report")
    keys = [set(r.metrics) for r in reports]
    if any(k != keys[0] for k in keys):
        diff = sorted(set.union(*keys) - set.intersection(*keys))
        raise ValueError(f"reports disagree on metrics: {diff}")
    cols = [m for m in METRIC_ORDER if m in keys[0]]
    names = names or [r.metadata.get("variant", f"run{i}") for i, r in enumerate(reports)]
    best = {}
    for c in cols:
        vals = [r.metrics[c][0] for r in reports]
        best[c] = max(vals) if HIGHER_IS_BETTER[c] else min(vals)
    head = "| Method | " + " | ".join(f"{METRIC_TITLES[c]} ({'↑' if HIGHER_IS_BETTER[c] else '↓'})" for c in cols) + " |"
    lines = [head, "|" + "---|" * (len(cols) + 1)]
    for name, r in zip(names, reports):
        cells = []
        for c in cols:
            mean, std = r.metrics[c]
            cell = f"{mean:.3f} ± {std:.3f}"
            cells.append(f"**{cell}**" if mean == best[c] else cell)
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"
