"""Immutable undirected graph with a binary sensitive attribute, plus splits and file I/O."""
from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import GraphFormatError

EDGE_FILE = "edges.tsv"
FEATURE_FILE = "features.csv"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def canonical_edges(pairs, n: int) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates; return sorted (m, 2) array with i < j."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise GraphFormatError(f"edge endpoint out of range [0, {n})")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    if not keep.any():
        return np.zeros((0, 2), dtype=np.int64)
    packed = np.unique(lo[keep] * n + hi[keep])
    return np.stack([packed // n, packed % n], axis=1)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph.

    ``edges`` holds each undirected pair once as ``(i, j)`` with ``i < j``.
    ``features`` contains the sensitive attribute as column ``s_idx``.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    s_idx: int
    labels: Optional[np.ndarray] = None
    feature_names: tuple = ()
    sensitive_name: str = "sensitive"
    label_name: str = "label"

    def __post_init__(self):
        edges = canonical_edges(self.edges, self.n)
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != self.n:
            raise GraphFormatError(f"features must be ({self.n}, d), got {feats.shape}")
        if not 0 <= self.s_idx < feats.shape[1]:
            raise GraphFormatError(f"s_idx {self.s_idx} out of range")
        s = feats[:, self.s_idx]
        if not np.isin(s, (0.0, 1.0)).all():
            bad = int(np.flatnonzero(~np.isin(s, (0.0, 1.0)))[0])
            raise GraphFormatError(f"non-binary sensitive attribute at row {bad}", row=bad)
        object.__setattr__(self, "edges", _frozen(edges))
        object.__setattr__(self, "features", _frozen(feats.copy()))
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (self.n,) or not np.isin(y, (0, 1)).all():
                raise GraphFormatError("labels must be a binary vector of length n")
            object.__setattr__(self, "labels", _frozen(y.astype(np.int64)))
        names = tuple(self.feature_names) or tuple(
            self.sensitive_name if c == self.s_idx else f"x{c}" for c in range(feats.shape[1])
        )
        if len(names) != feats.shape[1]:
            raise GraphFormatError("feature_names length does not match feature columns")
        object.__setattr__(self, "feature_names", names)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def sensitive(self) -> np.ndarray:
        return _frozen(self.features[:, self.s_idx].astype(np.int64))

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency with zero diagonal."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        a = sp.coo_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(self.n, self.n))
        return a.tocsr()

    @property
    def num_pairs(self) -> int:
        return len(self.edges)

    @cached_property
    def degree(self) -> np.ndarray:
        return _frozen(np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64))

    @property
    def avg_degree(self) -> float:
        return 2.0 * self.num_pairs / self.n if self.n else 0.0

    @property
    def nonsensitive(self) -> np.ndarray:
        return np.delete(self.features, self.s_idx, axis=1)

    def with_sensitive(self, values, features=None, edges=None, labels=None) -> "Graph":
        """Copy with a new sensitive vector (and optionally replaced features/edges/labels)."""
        feats = np.array(self.features if features is None else features, dtype=np.float64)
        feats[:, self.s_idx] = np.asarray(values, dtype=np.float64)
        return Graph(
            n=self.n,
            edges=self.edges if edges is None else edges,
            features=feats,
            s_idx=self.s_idx,
            labels=self.labels if labels is None else labels,
            feature_names=self.feature_names,
            sensitive_name=self.sensitive_name,
            label_name=self.label_name,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(self.edges.tobytes())
        h.update(self.features.tobytes())
        return h.hexdigest()[:16]

    def equals(self, other: "Graph") -> bool:
        if self.n != other.n or self.s_idx != other.s_idx:
            return False
        if not np.array_equal(self.edges, other.edges):
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        return self.labels is None or np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __eq__(self, other):
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("train", "valid", "test"))

    def sizes(self):
        return len(self.train), len(self.valid), len(self.test)


def split_nodes(graph: Graph, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> Split:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative values summing to 1, got {ratios}")
    nodes = np.arange(graph.n)
    perm = np.random.default_rng(seed).permutation(nodes)
    n = len(perm)
    n_train = int(round(ratios[0] * n))
    n_valid = min(int(round(ratios[1] * n)), n - n_train)
    parts = perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:]
    return Split(*(_frozen(np.sort(p)) for p in parts))


def save_graph(graph: Graph, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, EDGE_FILE), "w") as fh:
        for i, j in graph.edges:
            fh.write(f"{i}\t{j}\n")
    header = list(graph.feature_names)
    if graph.labels is not None:
        header.append(graph.label_name)
    with open(os.path.join(directory, FEATURE_FILE), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in range(graph.n):
            row = [repr(float(v)) for v in graph.features[r]]
            row[graph.s_idx] = str(int(graph.features[r, graph.s_idx]))
            if graph.labels is not None:
                row.append(str(int(graph.labels[r])))
            w.writerow(row)


def _parse_binary(value: str, column: str, row: int) -> int:
    try:
        x = float(value)
    except ValueError:
        x = None
    if x not in (0.0, 1.0):
        raise GraphFormatError(f"non-binary {column} at row {row}", column=column, row=row)
    return int(x)


def load_graph(
    edge_path: str,
    feature_path: str,
    sensitive_col: str = "sensitive",
    label_col: Optional[str] = "label",
) -> Graph:
    """Read ``edges.tsv`` + ``features.csv``.

    Edges are symmetrized and deduplicated, self-loops dropped. A missing
    ``label_col`` yields a label-free graph. The sensitive column always stays
    in the feature matrix; encoders decide whether to read it.
    """
    with open(feature_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError("empty feature file", path=feature_path) from None
        rows = [r for r in reader if r]
    if sensitive_col not in header:
        raise GraphFormatError(f"sensitive column {sensitive_col!r} not in header", path=feature_path)
    s_col = header.index(sensitive_col)
    y_col = header.index(label_col) if label_col and label_col in header else None
    n = len(rows)
    feat_cols = [c for c in range(len(header)) if c != y_col]
    feats = np.empty((n, len(feat_cols)))
    labels = np.empty(n, dtype=np.int64) if y_col is not None else None
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise GraphFormatError(f"row {r} has {len(row)} fields, expected {len(header)}", path=feature_path, row=r)
        for k, c in enumerate(feat_cols):
            if c == s_col:
                feats[r, k] = _parse_binary(row[c], "sensitive attribute", r)
            else:
                try:
                    feats[r, k] = float(row[c])
                except ValueError:
                    raise GraphFormatError(f"non-numeric value in column {header[c]!r} at row {r}",
                                           path=feature_path, column=header[c], row=r) from None
        if labels is not None:
            labels[r] = _parse_binary(row[y_col], "label", r)
    names = [header[c] for c in feat_cols]
    s_idx = feat_cols.index(s_col)

    pairs = []
    with open(edge_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) < 2:
                raise GraphFormatError(f"line {lineno}: expected two node indices", path=edge_path, line=lineno)
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphFormatError(f"line {lineno}: non-integer node index", path=edge_path, line=lineno) from None
            if not (0 <= i < n and 0 <= j < n):
                raise GraphFormatError(f"line {lineno}: node index out of range [0, {n})", path=edge_path, line=lineno)
            pairs.append((i, j))
    return Graph(
        n=n,
        edges=np.array(pairs, dtype=np.int64).reshape(-1, 2),
        features=feats,
        s_idx=s_idx,
        labels=labels,
        feature_names=tuple(names),
        sensitive_name=sensitive_col,
        label_name=label_col or "label",
    )


def load_graph_dir(directory: str, sensitive_col: str = "sensitive", label_col: Optional[str] = "label") -> Graph:
    return load_graph(os.path.join(directory, EDGE_FILE), os.path.join(directory, FEATURE_FILE),
                      sensitive_col, label_col)
