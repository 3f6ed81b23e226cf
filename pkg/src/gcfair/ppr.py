"""Personalized-PageRank importance scores and top-k context subgraphs."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph


@dataclass(frozen=True, eq=False)
class ImportanceMatrix:
    """Row ``i`` holds the importance of every node for source ``i``."""

    rows: sp.csr_matrix
    alpha: float
    tol: float

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.rows[i].toarray().ravel()


def transition_matrix(graph: Graph) -> sp.csr_matrix:
    """Column-normalized adjacency; zero-degree nodes get a self-loop here only."""
    a = graph.adjacency.astype(np.float64).tolil()
    deg = np.asarray(a.sum(axis=0)).ravel()
    for i in np.flatnonzero(deg == 0):
        a[i, i] = 1.0
    a = a.tocsr()
    deg = np.asarray(a.sum(axis=0)).ravel()
    return (a @ sp.diags(1.0 / deg)).tocsr()


def dense_ppr(graph: Graph, alpha: float) -> np.ndarray:
    """Direct solve of (I - (1-alpha) P) r = alpha e_i for every source; rows are sources."""
    p = transition_matrix(graph).toarray()
    m = np.eye(graph.n) - (1.0 - alpha) * p
    return np.linalg.solve(m, alpha * np.eye(graph.n)).T


def ppr_dense_iterative(graph: Graph, alpha: float = 0.15, tol: float = 1e-6,
                        max_hops: Optional[int] = None) -> np.ndarray:
    """Power iteration for all sources at once; returns the unsparsified (n, n) matrix."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = transition_matrix(graph)
    n = graph.n
    # columns are sources: R^T = alpha I + (1-alpha) P R^T
    seed = alpha * np.eye(n)
    r = seed.copy()
    # geometric tail: error after a step <= change * (1-alpha) / alpha
    stop = tol * alpha / (1.0 - alpha)
    hops = 0
    while True:
        nxt = seed + (1.0 - alpha) * (p @ r)
        change = np.abs(nxt - r).max()
        r = nxt
        hops += 1
        if change < stop or (max_hops is not None and hops >= max_hops):
            break
    return r.T


def ppr_scores(graph: Graph, alpha: float = 0.15, tol: float = 1e-6,
               max_hops: Optional[int] = None) -> ImportanceMatrix:
    dense = ppr_dense_iterative(graph, alpha, tol, max_hops)
    dense[dense < tol / max(graph.n, 1)] = 0.0
    return ImportanceMatrix(sp.csr_matrix(dense), float(alpha), float(tol))


@dataclass(frozen=True, eq=False)
class Subgraph:
    central: int
    nodes: np.ndarray  # original ids; nodes[0] == central
    local_features: np.ndarray
    local_adj: np.ndarray
    local_sensitive: np.ndarray
    s_idx: int

    @property
    def k(self) -> int:
        return len(self.nodes)

    @property
    def central_local(self) -> int:
        return 0

    def local_index(self, node: int) -> int:
        hit = np.flatnonzero(self.nodes == node)
        if not len(hit):
            raise KeyError(node)
        return int(hit[0])

    def with_sensitive(self, values, features=None, adj=None) -> "Subgraph":
        feats = np.array(self.local_features if features is None else features, dtype=np.float64)
        values = np.asarray(values).astype(np.int64)
        feats[:, self.s_idx] = values
        return Subgraph(self.central, self.nodes, feats,
                        self.local_adj if adj is None else np.asarray(adj, dtype=np.float64),
                        values, self.s_idx)


def top_k_nodes(scores: np.ndarray, central: int, k: int) -> np.ndarray:
    """Central node first, then the ``k-1`` best others by score, ties to the lower id."""
    n = len(scores)
    others = np.delete(np.arange(n), central)
    # lexsort: last key primary
    order = np.lexsort((others, -scores[others]))
    return np.r_[central, others[order[: max(k - 1, 0)]]].astype(np.int64)


def extract_subgraph(graph: Graph, importance: ImportanceMatrix, central: int, k: int) -> Subgraph:
    if k < 1:
        raise ValueError("k must be >= 1")
    nodes = top_k_nodes(importance.row(central), central, min(k, graph.n))
    return _induce(graph, central, nodes)


def _induce(graph: Graph, central: int, nodes: np.ndarray) -> Subgraph:
    adj = graph.adjacency[nodes][:, nodes].toarray()
    feats = np.array(graph.features[nodes])
    return Subgraph(int(central), nodes, feats, adj, graph.sensitive[nodes].copy(), graph.s_idx)


def sensitive_summary(sub: Subgraph) -> float:
    return float(np.mean(sub.local_sensitive))


@dataclass(frozen=True, eq=False)
class SubgraphBatch:
    """All context subgraphs of a graph, stacked for vectorized encoding.

    ``nodes`` is (n, k), ``adj`` is (n, k, k) and ``features`` is (n, k, d),
    all gathered from the graph the batch was built on.
    """

    nodes: np.ndarray
    adj: np.ndarray
    features: np.ndarray
    sensitive: np.ndarray
    s_idx: int

    @property
    def k(self) -> int:
        return self.nodes.shape[1]

    def __len__(self):
        return self.nodes.shape[0]

    def subgraph(self, i: int) -> Subgraph:
        return Subgraph(int(self.nodes[i, 0]), self.nodes[i].copy(), self.features[i].copy(),
                        self.adj[i].copy(), self.sensitive[i].copy(), self.s_idx)

    def take(self, idx) -> "SubgraphBatch":
        idx = np.asarray(idx)
        return SubgraphBatch(self.nodes[idx], self.adj[idx], self.features[idx], self.sensitive[idx], self.s_idx)

    @classmethod
    def stack(cls, subs) -> "SubgraphBatch":
        subs = list(subs)
        return cls(np.stack([s.nodes for s in subs]), np.stack([s.local_adj for s in subs]),
                   np.stack([s.local_features for s in subs]),
                   np.stack([s.local_sensitive for s in subs]), subs[0].s_idx)


def build_subgraphs(graph: Graph, importance: ImportanceMatrix, k: int) -> SubgraphBatch:
    """Context subgraph of every node."""
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, graph.n)
    n = graph.n
    dense = importance.rows.toarray()
    dense[np.arange(n), np.arange(n)] = np.inf  # central always first
    ids = np.broadcast_to(np.arange(n), (n, n))
    # primary key -score, secondary id
    order = np.lexsort((ids, -dense), axis=1)[:, :k]
    adj_full = graph.adjacency
    adj = np.zeros((n, k, k))
    for i in range(n):
        nodes = order[i]
        adj[i] = adj_full[nodes][:, nodes].toarray()
    feats = graph.features[order]
    return SubgraphBatch(order.astype(np.int64), adj, feats, graph.sensitive[order], graph.s_idx)


# on-disk cache: header then (i, j, value) triplets
_MAGIC = b"PPRT"


def save_importance(imp: ImportanceMatrix, path: str) -> None:
    coo = imp.rows.tocoo()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qddq", imp.n, imp.alpha, imp.tol, coo.nnz))
        rec = np.zeros(coo.nnz, dtype=[("i", "<i8"), ("j", "<i8"), ("v", "<f8")])
        rec["i"], rec["j"], rec["v"] = coo.row, coo.col, coo.data
        fh.write(rec.tobytes())


def load_importance(path: str) -> ImportanceMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not an importance cache file")
        n, alpha, tol, nnz = struct.unpack("<qddq", fh.read(32))
        rec = np.frombuffer(fh.read(), dtype=[("i", "<i8"), ("j", "<i8"), ("v", "<f8")], count=nnz)
    rows = sp.csr_matrix((rec["v"], (rec["i"], rec["j"])), shape=(n, n))
    return ImportanceMatrix(rows, alpha, tol)


def cached_ppr_scores(graph: Graph, cache_dir: str, alpha: float = 0.15, tol: float = 1e-6) -> ImportanceMatrix:
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"ppr_{graph.fingerprint()}_{alpha!r}_{tol!r}.bin")
    if os.path.exists(path):
        return load_importance(path)
    imp = ppr_scores(graph, alpha, tol)
    save_importance(imp, path)
    return imp
