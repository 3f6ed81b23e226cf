"""Independent reference implementations used as test oracles."""
import itertools

import numpy as np
from scipy.special import expit

from gcfair.graph import Graph


def edge_model_graph(n, gamma, bias, seed, d=5, p=0.5):
    """Graph drawn from P(edge) = sigmoid(cos(x_i, x_j) + gamma * same_group + bias)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    s = (rng.random(n) < p).astype(np.int64)
    u = x / np.linalg.norm(x, axis=1, keepdims=True)
    i, j = np.triu_indices(n, 1)
    logit = (u @ u.T)[i, j] + gamma * (s[i] == s[j]) + bias
    hit = rng.random(len(i)) < expit(logit)
    return Graph(n=n, edges=np.stack([i[hit], j[hit]], 1), features=np.c_[x, s], s_idx=d,
                 labels=rng.integers(0, 2, n))


def ppr_oracle(adj, alpha):
    """Solve (I - (1-alpha) P) r = alpha e_i by dense inversion; rows are sources."""
    a = np.array(adj, dtype=float)
    n = len(a)
    for i in range(n):
        if a[:, i].sum() == 0:
            a[i, i] = 1.0
    p = a / a.sum(axis=0, keepdims=True)
    return (alpha * np.linalg.inv(np.eye(n) - (1 - alpha) * p)).T


def random_graph(rng, n_max=8):
    n = int(rng.integers(1, n_max + 1))
    dens = rng.random()
    pairs = [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < dens]
    feats = np.c_[rng.standard_normal((n, 2)), rng.integers(0, 2, n)]
    return Graph(n=n, edges=np.array(pairs, dtype=np.int64).reshape(-1, 2), features=feats, s_idx=2)


def auroc_brute(probs, labels):
    pos = [p for p, y in zip(probs, labels) if y == 1]
    neg = [p for p, y in zip(probs, labels) if y == 0]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return total / (len(pos) * len(neg))


def flip_fraction_brute(preds):
    """Mean over unordered pairs of the fraction of differing entries."""
    pairs = list(itertools.combinations(range(len(preds)), 2))
    return sum(np.mean(preds[a] != preds[b]) for a, b in pairs) / len(pairs)
