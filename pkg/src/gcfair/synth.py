"""Synthetic causal graph generator and a fitted causal model for counterfactual graphs.

Two sources of ground-truth counterfactuals:

* ``generate_synthetic`` / ``true_counterfactual`` for graphs drawn from a
  known structural model (sensitive bit -> features, edges, labels).
* ``fit_causal_model`` / ``cf_features`` / ``cf_graph`` for arbitrary graphs,
  using group-mean feature shifts and a logistic edge model with a
  same-group bonus ``gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit, log_expit

from .errors import ConvergenceError, GraphFormatError
from .graph import Graph

RHO_SAMPLE_PAIRS = 10_000
FULL_PAIR_LIMIT = 5000
_STREAMS = ("params", "sensitive", "latent", "rho", "edges")


def _streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(_STREAMS, children)}


@dataclass(frozen=True)
class SyntheticParams:
    """Parameters of the synthetic structural model.

    The random vectors ``w``, ``v`` and ``feature_mask`` are drawn once from
    ``seed`` by :meth:`sample` and then stored, so regenerating the data under
    an intervention reuses them exactly.
    """

    n: int = 2000
    p: float = 0.4
    d_z: int = 50
    d: int = 25
    a: float = 0.01
    w_s: float = 0.5
    target_avg_degree: Optional[float] = 5.12
    seed: int = 0
    w: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    feature_mask: np.ndarray = field(default=None, repr=False)
    rho: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not 1 <= self.d <= self.d_z:
            raise ValueError(f"need 1 <= d <= d_z, got d={self.d}, d_z={self.d_z}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.feature_mask is not None:
            m = np.asarray(self.feature_mask)
            if len(m) != self.d or len(set(m.tolist())) != self.d or m.min() < 0 or m.max() >= self.d_z:
                raise ValueError("feature_mask must hold d distinct indices in [0, d_z)")

    @classmethod
    def sample(cls, **kw) -> "SyntheticParams":
        base = cls(**kw)
        rng = _streams(base.seed)["params"]
        mask = np.sort(rng.choice(base.d_z, size=base.d, replace=False))
        v = rng.standard_normal(base.d)
        w = rng.standard_normal(base.d_z)
        return replace(
            base,
            w=base.w if base.w is not None else w,
            v=base.v if base.v is not None else v,
            feature_mask=base.feature_mask if base.feature_mask is not None else mask,
        )

    @property
    def complete(self) -> bool:
        return self.w is not None and self.v is not None and self.feature_mask is not None

    def to_dict(self) -> dict:
        out = {}
        for k in ("n", "p", "d_z", "d", "a", "w_s", "target_avg_degree", "seed", "rho"):
            out[k] = getattr(self, k)
        for k in ("w", "v", "feature_mask"):
            val = getattr(self, k)
            out[k] = None if val is None else np.asarray(val).tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticParams":
        kw = dict(d)
        for k in ("w", "v"):
            if kw.get(k) is not None:
                kw[k] = np.asarray(kw[k], dtype=np.float64)
        if kw.get("feature_mask") is not None:
            kw["feature_mask"] = np.asarray(kw["feature_mask"], dtype=np.int64)
        return cls(**kw)


def _cosine_matrix(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    u = m / norms[:, None]
    return u @ u.T


def _pair_logits(cos: np.ndarray, s: np.ndarray, iu, a: float) -> np.ndarray:
    same = (s[iu[0]] == s[iu[1]]).astype(np.float64)
    return cos[iu] + a * same


def _draw_factual(params: SyntheticParams):
    st = _streams(params.seed)
    s = (st["sensitive"].random(params.n) < params.p).astype(np.int64)
    z = st["latent"].standard_normal((params.n, params.d_z))
    return s, z


def resolve_rho(params: SyntheticParams, z: np.ndarray) -> float:
    """Density factor so the expected average degree hits ``target_avg_degree``.

    Estimated on the factual data from ``RHO_SAMPLE_PAIRS`` random pairs.
    """
    if params.rho is not None:
        return float(params.rho)
    if params.target_avg_degree is None or params.n < 2:
        return 1.0
    s, _ = _draw_factual(params)
    rng = _streams(params.seed)["rho"]
    i = rng.integers(0, params.n, RHO_SAMPLE_PAIRS)
    j = rng.integers(0, params.n - 1, RHO_SAMPLE_PAIRS)
    j = j + (j >= i)  # uniform over j != i
    zi, zj = z[i], z[j]
    cos = np.einsum("ij,ij->i", zi, zj) / (np.linalg.norm(zi, axis=1) * np.linalg.norm(zj, axis=1))
    mean_p = expit(cos + params.a * (s[i] == s[j])).mean()
    return float(params.target_avg_degree / ((params.n - 1) * mean_p))


def _realize(params: SyntheticParams, z: np.ndarray, s: np.ndarray) -> Graph:
    n = params.n
    mask = np.asarray(params.feature_mask)
    x = z[:, mask] + s[:, None] * np.asarray(params.v)[None, :]
    rho = resolve_rho(params, z)

    iu = np.triu_indices(n, k=1)
    # common random numbers: the same uniform per pair for every intervention
    u = _streams(params.seed)["edges"].random(len(iu[0]))
    prob = np.minimum(1.0, rho * expit(_pair_logits(_cosine_matrix(z), s, iu, params.a)))
    hit = u < prob
    edges = np.stack([iu[0][hit], iu[1][hit]], axis=1)

    score = z @ np.asarray(params.w)
    # neighbour mean over N(i) plus i itself
    deg = np.ones(n)
    tot = s.astype(np.float64).copy()
    np.add.at(deg, edges[:, 0], 1.0)
    np.add.at(deg, edges[:, 1], 1.0)
    np.add.at(tot, edges[:, 0], s[edges[:, 1]])
    np.add.at(tot, edges[:, 1], s[edges[:, 0]])
    score = score + params.w_s * tot / deg
    y = (score > score.mean()).astype(np.int64)

    feats = np.concatenate([x, s[:, None].astype(np.float64)], axis=1)
    names = tuple(f"x{c}" for c in range(params.d)) + ("sensitive",)
    return Graph(n=n, edges=edges, features=feats, s_idx=params.d, labels=y, feature_names=names)


def generate_synthetic(params: SyntheticParams) -> tuple[Graph, np.ndarray]:
    """Draw a factual graph and its latent matrix ``Z`` (n x d_z)."""
    if not params.complete:
        params = SyntheticParams.sample(**{k: getattr(params, k) for k in
                                           ("n", "p", "d_z", "d", "a", "w_s", "target_avg_degree", "seed", "rho")})
    s, z = _draw_factual(params)
    return _realize(params, z, s), z


def calibrated(params: SyntheticParams) -> SyntheticParams:
    """Return params with sampled vectors and ``rho`` filled in."""
    if not params.complete:
        params = SyntheticParams.sample(**{k: getattr(params, k) for k in
                                           ("n", "p", "d_z", "d", "a", "w_s", "target_avg_degree", "seed", "rho")})
    _, z = _draw_factual(params)
    return replace(params, rho=resolve_rho(params, z))


def true_counterfactual(params: SyntheticParams, z: np.ndarray, assignment) -> Graph:
    """Regenerate features, edges and labels from ``z`` with sensitive values set to ``assignment``."""
    if not params.complete:
        params = calibrated(params)
    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(assignment).astype(np.int64)
    if z.shape != (params.n, params.d_z) or s.shape != (params.n,):
        raise ValueError(f"dimension mismatch: Z {z.shape}, assignment {s.shape}, expected n={params.n}, d_z={params.d_z}")
    if not np.isin(s, (0, 1)).all():
        raise ValueError("assignment must be binary")
    return _realize(params, z, s)


# ---------------------------------------------------------------------------
# fitted causal model for arbitrary graphs


@dataclass(frozen=True)
class CausalModelFit:
    group_means: tuple  # (mean | S=0, mean | S=1) over non-sensitive columns
    gamma: float
    bias: float
    iterations: int = 0
    log_likelihood: float = float("nan")


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    return m / np.where(norms > 0, norms, 1.0)[:, None]


def _pair_sample(graph: Graph, seed: int):
    """Pairs (i, j) and indicators used in the edge likelihood."""
    n = graph.n
    if n <= FULL_PAIR_LIMIT:
        i, j = np.triu_indices(n, k=1)
        a = np.asarray(graph.adjacency[i, j]).ravel()
        return i, j, a
    rng = np.random.default_rng(seed)
    m = graph.num_pairs
    existing = set((graph.edges[:, 0] * n + graph.edges[:, 1]).tolist())
    neg = []
    while len(neg) < m:
        a = rng.integers(0, n, 2 * m)
        b = rng.integers(0, n, 2 * m)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        for p, q in zip(lo, hi):
            if p != q and p * n + q not in existing:
                neg.append((p, q))
                if len(neg) == m:
                    break
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 2)
    i = np.r_[graph.edges[:, 0], neg[:, 0]]
    j = np.r_[graph.edges[:, 1], neg[:, 1]]
    a = np.r_[np.ones(m), np.zeros(len(neg))]
    return i, j, a


def edge_log_likelihood(cos, same, a, gamma, bias) -> float:
    t = cos + gamma * same + bias
    return float(np.sum(a * log_expit(t) + (1 - a) * log_expit(-t)))


def fit_edge_model(cos, same, a, tol: float = 1e-6, max_iter: int = 200, trace: Optional[list] = None):
    """Newton ascent over (gamma, bias) with step halving; returns (gamma, bias, iters, ll).

    ``trace`` (if given) receives the log-likelihood after every iteration.
    """
    dens = np.clip(a.mean(), 1e-9, 1 - 1e-9)
    theta = np.array([0.0, np.log(dens / (1 - dens)) - cos.mean()])
    ll = edge_log_likelihood(cos, same, a, *theta)
    feats = np.stack([same, np.ones_like(same)], axis=1)
    for it in range(1, max_iter + 1):
        p = expit(cos + feats @ theta)
        grad = feats.T @ (a - p)
        w = p * (1 - p)
        hess = -(feats * w[:, None]).T @ feats
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta + t * step
            cand_ll = edge_log_likelihood(cos, same, a, *cand)
            if cand_ll >= ll or t < 1e-10:
                break
            t *= 0.5
        delta = np.max(np.abs(cand - theta))
        if cand_ll >= ll:
            theta, ll = cand, cand_ll
        if trace is not None:
            trace.append(ll)
        if not np.all(np.isfinite(theta)):
            raise ConvergenceError("edge model diverged", last_iterate=tuple(theta))
        if delta < tol:
            return float(theta[0]), float(theta[1]), it, ll
    raise ConvergenceError(f"edge model did not converge in {max_iter} iterations", last_iterate=tuple(theta))


def fit_causal_model(graph: Graph, seed: int = 0) -> CausalModelFit:
    s = graph.sensitive
    if (s == 0).sum() == 0 or (s == 1).sum() == 0:
        raise GraphFormatError("both sensitive groups must be non-empty to fit the causal model")
    x = graph.nonsensitive
    means = (x[s == 0].mean(axis=0), x[s == 1].mean(axis=0))
    i, j, a = _pair_sample(graph, seed)
    u = _unit_rows(x)
    cos = np.einsum("ij,ij->i", u[i], u[j])
    same = (s[i] == s[j]).astype(np.float64)
    gamma, bias, iters, ll = fit_edge_model(cos, same, a)
    return CausalModelFit(group_means=means, gamma=gamma, bias=bias, iterations=iters, log_likelihood=ll)


def cf_features(graph: Graph, assignment, fit: CausalModelFit) -> np.ndarray:
    """Shift non-sensitive features of flipped nodes by the group-mean difference."""
    s_new = np.asarray(assignment).astype(np.int64)
    if s_new.shape != (graph.n,):
        raise ValueError(f"assignment must have length {graph.n}")
    s_old = graph.sensitive
    diff = np.asarray(fit.group_means[1]) - np.asarray(fit.group_means[0])
    x = np.array(graph.features, dtype=np.float64)
    rest = [c for c in range(graph.d) if c != graph.s_idx]
    if diff.shape != (len(rest),):
        raise ValueError("fit does not match the graph's feature dimension")
    sign = (s_new - s_old).astype(np.float64)
    flipped = sign != 0
    x[np.ix_(flipped, rest)] += sign[flipped, None] * diff[None, :]
    x[:, graph.s_idx] = s_new
    return x


ROW_BLOCK = 256


def cf_graph(graph: Graph, assignment, fit: CausalModelFit, seed: int = 0) -> Graph:
    """Counterfactual graph under the fitted model.

    Each pair's latent uniform is abducted from the observed edge indicator
    (``U ~ U(0, p)`` for an edge, ``U ~ U(p, 1)`` otherwise), then the edge is
    re-decided against the counterfactual probability. Pairs whose probability
    does not change keep their factual status, so the null intervention
    reproduces the observed graph exactly.
    """
    s_old = graph.sensitive
    s_new = np.asarray(assignment).astype(np.int64)
    feats = cf_features(graph, s_new, fit)
    rest = [c for c in range(graph.d) if c != graph.s_idx]
    u_old = _unit_rows(graph.features[:, rest])
    u_new = _unit_rows(feats[:, rest])
    adj = graph.adjacency
    n = graph.n
    kept = []
    for start in range(0, n, ROW_BLOCK):
        rows = np.arange(start, min(start + ROW_BLOCK, n))
        rng = np.random.default_rng([seed, start])
        cos_o = u_old[rows] @ u_old.T
        cos_n = u_new[rows] @ u_new.T
        p_o = expit(cos_o + fit.gamma * (s_old[rows, None] == s_old[None, :]) + fit.bias)
        p_n = expit(cos_n + fit.gamma * (s_new[rows, None] == s_new[None, :]) + fit.bias)
        a_o = adj[rows].toarray() > 0
        r = rng.random(p_o.shape)
        u = np.where(a_o, r * p_o, p_o + r * (1.0 - p_o))
        a_n = np.where(p_n == p_o, a_o, u < p_n)
        upper = rows[:, None] < np.arange(n)[None, :]
        bi, bj = np.nonzero(a_n & upper)
        kept.append(np.stack([rows[bi], bj], axis=1))
    edges = np.concatenate(kept) if kept else np.zeros((0, 2), dtype=np.int64)
    return graph.with_sensitive(s_new, features=feats, edges=edges)
