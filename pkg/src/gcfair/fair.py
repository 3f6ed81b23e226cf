"""Siamese fair representation learning over context subgraphs."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import nn as gnn
from .augment import (Augmenter, CounterfactualSet, counterfactual_tensors, decode_with, embed,
                      neighbor_assignments)
from .errors import NonFiniteError
from .graph import Graph, Split
from .ppr import ImportanceMatrix, Subgraph, SubgraphBatch, build_subgraphs

log = logging.getLogger(__name__)

VARIANTS = ("full", "ns", "nn", "np", "nc", "baseline")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.6
    lambda_s: float = 0.4
    mu: float = 1e-5
    lr: float = 1e-3
    epochs: int = 1000
    batch_size: int = 100
    encoder: str = "gcn"
    repr_dim: int = 1024
    k: int = 20
    C: int = 2
    dropout: float = 0.5
    use_sensitive: bool = True
    variant: str = "full"
    center: bool = True
    select: str = "best_val"
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.lambda_s <= 1.0:
            raise ValueError("lambda_s must lie in [0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.encoder not in ("gcn", "sage"):
            raise ValueError(f"encoder must be gcn or sage, got {self.encoder!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.select not in ("best_val", "last"):
            raise ValueError(f"select must be best_val or last, got {self.select!r}")
        if self.C < 1 or self.k < 1 or self.repr_dim < 1:
            raise ValueError("C, k and repr_dim must be positive")

    @property
    def uses_counterfactuals(self) -> bool:
        return self.variant != "baseline" and self.lam > 0

    @property
    def uses_augmenter(self) -> bool:
        return self.uses_counterfactuals and self.variant != "nc"


class FairModel(nn.Module):
    """Subgraph encoder phi and classifier f; z_i is phi's row for the central node."""

    def __init__(self, d: int, s_idx: int, cfg: TrainConfig):
        super().__init__()
        gen = gnn.generator(cfg.seed)
        self.cfg, self.d, self.s_idx = cfg, d, s_idx
        self.in_cols = list(range(d)) if cfg.use_sensitive else [c for c in range(d) if c != s_idx]
        self.phi = gnn.SubgraphEncoder(cfg.encoder, len(self.in_cols), cfg.repr_dim, cfg.repr_dim, gen, cfg.dropout)
        self.classifier = gnn.MLP2(cfg.repr_dim, cfg.repr_dim, gen)
        self.history: list = []
        self.best_epoch: Optional[int] = None

    def represent(self, features, adj, gen=None, share_dim=None) -> torch.Tensor:
        """Central-node representations for batched subgraphs (..., k, d)."""
        x = torch.as_tensor(features, dtype=gnn.DTYPE)[..., self.in_cols]
        a = torch.as_tensor(adj, dtype=gnn.DTYPE)
        return gnn.check_finite(self.phi.central(x, a, gen, share_dim=share_dim), "subgraph encoder")

    def logits(self, z):
        return gnn.check_finite(self.classifier(z), "classifier")


def encode_node(model: FairModel, sub: Subgraph) -> torch.Tensor:
    model.eval()
    with torch.no_grad():
        return model.represent(sub.local_features[None], sub.local_adj[None])[0]


def aggregate_cf(model: FairModel, cfset: CounterfactualSet) -> torch.Tensor:
    if len(cfset) == 0:
        raise ValueError("cannot aggregate an empty counterfactual set")
    return torch.stack([encode_node(model, s) for s in cfset.subgraphs]).mean(0)


def fairness_loss(z, z_self, z_neigh, lambda_s: float, variant: str = "full", center: bool = False) -> torch.Tensor:
    """Batch mean of (1 - lambda_s) d(z, z_self) + lambda_s d(z, z_neigh), d = cosine distance.

    ``ns`` keeps only the neighbour term and ``nn`` only the self term, each at full weight.
    With ``center`` all three are shifted by the batch mean of ``z`` first, so a
    large offset shared by every node cannot make the distances vanish.
    """
    if center:
        offset = z.mean(0, keepdim=True)
        z, z_self, z_neigh = z - offset, z_self - offset, z_neigh - offset
    if variant == "ns":
        return gnn.cosine_distance(z, z_neigh).mean()
    if variant == "nn":
        return gnn.cosine_distance(z, z_self).mean()
    per_node = (1.0 - lambda_s) * gnn.cosine_distance(z, z_self)
    if lambda_s > 0:
        per_node = per_node + lambda_s * gnn.cosine_distance(z, z_neigh)
    return per_node.mean()


class _CounterfactualSource:
    """Builds self/neighbour counterfactual tensors for batches of central nodes."""

    def __init__(self, subgraphs: SubgraphBatch, augmenter: Optional[Augmenter], cfg: TrainConfig):
        self.sub, self.aug, self.cfg = subgraphs, augmenter, cfg
        self.s = subgraphs.sensitive
        self.x = torch.as_tensor(subgraphs.features, dtype=gnn.DTYPE)
        self.a = torch.as_tensor(subgraphs.adj, dtype=gnn.DTYPE)
        flipped = self.s.copy()
        flipped[:, 0] = 1 - flipped[:, 0]
        if cfg.variant == "nc":
            self.self_x, self.self_a = self._raw(np.arange(len(self.s)), flipped)
        else:
            self.h = embed(augmenter, subgraphs.features, subgraphs.adj)
            self.factual = decode_with(augmenter, self.h, self.s)
            target = self.s if cfg.variant == "np" else flipped
            self.self_x, self.self_a = counterfactual_tensors(augmenter, self.x, self.a, self.h, target, self.factual)

    def _raw(self, idx, assignment):
        x = self.x[idx].clone()
        x[..., self.sub.s_idx] = torch.as_tensor(assignment, dtype=gnn.DTYPE)
        return x, self.a[idx].clone()

    def self_set(self, idx):
        return self.self_x[idx], self.self_a[idx]

    def neighbor_set(self, idx, rng):
        """(B, C, k, d) features and (B, C, k, k) adjacency."""
        C = self.cfg.C
        if self.cfg.variant == "np":
            x, a = self.self_x[idx], self.self_a[idx]
            return x.unsqueeze(1).expand(-1, C, -1, -1), a.unsqueeze(1).expand(-1, C, -1, -1)
        assign = neighbor_assignments(self.s[idx], C, rng)
        if self.cfg.variant == "nc":
            x = self.x[idx].unsqueeze(1).repeat(1, C, 1, 1)
            x[..., self.sub.s_idx] = torch.as_tensor(assign, dtype=gnn.DTYPE)
            return x, self.a[idx].unsqueeze(1).expand(-1, C, -1, -1)
        def rep(t):
            return t[idx].unsqueeze(1).expand(-1, C, -1, -1)
        factual = (rep(self.factual[0]), rep(self.factual[1]))
        return counterfactual_tensors(self.aug, rep(self.x), rep(self.a), rep(self.h), assign, factual)


def _bce(logits, y):
    return F.binary_cross_entropy_with_logits(logits, y)


def predict_batch(model: FairModel, subgraphs: SubgraphBatch, idx=None, chunk: int = 1024):
    """Class-1 probabilities and hard labels (p > 0.5) for central nodes of ``subgraphs``."""
    model.eval()
    idx = np.arange(len(subgraphs)) if idx is None else np.asarray(idx)
    out = []
    with torch.no_grad():
        for start in range(0, len(idx), chunk):
            sel = idx[start:start + chunk]
            z = model.represent(subgraphs.features[sel], subgraphs.adj[sel])
            out.append(torch.sigmoid(model.logits(z)))
    probs = torch.cat(out).numpy() if out else np.zeros(0)
    return probs, (probs > 0.5).astype(np.int64)


def predict(model: FairModel, graph: Graph, importance: ImportanceMatrix, nodes=None):
    sub = build_subgraphs(graph, importance, model.cfg.k)
    return predict_batch(model, sub, nodes)


def train_fair(graph: Graph, split: Split, importance: ImportanceMatrix, augmenter: Optional[Augmenter],
               cfg: TrainConfig, subgraphs: Optional[SubgraphBatch] = None) -> FairModel:
    """Minimize L_p + lambda L_f + mu ||theta||^2 with Adam; keep the best-validation-accuracy state."""
    if graph.labels is None:
        raise ValueError("training requires node labels")
    if cfg.uses_augmenter and augmenter is None:
        raise ValueError(f"variant {cfg.variant!r} needs a pretrained augmenter")
    sub = subgraphs if subgraphs is not None else build_subgraphs(graph, importance, cfg.k)
    model = FairModel(graph.d, graph.s_idx, cfg)
    params = list(model.parameters())
    opt = gnn.Adam(params, lr=cfg.lr)
    gen = gnn.generator(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    cf = _CounterfactualSource(sub, augmenter, cfg) if cfg.uses_counterfactuals else None
    x_all = torch.as_tensor(sub.features, dtype=gnn.DTYPE)
    a_all = torch.as_tensor(sub.adj, dtype=gnn.DTYPE)
    y_all = torch.tensor(graph.labels, dtype=gnn.DTYPE)
    train = np.asarray(split.train)
    best_acc, best_state = -1.0, None

    for epoch in range(cfg.epochs):
        model.train()
        order = train[rng.permutation(len(train))]
        tot = {"L_p": 0.0, "L_f": 0.0, "L": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:  # batch-norm needs two rows
                continue
            l_f = torch.zeros((), dtype=gnn.DTYPE)
            if cf is None:
                z = model.represent(x_all[idx], a_all[idx], gen)
            else:
                # original, self and C neighbour variants share one dropout mask per node
                xs, as_ = cf.self_set(idx)
                xn, an = cf.neighbor_set(idx, rng)
                xx = torch.cat([x_all[idx].unsqueeze(1), xs.unsqueeze(1), xn], dim=1)
                aa = torch.cat([a_all[idx].unsqueeze(1), as_.unsqueeze(1), an], dim=1)
                zz = model.represent(xx, aa, gen, share_dim=1)
                z, z_self, z_neigh = zz[:, 0], zz[:, 1], zz[:, 2:].mean(1)
                l_f = fairness_loss(z, z_self, z_neigh, cfg.lambda_s, cfg.variant, cfg.center)
            l_p = _bce(model.logits(z), y_all[idx])
            loss = l_p
            if cf is not None:
                loss = loss + cfg.lam * l_f
            if cfg.mu:
                loss = loss + cfg.mu * gnn.l2_penalty(params)
            if not torch.isfinite(loss):
                raise NonFiniteError("fair training loss", f"epoch {epoch}, L_p={l_p.item()}, L_f={l_f.item()}")
            grads = torch.autograd.grad(loss, params)
            opt.step(grads)
            w = len(idx) / len(order)
            tot["L_p"] += w * l_p.item()
            tot["L_f"] += w * l_f.item()
            tot["L"] += w * loss.item()

        _, pred = predict_batch(model, sub, split.valid)
        acc = float((pred == graph.labels[split.valid]).mean()) if len(split.valid) else 0.0
        model.history.append({"epoch": epoch, **tot, "val_acc": acc})
        if acc > best_acc:
            best_acc, best_state = acc, copy.deepcopy(model.state_dict())
            model.best_epoch = epoch
    if cfg.select == "best_val" and best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return model


def save_model(model: FairModel, path: str) -> None:
    header = {"kind": "fair_model", "config": asdict(model.cfg), "d": model.d, "s_idx": model.s_idx}
    gnn.save_checkpoint(path, gnn.module_state(model), header)


def load_model(path: str) -> FairModel:
    header, tensors = gnn.load_checkpoint(path)
    if header.get("kind") != "fair_model":
        raise ValueError(f"{path} is not a fair-model checkpoint")
    model = FairModel(header["d"], header["s_idx"], TrainConfig(**header["config"]))
    gnn.load_module_state(model, tensors)
    model.eval()
    return model


def write_predictions(path: str, nodes, probs, labels) -> None:
    with open(path, "w") as fh:
        fh.write("node_id,prob,label\n")
        for i, p, l in zip(nodes, probs, labels):
            fh.write(f"{int(i)},{float(p)!r},{int(l)}\n")
