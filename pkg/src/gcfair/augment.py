"""Counterfactual subgraph generator: a GraphVAE whose latent codes are adversarially
stripped of the subgraph's sensitive-attribute summary, decoded under
interventions on the sensitive bits."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import nn as gnn
from .errors import NonFiniteError, NotTrainedError
from .ppr import Subgraph, SubgraphBatch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmenterConfig:
    beta: float = 10.0
    bins: int = 4
    latent_dim: int = 32
    hidden_dim: int = 64
    epochs: int = 100
    lr: float = 1e-3
    C: int = 2
    batch_size: int = 100
    recon_weight: float = 5.0
    mode: str = "residual"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("residual", "reconstruction"):
            raise ValueError(f"mode must be 'residual' or 'reconstruction', got {self.mode!r}")
        if self.recon_weight <= 0:
            raise ValueError("recon_weight must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.C < 1:
            raise ValueError("C must be >= 1")


def bin_index(summary, bins: int):
    """Uniform bins over [0, 1]; 1.0 falls in the last bin."""
    s = np.asarray(summary, dtype=np.float64)
    return np.minimum((s * bins).astype(np.int64), bins - 1)


class Augmenter(nn.Module):
    def __init__(self, d: int, s_idx: int, cfg: AugmenterConfig):
        super().__init__()
        gen = gnn.generator(cfg.seed)
        self.d, self.s_idx, self.cfg = d, s_idx, cfg
        h, z = cfg.hidden_dim, cfg.latent_dim
        self.enc = gnn.GraphConv("gcn", d, h, gen)
        self.enc_mean = gnn.GraphConv("gcn", h, z, gen)
        self.enc_logvar = gnn.GraphConv("gcn", h, z, gen)
        self.feat1 = gnn.Linear(z + 1, h, gen)
        self.feat2 = gnn.Linear(h, d - 1, gen)
        self.edge1 = gnn.Linear(z + 1, h, gen)
        self.edge2 = gnn.Linear(h, z, gen)
        self.edge_bias = nn.Parameter(torch.zeros((), dtype=gnn.DTYPE))
        self.disc = nn.Sequential(gnn.Linear(z, h, gen), nn.ReLU(), gnn.Linear(h, cfg.bins, gen))
        self.trained = False
        self.history: List[dict] = []

    # parameter groups for the alternating updates
    def vae_parameters(self):
        return [p for n, p in self.named_parameters() if not n.startswith("disc.")]

    def disc_parameters(self):
        return list(self.disc.parameters())

    @property
    def rest_cols(self):
        return [c for c in range(self.d) if c != self.s_idx]

    def encode(self, x, adj):
        norm = gnn.gcn_norm(adj)
        h = self.enc(x, adj, activation=True, norm=norm)
        return self.enc_mean(h, adj, False, norm), self.enc_logvar(h, adj, False, norm)

    def decode(self, h, s):
        """Non-sensitive feature means and adjacency logits given codes and sensitive bits."""
        hs = torch.cat([h, s.unsqueeze(-1).to(gnn.DTYPE)], dim=-1)
        x_hat = self.feat2(torch.relu(self.feat1(hs)))
        e = self.edge2(torch.relu(self.edge1(hs)))
        return x_hat, e @ e.transpose(-1, -2) + self.edge_bias

    def discriminate(self, h):
        return self.disc(h.mean(dim=-2))

    def assemble(self, x_hat, logits, s):
        """Decoded subgraph tensors: features with sensitive column ``s``, binary adjacency."""
        k = logits.shape[-1]
        x = torch.empty(x_hat.shape[:-1] + (self.d,), dtype=gnn.DTYPE)
        x[..., self.rest_cols] = x_hat
        x[..., self.s_idx] = s.to(gnn.DTYPE)
        adj = (logits > 0).to(gnn.DTYPE)  # sigmoid(l) > 0.5
        adj = torch.maximum(adj, adj.transpose(-1, -2)) * (1 - torch.eye(k, dtype=gnn.DTYPE))
        return x, adj


def reconstruction_loss(model: Augmenter, x, adj, gen, sample=True):
    """Per-node negative ELBO averaged over nodes, plus the sampled codes."""
    mean, logvar = model.encode(x, adj)
    h = mean + torch.exp(0.5 * logvar) * torch.randn(mean.shape, generator=gen, dtype=gnn.DTYPE) if sample else mean
    s = x[..., model.s_idx]
    x_hat, logits = model.decode(h, s)
    feat = model.cfg.recon_weight * ((x_hat - x[..., model.rest_cols]) ** 2).sum(-1).mean()
    k = adj.shape[-1]
    off = 1 - torch.eye(k, dtype=gnn.DTYPE)
    bce = F.binary_cross_entropy_with_logits(logits, adj, weight=off.expand_as(adj), reduction="none")
    edge = bce.sum(-1).mean()
    kl = gnn.gaussian_kl(mean, logvar).mean()
    return feat + edge + kl, {"feature": feat, "edge": edge, "kl": kl}, h


def train_augmenter(subgraphs: SubgraphBatch, cfg: AugmenterConfig = AugmenterConfig()) -> Augmenter:
    """Alternating optimization: VAE step on L_r + beta * L_d with the discriminator
    frozen, then a discriminator step on its cross-entropy with the VAE frozen."""
    n, k = len(subgraphs), subgraphs.k
    d = subgraphs.features.shape[-1]
    model = Augmenter(d, subgraphs.s_idx, cfg)
    gen = gnn.generator(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    x_all = torch.as_tensor(subgraphs.features, dtype=gnn.DTYPE)
    a_all = torch.as_tensor(subgraphs.adj, dtype=gnn.DTYPE)
    target_all = torch.as_tensor(bin_index(subgraphs.sensitive.mean(axis=1), cfg.bins))
    opt_vae = gnn.Adam(model.vae_parameters(), lr=cfg.lr)
    opt_disc = gnn.Adam(model.disc_parameters(), lr=cfg.lr)
    vae_params, disc_params = model.vae_parameters(), model.disc_parameters()
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = {"L_r": 0.0, "L_d": 0.0, "disc_ce": 0.0, "kl": 0.0}
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[start:start + cfg.batch_size])
            x, a, target = x_all[idx], a_all[idx], target_all[idx]

            l_r, parts, h = reconstruction_loss(model, x, a, gen)
            l_d = -F.cross_entropy(model.discriminate(h), target)
            loss = l_r + cfg.beta * l_d if cfg.beta > 0 else l_r
            if not torch.isfinite(loss):
                raise NonFiniteError("augmenter loss", f"epoch {epoch}, batch at {start}")
            grads = torch.autograd.grad(loss, vae_params)
            opt_vae.step(grads)

            disc_ce = F.cross_entropy(model.discriminate(h.detach()), target)
            if not torch.isfinite(disc_ce):
                raise NonFiniteError("discriminator loss", f"epoch {epoch}, batch at {start}")
            grads = torch.autograd.grad(disc_ce, disc_params)
            opt_disc.step(grads)

            w = len(idx) / n
            sums["L_r"] += w * l_r.item()
            sums["L_d"] += w * l_d.item()
            sums["disc_ce"] += w * disc_ce.item()
            sums["kl"] += w * parts["kl"].item()
        with torch.no_grad():  # noise-free progress signal: mean codes over the full set
            sums["L_r_mean"] = reconstruction_loss(model, x_all, a_all, None, sample=False)[0].item()
        model.history.append({"epoch": epoch, **sums})
        if epoch % 20 == 0 or epoch == cfg.epochs - 1:
            log.debug("augmenter epoch %d: %s", epoch, sums)
    model.eval()
    model.trained = True
    return model


def _require_trained(aug: Augmenter):
    if aug is None or not getattr(aug, "trained", False):
        raise NotTrainedError("augmenter has not been trained")


@torch.no_grad()
def embed(aug: Augmenter, features, adj) -> torch.Tensor:
    """Latent means of (batched) subgraphs under their factual sensitive values."""
    _require_trained(aug)
    mean, _ = aug.encode(torch.as_tensor(features, dtype=gnn.DTYPE), torch.as_tensor(adj, dtype=gnn.DTYPE))
    return mean


@torch.no_grad()
def decode_with(aug: Augmenter, h: torch.Tensor, sensitive) -> tuple:
    """Decode codes ``h`` (..., k, z) with sensitive bits ``sensitive`` (..., k)."""
    _require_trained(aug)
    s = torch.as_tensor(np.asarray(sensitive), dtype=gnn.DTYPE)
    x_hat, logits = aug.decode(h, s)
    return aug.assemble(x_hat, logits, s)


@torch.no_grad()
def counterfactual_tensors(aug: Augmenter, x, adj, h, sensitive, factual=None):
    """Counterfactual (features, adjacency) of batched subgraphs under ``sensitive``.

    In ``reconstruction`` mode this is the decoder output itself. In
    ``residual`` mode each node keeps its reconstruction residual: features
    move by the decoder's change between factual and intervened bits, and an
    edge is rewritten only where the decoder's edge decision changes. The
    null intervention then returns the input unchanged.

    ``factual`` may carry a precomputed ``decode_with(aug, h, factual_bits)``.
    """
    cf_x, cf_a = decode_with(aug, h, sensitive)
    if aug.cfg.mode == "reconstruction":
        return cf_x, cf_a
    x = torch.as_tensor(x, dtype=gnn.DTYPE)
    adj = torch.as_tensor(adj, dtype=gnn.DTYPE)
    if factual is None:
        factual = decode_with(aug, h, x[..., aug.s_idx])
    f_x, f_a = factual
    out_x = x + (cf_x - f_x)
    out_x[..., aug.s_idx] = cf_x[..., aug.s_idx]
    out_a = torch.where(cf_a != f_a, cf_a, adj)
    return out_x, out_a


def reconstruct(aug: Augmenter, sub: Subgraph, sensitive_override) -> Subgraph:
    _require_trained(aug)
    override = np.asarray(sensitive_override).astype(np.int64)
    if override.shape != (sub.k,):
        raise ValueError(f"override must have length {sub.k}")
    h = embed(aug, sub.local_features[None], sub.local_adj[None])
    x, a = counterfactual_tensors(aug, sub.local_features[None], sub.local_adj[None], h, override[None])
    return Subgraph(sub.central, sub.nodes.copy(), x[0].numpy(), a[0].numpy(), override, sub.s_idx)


@dataclass
class CounterfactualSet:
    kind: str
    subgraphs: list
    assignments: list
    degenerate: bool = False

    def __len__(self):
        return len(self.subgraphs)


def self_perturb(aug: Augmenter, sub: Subgraph) -> CounterfactualSet:
    s = sub.local_sensitive.copy()
    s[0] = 1 - s[0]
    return CounterfactualSet("self", [reconstruct(aug, sub, s)], [s])


def neighbor_assignments(sensitive: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    """(..., C, k) assignments: fair coin for every non-central bit, central kept."""
    sensitive = np.asarray(sensitive)
    shape = sensitive.shape[:-1] + (C, sensitive.shape[-1])
    out = rng.integers(0, 2, size=shape)
    out[..., 0] = sensitive[..., None, 0]
    return out


def neighbor_perturb(aug: Augmenter, sub: Subgraph, C: int, seed: int) -> CounterfactualSet:
    if sub.k < 2:
        log.warning("neighbor perturbation needs k >= 2; returning an empty set")
        return CounterfactualSet("neighbor", [], [], degenerate=True)
    assigns = neighbor_assignments(sub.local_sensitive, C, np.random.default_rng(seed))
    return CounterfactualSet("neighbor", [reconstruct(aug, sub, a) for a in assigns], list(assigns))


def save_augmenter(aug: Augmenter, path: str) -> None:
    _require_trained(aug)
    header = {"kind": "augmenter", "config": asdict(aug.cfg), "d": aug.d, "s_idx": aug.s_idx}
    gnn.save_checkpoint(path, gnn.module_state(aug), header)


def load_augmenter(path: str) -> Augmenter:
    header, tensors = gnn.load_checkpoint(path)
    if header.get("kind") != "augmenter":
        raise ValueError(f"{path} is not an augmenter checkpoint")
    aug = Augmenter(header["d"], header["s_idx"], AugmenterConfig(**header["config"]))
    gnn.load_module_state(aug, tensors)
    aug.eval()
    aug.trained = True
    return aug
