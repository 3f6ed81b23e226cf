"""Differentiable layers on torch (float64), Adam, gradient checking and checkpoints.

All randomness (initialization, dropout, reparameterization noise) is drawn
from explicit ``torch.Generator`` objects so a fixed seed reproduces a run
bit for bit on one thread.
"""
from __future__ import annotations

import json
import math
import struct
from typing import Callable, Iterable, Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonFiniteError

DTYPE = torch.float64


def generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) % (2**63))
    return g


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


def check_finite(t: torch.Tensor, op: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteError(op)
    return t


def glorot(fan_in: int, fan_out: int, gen: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(fan_in, fan_out, generator=gen, dtype=DTYPE) * 2 - 1) * bound


def dropout(x: torch.Tensor, rate: float, gen: Optional[torch.Generator], training: bool,
            share_dim: Optional[int] = None) -> torch.Tensor:
    """Inverted dropout; with ``share_dim`` one mask is broadcast along that axis."""
    if not training or rate <= 0:
        return x
    shape = list(x.shape)
    if share_dim is not None:
        shape[share_dim] = 1
    keep = torch.empty(shape, dtype=DTYPE).bernoulli_(1.0 - rate, generator=gen)
    return x * keep / (1.0 - rate)


# ---------------------------------------------------------------------------
# graph propagation on dense (batched) local adjacency


def gcn_norm(adj: torch.Tensor) -> torch.Tensor:
    """D^-1/2 (A + I) D^-1/2 for (..., k, k) adjacency."""
    k = adj.shape[-1]
    a = adj + torch.eye(k, dtype=adj.dtype)
    d = a.sum(-1).rsqrt()
    return d.unsqueeze(-1) * a * d.unsqueeze(-2)


def mean_norm(adj: torch.Tensor) -> torch.Tensor:
    """Row-normalized adjacency; rows of isolated nodes stay zero."""
    deg = adj.sum(-1, keepdim=True)
    return adj / deg.clamp_min(1.0)


def gcn_layer(h, adj, weight, bias=None, activation: bool = True, norm=None):
    """ReLU(D^-1/2 (A+I) D^-1/2 H W). ``norm`` may pass a precomputed normalized adjacency."""
    if h.shape[-1] != weight.shape[0]:
        raise ValueError(f"shape mismatch: H has {h.shape[-1]} columns, W has {weight.shape[0]} rows")
    if adj.shape[-1] != h.shape[-2] or adj.shape[-2] != h.shape[-2]:
        raise ValueError(f"shape mismatch: adjacency {tuple(adj.shape)} vs H {tuple(h.shape)}")
    a = gcn_norm(adj) if norm is None else norm
    out = a @ (h @ weight)
    if bias is not None:
        out = out + bias
    return torch.relu(out) if activation else out


def sage_mean_layer(h, adj, w_self, w_neigh, bias=None, activation: bool = True, norm=None):
    """ReLU(H W_self + mean_{j in N(i)} H_j W_neigh); empty neighbourhoods contribute zero."""
    if h.shape[-1] != w_self.shape[0] or h.shape[-1] != w_neigh.shape[0]:
        raise ValueError("shape mismatch between H and SAGE weights")
    if adj.shape[-1] != h.shape[-2]:
        raise ValueError(f"shape mismatch: adjacency {tuple(adj.shape)} vs H {tuple(h.shape)}")
    a = mean_norm(adj) if norm is None else norm
    out = h @ w_self + a @ (h @ w_neigh)
    if bias is not None:
        out = out + bias
    return torch.relu(out) if activation else out


def cosine_distance(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Row-wise 1 - cos(u, v). Zero rows are an error, cosine is undefined there."""
    nu, nv = u.norm(dim=-1), v.norm(dim=-1)
    if bool((nu == 0).any() or (nv == 0).any()):
        raise ValueError("zero-norm representation: cosine distance undefined")
    return 1.0 - (u * v).sum(-1) / (nu * nv)


def gaussian_kl(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)) summed over the last axis."""
    return 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(-1)


# ---------------------------------------------------------------------------
# modules


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, gen: torch.Generator, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(glorot(d_in, d_out, gen))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE)) if bias else None

    def forward(self, x):
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class GraphConv(nn.Module):
    """One GCN or GraphSAGE-mean layer over dense local adjacency."""

    def __init__(self, kind: str, d_in: int, d_out: int, gen: torch.Generator):
        super().__init__()
        if kind not in ("gcn", "sage"):
            raise ValueError(f"unknown layer kind {kind!r}")
        self.kind = kind
        self.weight = nn.Parameter(glorot(d_in, d_out, gen))
        if kind == "sage":
            self.weight_neigh = nn.Parameter(glorot(d_in, d_out, gen))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE))

    def forward(self, h, adj, activation=True, norm=None):
        if self.kind == "gcn":
            return gcn_layer(h, adj, self.weight, self.bias, activation, norm)
        return sage_mean_layer(h, adj, self.weight, self.weight_neigh, self.bias, activation, norm)

    def normalize(self, adj):
        return gcn_norm(adj) if self.kind == "gcn" else mean_norm(adj)

    def forward_row(self, h, norm, row: int = 0):
        """Output of the (linear) layer for a single node ``row`` only."""
        agg = norm[..., row, :].unsqueeze(-2) @ h
        if self.kind == "gcn":
            out = agg @ self.weight
        else:
            out = h[..., row:row + 1, :] @ self.weight + agg @ self.weight_neigh
        return (out + self.bias).squeeze(-2)


class SubgraphEncoder(nn.Module):
    """Two graph layers; hidden layer ReLU + dropout, output layer linear."""

    def __init__(self, kind: str, d_in: int, d_hidden: int, d_out: int, gen: torch.Generator,
                 dropout_rate: float = 0.5):
        super().__init__()
        self.conv1 = GraphConv(kind, d_in, d_hidden, gen)
        self.conv2 = GraphConv(kind, d_hidden, d_out, gen)
        self.dropout_rate = dropout_rate

    def forward(self, x, adj, gen=None):
        norm = self.conv1.normalize(adj)
        h = self.conv1(x, adj, activation=True, norm=norm)
        h = dropout(h, self.dropout_rate, gen, self.training)
        return self.conv2(h, adj, activation=False, norm=norm)

    def central(self, x, adj, gen=None, row: int = 0, share_dim: Optional[int] = None):
        """Equivalent to ``forward(x, adj)[..., row, :]`` without computing the other rows.

        ``share_dim`` reuses one dropout mask along a batch axis (Siamese passes).
        """
        norm = self.conv1.normalize(adj)
        h = self.conv1(x, adj, activation=True, norm=norm)
        h = dropout(h, self.dropout_rate, gen, self.training, share_dim)
        return self.conv2.forward_row(h, norm, row)


class MLP2(nn.Module):
    """Linear -> BatchNorm -> ReLU -> Linear, producing one logit per row."""

    def __init__(self, d_in: int, d_hidden: int, gen: torch.Generator, d_out: int = 1):
        super().__init__()
        self.fc1 = Linear(d_in, d_hidden, gen)
        self.bn = nn.BatchNorm1d(d_hidden, dtype=DTYPE)
        self.fc2 = Linear(d_hidden, d_out, gen)

    def forward(self, z):
        if self.training and z.shape[0] < 2:
            raise ValueError("batch-norm in train mode needs at least 2 rows")
        h = torch.relu(self.bn(self.fc1(z)))
        out = self.fc2(h)
        return out.squeeze(-1) if out.shape[-1] == 1 else out


def mlp2(z, params: dict, training: bool = False, running: Optional[dict] = None, eps: float = 1e-5):
    """Functional form of :class:`MLP2` for gradient checks.

    ``params`` holds ``w1, b1, gamma, beta, w2, b2``; in eval mode ``running``
    supplies ``mean`` and ``var``.
    """
    h = z @ params["w1"] + params["b1"]
    if training:
        if z.shape[0] < 2:
            raise ValueError("batch-norm in train mode needs at least 2 rows")
        mean, var = h.mean(0), h.var(0, unbiased=False)
    else:
        mean, var = running["mean"], running["var"]
    h = (h - mean) / torch.sqrt(var + eps) * params["gamma"] + params["beta"]
    out = torch.relu(h) @ params["w2"] + params["b2"]
    return out.squeeze(-1) if out.shape[-1] == 1 else out


# ---------------------------------------------------------------------------
# differentiation helpers


def forward_backward(fn: Callable[[], torch.Tensor], params: Iterable[torch.Tensor], name: str = "loss"):
    """Evaluate scalar ``fn()`` and its gradients with respect to ``params``."""
    params = list(params)
    out = check_finite(fn(), name)
    grads = torch.autograd.grad(out, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    return out, grads


def finite_difference_grad(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, h: float = 1e-5):
    """Central-difference gradient of scalar ``fn`` at ``x`` (no autograd involved)."""
    x = x.detach().clone()
    flat = x.view(-1)
    grad = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(fn(x))
            flat[i] = orig - h
            fm = float(fn(x))
            flat[i] = orig
            grad[i] = (fp - fm) / (2 * h)
    return grad.view_as(x)


def relative_error(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-12) -> float:
    """``|a - b| / max(|a|, |b|, floor)``; the floor keeps identically-zero gradients from dividing round-off by round-off."""
    num = (a - b).norm().item()
    den = max(a.norm().item(), b.norm().item(), floor)
    return num / den


# ---------------------------------------------------------------------------
# Adam with L2 folded into the loss gradient


class Adam:
    """Adam over a fixed list of tensors.

    ``weight_decay`` is the coefficient of ``mu * ||theta||^2`` added to the
    loss, so it contributes ``2 * mu * theta`` to the gradient before the
    moment updates (coupled L2, not decoupled decay).
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1, b2 = self.betas
        with torch.no_grad():
            for p, g, m, v in zip(self.params, grads, self.m, self.v):
                if g is None:
                    continue
                if self.weight_decay:
                    g = g + 2.0 * self.weight_decay * p
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).addcmul_(g, g, value=1 - b2)
                m_hat = m / (1 - b1 ** self.t)
                v_hat = v / (1 - b2 ** self.t)
                p.sub_(self.lr * m_hat / (v_hat.sqrt() + self.eps))


def adam_step(params, grads, state: Optional[Adam] = None, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
              weight_decay=0.0) -> Adam:
    opt = state or Adam(params, lr, betas, eps, weight_decay)
    opt.step(grads)
    return opt


def l2_penalty(params) -> torch.Tensor:
    return sum((p * p).sum() for p in params)


# ---------------------------------------------------------------------------
# checkpoints: JSON header line, then (name, shape, float64 values) records

_CKPT_MAGIC = b"GCFCKPT1"


def save_checkpoint(path: str, tensors: dict, header: Optional[dict] = None) -> None:
    head = json.dumps(header or {}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<q", len(head)))
        fh.write(head)
        fh.write(struct.pack("<q", len(tensors)))
        for name, t in tensors.items():
            arr = np.ascontiguousarray(t.detach().cpu().numpy() if torch.is_tensor(t) else t, dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<q", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str):
    with open(path, "rb") as fh:
        if fh.read(8) != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        (hlen,) = struct.unpack("<q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        (count,) = struct.unpack("<q", fh.read(8))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<q", fh.read(8))
            name = fh.read(nlen).decode()
            (ndim,) = struct.unpack("<q", fh.read(8))
            shape = struct.unpack(f"<{ndim}q", fh.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            tensors[name] = torch.from_numpy(arr.copy())
    return header, tensors


def module_state(module: nn.Module) -> dict:
    """Parameters and buffers (e.g. batch-norm running stats) as float64 tensors."""
    out = {}
    for k, v in module.state_dict().items():
        if v.dtype == DTYPE:
            out[k] = v
        elif v.is_floating_point() or v.dtype in (torch.int64, torch.int32):
            out[k] = v.to(DTYPE)
    return out


def load_module_state(module: nn.Module, tensors: dict) -> None:
    ref = module.state_dict()
    state = {k: tensors[k].to(ref[k].dtype).reshape(ref[k].shape) for k in ref}
    module.load_state_dict(state)
